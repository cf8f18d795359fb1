import io
import json
import math

import pytest

from fairot.data import Schema, load_csv
from fairot.disparity import audit
from fairot.errors import DegenerateCondition, InvalidInput
from fairot.synth import (
    DEFAULT_DELTA_GRID,
    SWEEP_COLUMNS,
    BiasedConfig,
    SynthConfig,
    binomial_sigmas,
    closed_form_dcfr_expectation,
    closed_form_metrics,
    empirical_loan_metrics,
    fit_slope,
    generate_biased,
    generate_loan,
    income_table_rows,
    loan_cells,
    loan_sweep,
    sweep_slopes,
    write_income_table_csv,
    write_income_table_schema,
    write_sweep_csv,
)


def test_closed_form_examples():
    assert closed_form_metrics(0.5, 0.1) == pytest.approx((0.2, 0.2), abs=1e-15)
    cdd, r = closed_form_metrics(0.9, 0.1)
    assert cdd == pytest.approx(0.2, abs=1e-15)
    # 0.54/0.58 - 0.36/0.42
    assert r == pytest.approx(0.0738916256157636, abs=1e-15)
    assert closed_form_metrics(0.3, 0.0) == (0.0, 0.0)
    assert sum(loan_cells(0.7, 0.2)) == pytest.approx(1.0)
    for bad in (0.0, 1.0):
        with pytest.raises(DegenerateCondition):
            closed_form_metrics(bad, 0.1)
    with pytest.raises(InvalidInput):
        closed_form_metrics(0.5, 0.5)


def test_cdd_is_twice_delta():
    for r_m in (0.2, 0.5, 0.8):
        for delta in DEFAULT_DELTA_GRID:
            assert closed_form_metrics(r_m, delta)[0] == pytest.approx(2 * delta, abs=1e-14)


def test_expectation_form_is_scaled_table_form():
    for r_m in (0.3, 0.5, 0.9):
        for delta in (0.05, 0.2):
            a, b, c, d = loan_cells(r_m, delta)
            table = closed_form_metrics(r_m, delta)[1]
            assert closed_form_dcfr_expectation(r_m, delta) == pytest.approx((a + b) * (c + d) * table, abs=1e-15)


def test_generate_loan_deterministic():
    cfg = SynthConfig(r_m=0.7, n=500, seed=9)
    a, b = generate_loan(cfg, 0.2), generate_loan(cfg, 0.2)
    assert a.equals(b) and len(a) == 500 and a.n_levels == 1
    assert not a.equals(generate_loan(SynthConfig(r_m=0.7, n=500, seed=10), 0.2))


def test_generate_loan_zero_delta():
    n = 10_000
    ds = generate_loan(SynthConfig(r_m=0.5, n=n, seed=1), 0.0)
    y, A = ds.target, ds.sensitive
    assert abs(y[A == 1].mean() - y[A == 0].mean()) < 3 / math.sqrt(n)


def test_generate_loan_recovers_gap():
    ds = generate_loan(SynthConfig(r_m=0.5, seed=2), 0.1)
    cdd, r, prop, fb = empirical_loan_metrics(ds)
    assert cdd == pytest.approx(0.2, abs=0.02)
    assert r == pytest.approx(0.2, abs=0.02)
    assert fb == pytest.approx(cdd, abs=1e-5)
    assert audit(ds, ds.target).cdd_lp_uniform == pytest.approx(cdd, abs=1e-12)


def test_config_validation():
    with pytest.raises(InvalidInput):
        SynthConfig(r_m=1.0)
    with pytest.raises(InvalidInput):
        SynthConfig(delta_grid=(0.6,))
    with pytest.raises(InvalidInput):
        SynthConfig(n=0)


@pytest.fixture(scope="module")
def sweep():
    return loan_sweep(n=10_000, seed=0)


def test_sweep_shape_and_determinism(sweep):
    assert len(sweep) == 24
    assert [(r["r_m"], r["delta"]) for r in sweep[:2]] == [(0.5, 0.05), (0.5, 0.1)]
    assert all(tuple(r) == SWEEP_COLUMNS for r in sweep)
    small = loan_sweep((0.6,), (0.1, 0.3), n=300, seed=5)
    assert loan_sweep((0.6,), (0.1, 0.3), n=300, seed=5, n_jobs=2) == small


def test_sweep_matches_closed_form(sweep):
    bound = 4 * math.sqrt(0.25 / 10_000)
    for r in sweep:
        assert abs(r["cdd_empirical"] - r["cdd_closed_form"]) < bound
        assert abs(r["r_dcfr_empirical"] - r["r_dcfr_closed_form"]) < bound
        assert abs(r["dcfr_prop_empirical"] - r["dcfr_prop_closed_form"]) < bound
        assert abs(r["fairbit_reg_value"] - r["cdd_empirical"]) < 1e-5


def test_sweep_within_group_sampling_noise():
    # the per-group binomial deviation is the honest scale; it exceeds 0.25/n when a group is small
    rows = []
    for seed in range(4):
        rows += loan_sweep((0.5, 0.9), (0.05, 0.25, 0.4), n=2000, seed=seed)
    for r in rows:
        s_cdd, s_r = binomial_sigmas(r["r_m"], r["delta"], r["n"])
        assert abs(r["cdd_empirical"] - r["cdd_closed_form"]) < 4 * s_cdd
        assert abs(r["r_dcfr_empirical"] - r["r_dcfr_closed_form"]) < 4 * s_r


def test_sweep_slopes(sweep):
    slopes = sweep_slopes(sweep)
    assert slopes[0.5] < slopes[0.7] < slopes[0.9]
    for r_m, s in slopes.items():
        sel = [r for r in sweep if r["r_m"] == r_m]
        closed = fit_slope([r["r_dcfr_closed_form"] for r in sel], [r["cdd_closed_form"] for r in sel])
        assert s == pytest.approx(closed, rel=0.05)
    fb = sweep_slopes(sweep, "cdd_empirical", "fairbit_reg_value")
    assert all(abs(v - 1) < 0.05 for v in fb.values())


def test_sweep_csv(sweep):
    buf = io.StringIO()
    write_sweep_csv(sweep[:3], buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == ",".join(SWEEP_COLUMNS)
    assert len(lines) == 4
    assert float(lines[1].split(",")[3]) == sweep[0]["cdd_empirical"]


def test_fit_slope():
    assert fit_slope([1, 2, 3], [2, 4, 6]) == pytest.approx(2.0)
    with pytest.raises(DegenerateCondition):
        fit_slope([0, 0], [1, 2])


def test_income_table_csv_and_schema(tmp_path):
    rows = income_table_rows()
    assert len(rows) == 600
    assert sum(1 for r in rows if r[0] == "male") == 300
    with pytest.raises(InvalidInput):
        income_table_rows(7)
    write_income_table_csv(tmp_path / "t1.csv")
    write_income_table_schema(tmp_path / "t1.json")
    schema = Schema.from_dict(json.loads((tmp_path / "t1.json").read_text()))
    ds = load_csv(tmp_path / "t1.csv", schema)
    rep = audit(ds, ds.target)
    assert rep.dd == pytest.approx(0.0, abs=1e-9)
    assert rep.cdd_lp_uniform == pytest.approx(0.2, abs=1e-9)


def test_generate_biased():
    cfg = BiasedConfig(n=800, seed=3)
    ds = generate_biased(cfg)
    assert generate_biased(cfg).equals(ds)
    assert len(ds) == 800 and ds.n_levels == 4 and ds.has_common_support()
    assert ds.feature_names == ("legit", "proxy", "noise")
    # labels depend on A inside the levels
    assert audit(ds, ds.target).cdd_lp_uniform > 0.2
    fair = generate_biased(BiasedConfig(n=4000, label_bias=0.0, level_skew=0.0, seed=3))
    assert audit(fair, fair.target).cdd_lp_uniform < 0.1
    with pytest.raises(InvalidInput):
        generate_biased(BiasedConfig(n=10, n_levels=4))
