import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairot.bicausal import LeveledDistribution, level_marginal_wasserstein
from fairot.data import make_dataset
from fairot.disparity import (
    REPORT_FIELDS,
    AggregationMeasure,
    AuditConfig,
    DisparityReport,
    aggregation_weights,
    audit,
    cdd_lp,
    demographic_disparity,
    level_wise_distances,
    weighted_norm,
)
from fairot.errors import InvalidInput, SupportMismatch
from fairot.otcore import Empirical1D
from fairot.synth import SynthConfig, generate_loan, income_table_dataset

E = Empirical1D.from_samples
Q = AggregationMeasure


def bern(q):
    return Empirical1D(np.array([0.0, 1.0]), np.array([1 - q, q]))


def income_table_pair():
    # (share, approval) per income level for male and female applicants
    rows = {0: ((0.6, 0.4), (0.1, 0.2)), 1: ((0.3, 0.6), (0.3, 0.4)), 2: ((0.1, 0.8), (0.6, 0.6))}
    d0 = LeveledDistribution((0, 1, 2), [0, 1, 2], [r[1][0] for r in rows.values()], [bern(r[1][1]) for r in rows.values()], 300)
    d1 = LeveledDistribution((0, 1, 2), [0, 1, 2], [r[0][0] for r in rows.values()], [bern(r[0][1]) for r in rows.values()], 300)
    return d0, d1


def test_level_wise_income_table():
    d0, d1 = income_table_pair()
    dist = level_wise_distances(d0, d1, 1)
    assert all(v == pytest.approx(0.2, abs=1e-12) for v in dist.values())
    one0 = LeveledDistribution((0,), [0.0], [1.0], [E([0.0])])
    one1 = LeveledDistribution((0,), [0.0], [1.0], [E([1.0])])
    assert level_wise_distances(one0, one1, 2)[0] == 1.0
    assert all(v == 0 for v in level_wise_distances(d0, d0).values())


def test_cdd_lp_examples():
    d0, d1 = income_table_pair()
    for q in Q:
        assert cdd_lp(d0, d1, q) == pytest.approx(0.2, abs=1e-12)
        assert cdd_lp(d0, d0, q) == 0.0
    dist = {0: 0.1, 1: 0.3}
    w = {0: 0.5, 1: 0.5}
    assert weighted_norm(dist, w, 1) == pytest.approx(0.2)
    assert weighted_norm(dist, w, 2) == pytest.approx(0.22360679774997896)


def test_aggregation_weights():
    d0, d1 = income_table_pair()
    pl = aggregation_weights(d0, d1, "pl")
    assert [pl[k] for k in range(3)] == pytest.approx([0.35, 0.3, 0.35])
    avg = aggregation_weights(d0, d1, Q.AVERAGED_CONDITIONAL)
    assert [avg[k] for k in range(3)] == pytest.approx([0.35, 0.3, 0.35])
    d0u = LeveledDistribution((0, 1), [0, 1], [0.5, 0.5], [E([0.0]), E([1.0])], 10)
    d1u = LeveledDistribution((0, 1), [0, 1], [0.8, 0.2], [E([0.0]), E([1.0])], 30)
    pl = aggregation_weights(d0u, d1u, Q.MARGINAL_PL)
    assert pl[0] == pytest.approx((5 + 24) / 40)
    avg = aggregation_weights(d0u, d1u, Q.AVERAGED_CONDITIONAL)
    assert avg[0] == pytest.approx(0.65)
    with pytest.raises(InvalidInput):
        AggregationMeasure.parse("median")
    assert AggregationMeasure.parse("UNIFORM") is Q.UNIFORM


def test_demographic_disparity_examples():
    assert demographic_disparity(bern(0.5), bern(0.5)) == 0.0
    assert demographic_disparity(bern(0.7), bern(0.3)) == pytest.approx(0.4)


def test_support_mismatch():
    d0 = LeveledDistribution((0, 1), [0, 1], [0.5, 0.5], [E([0.0]), E([1.0])])
    d1 = LeveledDistribution((0, 2), [0, 2], [0.5, 0.5], [E([0.0]), E([1.0])])
    with pytest.raises(SupportMismatch):
        cdd_lp(d0, d1)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_bracketing_and_equal_marginal_coincidence(seed):
    rng = np.random.default_rng(seed)
    L = int(rng.integers(1, 5))
    outs = lambda: [E(rng.random(rng.integers(1, 6))) for _ in range(L)]  # noqa: E731
    w0, w1 = rng.dirichlet(np.ones(L)), rng.dirichlet(np.ones(L))
    d0 = LeveledDistribution(tuple(range(L)), np.arange(L), w0, outs(), 50)
    d1 = LeveledDistribution(tuple(range(L)), np.arange(L), w1, outs(), 70)
    D = level_wise_distances(d0, d1)
    for q in Q:
        v = cdd_lp(d0, d1, q)
        assert min(D.values()) - 1e-12 <= v <= max(D.values()) + 1e-12
    u = np.full(L, 1.0 / L)
    e0 = LeveledDistribution(d0.levels, d0.coords, u, d0.outputs, 40)
    e1 = LeveledDistribution(d1.levels, d1.coords, u, d1.outputs, 40)
    vals = [cdd_lp(e0, e1, q) for q in Q]
    assert vals[0] == vals[1] == vals[2]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 10.0))
def test_scale_equivariance_p1(seed, s):
    rng = np.random.default_rng(seed)
    n = 60
    L = rng.integers(0, 3, n)
    A = np.r_[np.zeros(n // 2), np.ones(n // 2)].astype(int)
    L[:3], L[n // 2 : n // 2 + 3] = [0, 1, 2], [0, 1, 2]
    y = rng.random(n)
    ds = make_dataset(np.zeros((n, 0)), A, L, (y > 0.5).astype(float))
    r1 = audit(ds, y)
    r2 = audit(ds, s * y)
    for f in ("cdd_lp_uniform", "cdd_lp_pl", "cdd_lp_avg", "dd"):
        assert getattr(r2, f) == pytest.approx(s * getattr(r1, f), rel=1e-9, abs=1e-12)


def test_weak_union_independent_outputs():
    # (L, f) independent of A by construction: every (level, output) cell split evenly between groups
    rng = np.random.default_rng(3)
    cells = [(l, rng.random()) for l in range(4) for _ in range(5)]
    L = np.array([c[0] for c in cells] * 2)
    y = np.array([c[1] for c in cells] * 2)
    A = np.r_[np.zeros(len(cells)), np.ones(len(cells))].astype(int)
    ds = make_dataset(np.zeros((L.size, 0)), A, L, np.zeros(L.size))
    rep = audit(ds, y)
    for f in REPORT_FIELDS:
        assert getattr(rep, f) == pytest.approx(0.0, abs=1e-12), f
    rep = audit(ds, y, AuditConfig(use_exact_oracles=False, epsilon=1e-4))
    assert rep.cdd_wass < 1e-3


def test_audit_income_table():
    ds = income_table_dataset()
    rep = audit(ds, ds.target)
    assert rep.dd == pytest.approx(0.0, abs=1e-9)
    assert rep.cdd_lp_uniform == pytest.approx(0.2, abs=1e-9)
    assert rep.metadata["power_form"] is True
    assert set(rep.per_level_distances) == {"low", "medium", "high"}


def test_audit_constant_outputs():
    ds = income_table_dataset()
    rep = audit(ds, np.full(len(ds), 0.3))
    for f in REPORT_FIELDS:
        if f != "cdd_wass":
            assert getattr(rep, f) == pytest.approx(0.0, abs=1e-12), f
    # the raw bi-causal value keeps the cost of matching unequal level mixes
    d0, d1 = income_table_pair()
    assert rep.cdd_wass == pytest.approx(rep.metadata["C"] * level_marginal_wasserstein(d0, d1, 2), rel=1e-12)
    even = make_dataset(np.zeros((8, 0)), [0, 1] * 4, [0, 0, 1, 1, 2, 2, 3, 3], np.zeros(8))
    rep = audit(even, np.full(8, 0.7))
    assert all(getattr(rep, f) == 0.0 for f in REPORT_FIELDS)


def test_audit_loan_dataset():
    ds = generate_loan(SynthConfig(r_m=0.5, seed=4), 0.1)
    rep = audit(ds, ds.target)
    assert rep.cdd_lp_uniform == pytest.approx(0.2, abs=0.02)


def test_audit_unshared_levels():
    L = np.array([0, 1, 0, 2])
    A = np.array([0, 0, 1, 1])
    ds = make_dataset(np.zeros((4, 0)), A, L, np.zeros(4))
    with pytest.raises(SupportMismatch):
        audit(ds, np.array([0.1, 0.2, 0.3, 0.4]))
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        rep = audit(ds, np.array([0.1, 0.2, 0.3, 0.4]), AuditConfig(drop_unshared_levels=True))
    assert rec and rep.cdd_lp_uniform == pytest.approx(0.2)


def test_audit_rejects_bad_outputs():
    ds = income_table_dataset()
    with pytest.raises(InvalidInput):
        audit(ds, np.zeros(5))
    y = np.zeros(len(ds))
    y[0] = np.nan
    with pytest.raises(InvalidInput):
        audit(ds, y)


def test_report_serialization_round_trip():
    ds = income_table_dataset()
    rep = audit(ds, ds.target)
    back = DisparityReport.from_dict(json.loads(rep.to_json()))
    assert back == rep
    lines = rep.to_csv().splitlines()
    assert lines[0].split(",")[: len(REPORT_FIELDS)] == list(REPORT_FIELDS)
    assert len(lines) == 2
