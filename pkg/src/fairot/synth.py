"""Synthetic data: the two-group loan generator, its closed forms, and a small biased benchmark.

Throughout, A=1 marks male applicants and the target is the approve bit.
For male share r and approval gap delta the population cells are

    a = r (0.5 + delta)        male, approved
    b = (1 - r) (0.5 - delta)  female, approved
    c = r (0.5 - delta)        male, rejected
    d = (1 - r) (0.5 + delta)  female, rejected
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from ._parallel import pmap
from .bicausal import BcdConfig, LeveledDistribution, bcd_nested_sinkhorn
from .data import Schema, TabularDataset, from_records, make_dataset
from .dcfr import DiscreteJoint, dcfr_closed_form
from .disparity import AggregationMeasure, cdd_lp
from .errors import DegenerateCondition, InvalidInput

DEFAULT_RM_GRID = (0.5, 0.7, 0.9)
DEFAULT_DELTA_GRID = tuple(round(0.05 * k, 2) for k in range(1, 9))

SWEEP_COLUMNS = (
    "r_m",
    "delta",
    "n",
    "cdd_empirical",
    "r_dcfr_empirical",
    "dcfr_prop_empirical",
    "fairbit_reg_value",
    "cdd_closed_form",
    "r_dcfr_closed_form",
    "dcfr_prop_closed_form",
    "sigma_cdd",
    "sigma_r_dcfr",
)


@dataclass(frozen=True)
class SynthConfig:
    r_m: float = 0.5
    delta_grid: tuple = DEFAULT_DELTA_GRID
    n: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.r_m < 1.0:
            raise InvalidInput("male share r_m must lie in (0, 1)")
        for d in self.delta_grid:
            if not 0.0 <= d < 0.5:
                raise InvalidInput(f"delta {d} outside [0, 0.5)")
        if self.n < 1:
            raise InvalidInput("n must be positive")


def _check(r_m, delta):
    if not 0.0 < r_m < 1.0:
        raise DegenerateCondition("r_m must lie strictly between 0 and 1")
    if not 0.0 <= delta < 0.5:
        raise InvalidInput(f"delta {delta} outside [0, 0.5)")


def loan_cells(r_m, delta):
    """Population masses (a, b, c, d) of the four (group, decision) cells."""
    _check(r_m, delta)
    return (
        r_m * (0.5 + delta),
        (1 - r_m) * (0.5 - delta),
        r_m * (0.5 - delta),
        (1 - r_m) * (0.5 + delta),
    )


def closed_form_metrics(r_m, delta):
    """(CDD, R_DCFR) of the loan population.

    CDD is the approval-rate gap a/(a+c) - b/(b+d) = 2 delta; R_DCFR is the
    gap in the male share among approved and rejected applicants,
    a/(a+b) - c/(c+d).
    """
    a, b, c, d = loan_cells(r_m, delta)
    return a / (a + c) - b / (b + d), a / (a + b) - c / (c + d)


def closed_form_dcfr_expectation(r_m, delta):
    """E[(P(A=1|Z) - P(A=1))_+] of the loan population.

    Equals P(approve) P(reject) times the R_DCFR of :func:`closed_form_metrics`.
    """
    a, b, c, d = loan_cells(r_m, delta)
    j = DiscreteJoint.from_cells({(1, 0, 1): a, (1, 0, 0): b, (0, 0, 1): c, (0, 0, 0): d})
    return dcfr_closed_form(j)


def generate_loan(cfg: SynthConfig, delta, rng=None) -> TabularDataset:
    """n applicants with one trivial level and no other features.

    A ~ Bernoulli(r_m); approve | male ~ Bernoulli(0.5 + delta), approve |
    female ~ Bernoulli(0.5 - delta).
    """
    _check(cfg.r_m, delta)
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    A = (rng.random(cfg.n) < cfg.r_m).astype(np.int8)
    rate = np.where(A == 1, 0.5 + delta, 0.5 - delta)
    y = (rng.random(cfg.n) < rate).astype(float)
    return make_dataset(np.empty((cfg.n, 0)), A, np.zeros(cfg.n, dtype=np.int64), y)


def empirical_loan_metrics(ds: TabularDataset, fairbit_cfg: BcdConfig | None = None):
    """Empirical CDD, R_DCFR (both forms) and the FairBiT value on the approve outcomes."""
    A = ds.sensitive
    y = ds.target
    if not ((A == 0).any() and (A == 1).any()):
        raise DegenerateCondition("sample lacks one of the groups")
    d0 = LeveledDistribution.from_samples(ds.levels[A == 0], y[A == 0])
    d1 = LeveledDistribution.from_samples(ds.levels[A == 1], y[A == 1])
    cdd = cdd_lp(d1, d0, AggregationMeasure.UNIFORM, 1, 1)
    a = np.sum((A == 1) & (y == 1))
    b = np.sum((A == 0) & (y == 1))
    c = np.sum((A == 1) & (y == 0))
    d = np.sum((A == 0) & (y == 0))
    if a + b == 0 or c + d == 0:
        raise DegenerateCondition("sample has no approved or no rejected applicants")
    r_dcfr = a / (a + b) - c / (c + d)
    prop = dcfr_closed_form(DiscreteJoint.from_samples(y.astype(int), ds.levels, A))
    bcd = bcd_nested_sinkhorn(d0, d1, fairbit_cfg or BcdConfig(p=1))
    return float(cdd), float(r_dcfr), float(prop), float(bcd.value)


def binomial_sigmas(r_m, delta, n):
    """Sampling standard deviations of the empirical CDD and R_DCFR at sample size n."""
    a, b, c, d = loan_cells(r_m, delta)
    pm, pf = 0.5 + delta, 0.5 - delta
    s_cdd = math.sqrt(pm * (1 - pm) / (n * r_m) + pf * (1 - pf) / (n * (1 - r_m)))
    q1, q0 = a / (a + b), c / (c + d)
    s_r = math.sqrt(q1 * (1 - q1) / (n * (a + b)) + q0 * (1 - q0) / (n * (c + d)))
    return s_cdd, s_r


def _sweep_cell(job):
    r_m, delta, n, seed, idx, p = job
    cfg = SynthConfig(r_m=r_m, delta_grid=(delta,), n=n, seed=seed)
    ds = generate_loan(cfg, delta, np.random.default_rng([seed, idx]))
    cdd, r, prop, fb = empirical_loan_metrics(ds, BcdConfig(p=p))
    cdd_cf, r_cf = closed_form_metrics(r_m, delta)
    s_cdd, s_r = binomial_sigmas(r_m, delta, n)
    return {
        "r_m": r_m,
        "delta": delta,
        "n": n,
        "cdd_empirical": cdd,
        "r_dcfr_empirical": r,
        "dcfr_prop_empirical": prop,
        "fairbit_reg_value": fb,
        "cdd_closed_form": cdd_cf,
        "r_dcfr_closed_form": r_cf,
        "dcfr_prop_closed_form": closed_form_dcfr_expectation(r_m, delta),
        "sigma_cdd": s_cdd,
        "sigma_r_dcfr": s_r,
    }


def loan_sweep(
    rm_grid=DEFAULT_RM_GRID, delta_grid=DEFAULT_DELTA_GRID, n=10_000, seed=0, p=1, n_jobs=None
) -> list:
    """One row per (r_m, delta) cell, ordered by r_m then delta.

    Cell k draws its sample from ``default_rng([seed, k])`` so results do not
    depend on the worker count.
    """
    jobs = []
    for r_m in rm_grid:
        for delta in delta_grid:
            _check(r_m, delta)
            jobs.append((float(r_m), float(delta), int(n), int(seed), len(jobs), p))
    return pmap(_sweep_cell, jobs, n_jobs)


def fit_slope(x, y):
    """Least-squares slope of y on x through the origin."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    den = float(x @ x)
    if den == 0:
        raise DegenerateCondition("cannot fit a slope to all-zero x")
    return float(x @ y) / den


def sweep_slopes(rows, x="r_dcfr_empirical", y="cdd_empirical"):
    """r_m -> fitted slope of column ``y`` against column ``x``."""
    out = {}
    for r_m in sorted({r["r_m"] for r in rows}):
        sel = [r for r in rows if r["r_m"] == r_m]
        out[r_m] = fit_slope([r[x] for r in sel], [r[y] for r in sel])
    return out


def write_sweep_csv(rows, fh):
    w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


# ---------------------------------------------------------------------------
# fixed tables and a biased benchmark for training
# ---------------------------------------------------------------------------

# income level -> (share of male applicants, male approval, share of female applicants, female approval)
INCOME_TABLE = {
    "high": (0.10, 0.80, 0.60, 0.60),
    "medium": (0.30, 0.60, 0.30, 0.40),
    "low": (0.60, 0.40, 0.10, 0.20),
}
INCOME_TABLE_COORDS = {"low": 0.0, "medium": 1.0, "high": 2.0}


def income_table_rows(per_group=300):
    """Exact integer rows (sex, income, approve) of the two-group income table.

    ``per_group`` must make every count integral; any multiple of 50 works.
    """
    rows = []
    for level, (sm, am, sf, af) in INCOME_TABLE.items():
        for sex, share, rate in (("male", sm, am), ("female", sf, af)):
            n = share * per_group
            k = rate * n
            if abs(n - round(n)) > 1e-9 or abs(k - round(k)) > 1e-9:
                raise InvalidInput("per_group does not give integral counts")
            n, k = int(round(n)), int(round(k))
            rows += [(sex, level, 1)] * k + [(sex, level, 0)] * (n - k)
    return rows


INCOME_TABLE_SCHEMA = Schema(
    sensitive="sex",
    target="approve",
    legitimate=("income",),
    features=(),
    sensitive_positive="male",
    coordinates={"income": INCOME_TABLE_COORDS},
)


def write_income_table_csv(path, per_group=300):
    """The income table as a CSV with columns sex, income, approve."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sex", "income", "approve"])
        for r in income_table_rows(per_group):
            w.writerow(r)


def write_income_table_schema(path):
    """JSON schema matching :func:`write_income_table_csv`."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(INCOME_TABLE_SCHEMA.to_dict(), fh, indent=2)
        fh.write("\n")


def income_table_dataset(per_group=300) -> TabularDataset:
    rows = [[s, lvl, str(a)] for s, lvl, a in income_table_rows(per_group)]
    return from_records(["sex", "income", "approve"], rows, INCOME_TABLE_SCHEMA, source="income_table")


@dataclass(frozen=True)
class BiasedConfig:
    """Generator of a dataset whose labels depend on A within every level.

    Features are a noisy copy of the level coordinate, a proxy for A, and
    pure noise.  ``label_bias`` is the logit shift between the groups at a
    fixed level; ``level_skew`` tilts P(L | A) so levels and groups
    correlate.
    """

    n: int = 2000
    n_levels: int = 4
    label_bias: float = 1.5
    level_effect: float = 2.0
    level_skew: float = 0.5
    proxy_noise: float = 0.3
    seed: int = 0


def generate_biased(cfg: BiasedConfig | None = None) -> TabularDataset:
    cfg = cfg or BiasedConfig()
    if cfg.n_levels < 1 or cfg.n < 4 * cfg.n_levels:
        raise InvalidInput("need n >= 4 * n_levels")
    rng = np.random.default_rng(cfg.seed)
    K = cfg.n_levels
    A = (rng.random(cfg.n) < 0.5).astype(np.int8)
    t = np.linspace(0.0, 1.0, K) if K > 1 else np.zeros(1)
    w1 = 1.0 + cfg.level_skew * (t - 0.5)
    w0 = 1.0 - cfg.level_skew * (t - 0.5)
    L = np.empty(cfg.n, dtype=np.int64)
    for a, w in ((0, w0), (1, w1)):
        idx = np.flatnonzero(A == a)
        L[idx] = rng.choice(K, size=idx.size, p=w / w.sum())
    # guarantee a shared support
    for a in (0, 1):
        idx = np.flatnonzero(A == a)
        for k in range(K):
            if not np.any(L[idx] == k):
                L[idx[k]] = k
    legit = t[L] + 0.05 * rng.standard_normal(cfg.n)
    proxy = A + cfg.proxy_noise * rng.standard_normal(cfg.n)
    noise = rng.standard_normal(cfg.n)
    logit = cfg.level_effect * (2 * t[L] - 1) + cfg.label_bias * (2 * A - 1)
    y = (rng.random(cfg.n) < 1.0 / (1.0 + np.exp(-logit))).astype(float)
    X = np.column_stack((legit, proxy, noise))
    return make_dataset(X, A, L, y, level_coords=np.arange(K, dtype=float), feature_names=("legit", "proxy", "noise"))
