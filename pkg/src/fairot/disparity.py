"""Disparity measures between the two sensitive groups and the audit report."""

from __future__ import annotations

import csv
import enum
import io
import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .bicausal import (
    BcdConfig,
    LeveledDistribution,
    bcd_nested_sinkhorn,
    check_common_support,
    normalize_bcd,
)
from .data import TabularDataset
from .dcfr import DiscreteJoint, bin_outputs, dcfr_closed_form
from .errors import InvalidInput, SupportMismatch
from .otcore import Empirical1D, SinkhornConfig, exact_wasserstein_1d


class AggregationMeasure(enum.Enum):
    """How the per-level distances are weighted."""

    UNIFORM = "uniform"
    MARGINAL_PL = "pl"
    AVERAGED_CONDITIONAL = "avg"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        for m in cls:
            if value in (m.value, m.name, m.name.lower()):
                return m
        raise InvalidInput(f"unknown aggregation measure {value!r}")


def level_wise_distances(d0: LeveledDistribution, d1: LeveledDistribution, p=1) -> dict:
    """W_p^p between the two groups' outputs at every common level."""
    check_common_support(d0, d1)
    idx1 = d1.index()
    return {
        lvl: exact_wasserstein_1d(p, d0.outputs[k], d1.outputs[idx1[lvl]]) for k, lvl in enumerate(d0.levels)
    }


def aggregation_weights(d0: LeveledDistribution, d1: LeveledDistribution, Q) -> dict:
    """Level -> weight for the given aggregation measure."""
    Q = AggregationMeasure.parse(Q)
    check_common_support(d0, d1)
    idx1 = d1.index()
    L = len(d0.levels)
    if Q is AggregationMeasure.UNIFORM:
        return {lvl: 1.0 / L for lvl in d0.levels}
    w1 = {lvl: d1.level_weights[idx1[lvl]] for lvl in d0.levels}
    if Q is AggregationMeasure.AVERAGED_CONDITIONAL:
        return {lvl: 0.5 * (d0.level_weights[k] + w1[lvl]) for k, lvl in enumerate(d0.levels)}
    if d0.n_samples is None or d1.n_samples is None:
        raise InvalidInput("pooled level frequencies need sample counts on both distributions")
    n0, n1 = d0.n_samples, d1.n_samples
    return {lvl: (n0 * d0.level_weights[k] + n1 * w1[lvl]) / (n0 + n1) for k, lvl in enumerate(d0.levels)}


def weighted_norm(distances: dict, weights: dict, p_norm=1) -> float:
    """(sum_l Q(l) |D(l)|^q)^(1/q)."""
    if p_norm < 1:
        raise InvalidInput("norm order must be >= 1")
    total = sum(weights[lvl] * abs(d) ** p_norm for lvl, d in distances.items())
    return float(total ** (1.0 / p_norm))


def cdd_lp(d0, d1, Q=AggregationMeasure.UNIFORM, p_norm=1, p_inner=1) -> float:
    """Weighted l_p norm of the per-level W_p^p distances."""
    dist = level_wise_distances(d0, d1, p_inner)
    return weighted_norm(dist, aggregation_weights(d0, d1, Q), p_norm)


def demographic_disparity(outputs_a0: Empirical1D, outputs_a1: Empirical1D, p=1) -> float:
    """W_p^p between the marginal output distributions of the two groups."""
    if outputs_a0 is None or outputs_a1 is None or len(outputs_a0) == 0 or len(outputs_a1) == 0:
        raise InvalidInput("both groups need outputs")
    return exact_wasserstein_1d(p, outputs_a0, outputs_a1)


# ---------------------------------------------------------------------------
# audit
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AuditConfig:
    """Orders and solver settings used by :func:`audit`.

    The level-wise and demographic disparities use W_1 and a plain mean
    (``p_lp_inner=1``, ``p_lp_norm=1``, ``p_dd=1``); the bi-causal distance
    uses W_2^2 with a squared level cost (``p_wass=2``).  Exact oracles are
    the default since audits run on one-dimensional outputs where they are
    both fast and free of entropic bias.
    """

    p_lp_inner: int = 1
    p_lp_norm: int = 1
    p_dd: int = 1
    p_wass: int = 2
    C: float | None = None
    epsilon: float | None = None
    use_exact_oracles: bool = True
    dcfr_bins: int = 10
    drop_unshared_levels: bool = False
    n_jobs: int | None = None

    def bcd_config(self):
        sk = SinkhornConfig(epsilon=self.epsilon, p=self.p_wass)
        return BcdConfig(
            C=self.C, p=self.p_wass, inner=sk, outer=sk, use_exact_oracles=self.use_exact_oracles, n_jobs=self.n_jobs
        )


REPORT_FIELDS = (
    "cdd_wass",
    "cdd_wass_normalized",
    "cdd_lp_uniform",
    "cdd_lp_pl",
    "cdd_lp_avg",
    "dd",
    "dcfr",
)


@dataclass(frozen=True)
class DisparityReport:
    """Every disparity of one model on one dataset.

    All distances are in power form (W_p^p, not W_p); ``metadata`` records
    the orders, the penalty C and the solver mode.
    """

    cdd_wass: float
    cdd_wass_normalized: float
    cdd_lp_uniform: float
    cdd_lp_pl: float
    cdd_lp_avg: float
    dd: float
    dcfr: float
    per_level_distances: dict
    metadata: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent, sort_keys=False)

    def csv_header(self):
        return list(REPORT_FIELDS) + ["n", "n_levels", "p_lp", "p_wass", "C", "epsilon"]

    def csv_row(self):
        md = self.metadata
        return [getattr(self, f) for f in REPORT_FIELDS] + [
            md.get("n"),
            md.get("n_levels"),
            md.get("p_lp_inner"),
            md.get("p_wass"),
            md.get("C"),
            md.get("epsilon"),
        ]

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.csv_header())
        w.writerow(["" if v is None else v for v in self.csv_row()])
        return buf.getvalue()

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def leveled_pair(dataset: TabularDataset, outputs, drop_unshared_levels=False):
    """Split outputs by sensitive group into two :class:`LeveledDistribution`."""
    y = np.asarray(outputs, dtype=float).ravel()
    if y.shape[0] != len(dataset):
        raise InvalidInput(f"got {y.shape[0]} outputs for {len(dataset)} rows")
    if not np.all(np.isfinite(y)):
        raise InvalidInput("outputs must be finite")
    lv = dataset.levels
    A = dataset.sensitive
    only0, only1 = dataset.unshared_levels()
    if only0 or only1:
        names0 = [dataset.level_name(k) for k in only0]
        names1 = [dataset.level_name(k) for k in only1]
        if not drop_unshared_levels:
            raise SupportMismatch(
                f"levels seen in only one group: A=0 only {names0}, A=1 only {names1}", names0, names1
            )
        warnings.warn(f"dropping rows of unshared levels {names0 + names1}", stacklevel=3)
        keep = ~np.isin(lv, np.array(only0 + only1, dtype=np.int64))
        lv, A, y = lv[keep], A[keep], y[keep]
    if not ((A == 0).any() and (A == 1).any()):
        raise InvalidInput("both sensitive groups must be present")
    coords = {k: dataset.level_coords[k] for k in range(dataset.n_levels)}
    d0 = LeveledDistribution.from_samples(lv[A == 0], y[A == 0], coords)
    d1 = LeveledDistribution.from_samples(lv[A == 1], y[A == 1], coords)
    return d0, d1, (lv, A, y)


def audit(dataset: TabularDataset, outputs, cfg: AuditConfig | None = None) -> DisparityReport:
    """Compute every disparity of ``outputs`` (one score per row) on ``dataset``."""
    cfg = cfg or AuditConfig()
    d0, d1, (lv, A, y) = leveled_pair(dataset, outputs, cfg.drop_unshared_levels)

    dist = level_wise_distances(d0, d1, cfg.p_lp_inner)
    lp = {
        Q: weighted_norm(dist, aggregation_weights(d0, d1, Q), cfg.p_lp_norm) for Q in AggregationMeasure
    }
    dd = demographic_disparity(Empirical1D.from_samples(y[A == 0]), Empirical1D.from_samples(y[A == 1]), cfg.p_dd)
    res = bcd_nested_sinkhorn(d0, d1, cfg.bcd_config())
    norm = normalize_bcd(res, d0, d1)
    z = bin_outputs(y, cfg.dcfr_bins)
    r_dcfr = dcfr_closed_form(DiscreteJoint.from_samples(z, lv, A))

    metadata = {
        "n": int(y.size),
        "n_levels": len(d0),
        "p_lp_inner": cfg.p_lp_inner,
        "p_lp_norm": cfg.p_lp_norm,
        "p_dd": cfg.p_dd,
        "p_wass": cfg.p_wass,
        "C": res.C,
        "epsilon": cfg.epsilon,
        "exact_oracles": cfg.use_exact_oracles,
        "dcfr_bins": cfg.dcfr_bins,
        "power_form": True,
    }
    return DisparityReport(
        cdd_wass=float(res.value),
        cdd_wass_normalized=float(norm),
        cdd_lp_uniform=lp[AggregationMeasure.UNIFORM],
        cdd_lp_pl=lp[AggregationMeasure.MARGINAL_PL],
        cdd_lp_avg=lp[AggregationMeasure.AVERAGED_CONDITIONAL],
        dd=float(dd),
        dcfr=float(r_dcfr),
        per_level_distances={dataset.level_name(k): float(v) for k, v in dist.items()},
        metadata=metadata,
    )
