"""Bi-causal (nested) transport distance between two leveled output distributions.

A :class:`LeveledDistribution` describes one sensitive group: a weight per
level of the legitimate feature and a 1-D distribution of model outputs
inside each level.  The bi-causal distance between two groups is computed as
a nested OT problem.  For each level pair (m, n) an inner OT on the output
atoms gives W(m, n); the outer OT between the level weights then uses

    D(m, n) = C * ||l_m - l_n||_p^p + W(m, n)

so a large ``C`` discourages moving mass across levels.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from ._parallel import pmap
from .errors import ConvergenceWarning, InvalidInput, SupportMismatch, UndefinedGap
from .otcore import (
    Empirical1D,
    SinkhornConfig,
    TransportPlan,
    exact_ot,
    exact_wasserstein_1d,
    monotone_coupling,
    sinkhorn,
)


@dataclass(frozen=True, eq=False)
class LeveledDistribution:
    """Per-level output distributions of one sensitive group.

    ``coords`` holds the numeric coordinate of each level, shape (L,) or
    (L, k) for crossed multi-column levels.  ``n_samples`` is the number of
    rows the distribution was built from (used to pool level frequencies
    across groups); it may be ``None`` for hand-built distributions.
    """

    levels: tuple
    coords: np.ndarray
    level_weights: np.ndarray
    outputs: tuple
    n_samples: int | None = None

    def __post_init__(self):
        levels = tuple(self.levels)
        coords = np.asarray(self.coords, dtype=float)
        if coords.ndim == 1:
            coords = coords[:, None]
        weights = np.asarray(self.level_weights, dtype=float)
        outputs = tuple(self.outputs)
        L = len(levels)
        if L == 0:
            raise InvalidInput("a leveled distribution needs at least one level")
        if coords.shape[0] != L or weights.shape != (L,) or len(outputs) != L:
            raise InvalidInput("levels, coords, weights and outputs differ in length")
        if len(set(levels)) != L:
            raise InvalidInput("duplicate level identifiers")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise InvalidInput("level weights must be non-negative and sum to 1")
        if not all(isinstance(o, Empirical1D) for o in outputs):
            raise InvalidInput("per-level outputs must be Empirical1D")
        if not np.all(np.isfinite(coords)):
            raise InvalidInput("level coordinates must be finite")
        if len({tuple(c) for c in coords}) != L:
            raise InvalidInput("level coordinates must be distinct")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "level_weights", weights)
        object.__setattr__(self, "outputs", outputs)

    @classmethod
    def from_samples(cls, levels, outputs, coords=None, merge=True):
        """Build from per-row level ids and outputs.

        ``coords`` maps level id to its coordinate; by default the id itself
        is used, which requires numeric ids.  Levels are ordered by id.
        """
        levels = np.asarray(levels)
        outputs = np.asarray(outputs, dtype=float)
        if levels.shape[0] != outputs.shape[0] or outputs.ndim != 1:
            raise InvalidInput("levels and outputs must be aligned 1-D arrays")
        if outputs.size == 0:
            raise InvalidInput("empty group")
        ids, inverse, counts = np.unique(levels, return_inverse=True, return_counts=True)
        per_level = [Empirical1D.from_samples(outputs[inverse == k], merge=merge) for k in range(ids.size)]
        keys = tuple(i.item() if hasattr(i, "item") else i for i in ids)
        if coords is None:
            try:
                c = np.asarray(keys, dtype=float)
            except (TypeError, ValueError) as exc:
                raise InvalidInput("non-numeric level ids need explicit coordinates") from exc
        else:
            c = np.asarray([coords[k] for k in keys], dtype=float)
        return cls(keys, c, counts / counts.sum(), per_level, int(outputs.size))

    def __len__(self):
        return len(self.levels)

    def index(self):
        return {lvl: k for k, lvl in enumerate(self.levels)}

    def output_values(self):
        return np.concatenate([o.values for o in self.outputs])

    def restrict(self, keep):
        """Sub-distribution on the levels in ``keep``, re-normalised."""
        idx = [k for k, lvl in enumerate(self.levels) if lvl in set(keep)]
        if not idx:
            raise InvalidInput("no levels left after restriction")
        w = self.level_weights[idx]
        n = None
        if self.n_samples is not None:
            n = int(round(self.n_samples * w.sum()))
        return LeveledDistribution(
            tuple(self.levels[k] for k in idx),
            self.coords[idx],
            w / w.sum(),
            tuple(self.outputs[k] for k in idx),
            n,
        )


@dataclass(frozen=True)
class BcdConfig:
    """Settings of the nested solver.

    ``C=None`` picks max(1, 1.01 * diameter / gap) from the data, the
    smallest round value that keeps the outer plan on matching levels.
    ``use_exact_oracles`` swaps both Sinkhorn stages for exact solvers.
    """

    C: float | None = None
    p: int = 1
    inner: SinkhornConfig = field(default_factory=SinkhornConfig)
    outer: SinkhornConfig = field(default_factory=SinkhornConfig)
    use_exact_oracles: bool = False
    n_jobs: int | None = None

    def __post_init__(self):
        if self.C is not None and not self.C > 0:
            raise InvalidInput("level-mismatch penalty C must be positive")
        if self.p not in (1, 2):
            raise InvalidInput("order p must be 1 or 2")


@dataclass(frozen=True, eq=False)
class BcdResult:
    """Nested-OT solution.

    ``value`` is the sharp cost of the outer plan on the sharp outer cost;
    ``objective`` is the entropic nested objective whose envelope gradient
    the regularizers use.  In exact mode the two coincide.  Unpacks as
    ``value, outer_plan, inner_plans``.
    """

    value: float
    objective: float
    outer_plan: TransportPlan
    inner_plans: dict
    inner_costs: np.ndarray
    level_costs: np.ndarray
    C: float
    p: int

    def __iter__(self):
        return iter((self.value, self.outer_plan, self.inner_plans))


# ---------------------------------------------------------------------------
# geometry helpers
# ---------------------------------------------------------------------------


def level_cost_matrix(coords0, coords1, p):
    """||l_m - l_n||_p^p for every pair of level coordinates."""
    c0 = np.asarray(coords0, dtype=float)
    c1 = np.asarray(coords1, dtype=float)
    if c0.ndim == 1:
        c0 = c0[:, None]
    if c1.ndim == 1:
        c1 = c1[:, None]
    out = np.zeros((c0.shape[0], c1.shape[0]))
    for k in range(c0.shape[1]):
        out += kernels.cost_matrix(c0[:, k], c1[:, k], p)
    return out


def min_level_gap(d0: LeveledDistribution, d1: LeveledDistribution, p=1) -> float:
    """Smallest ||l - l'||_p^p over distinct coordinates of the union of levels."""
    pts = np.unique(np.vstack((d0.coords, d1.coords)), axis=0)
    if pts.shape[0] < 2:
        raise UndefinedGap("only one distinct level coordinate; any positive C works")
    D = level_cost_matrix(pts, pts, p)
    np.fill_diagonal(D, np.inf)
    return float(D.min())


def output_diameter(d0: LeveledDistribution, d1: LeveledDistribution, p=1) -> float:
    """Largest |y - y'|^p over all outputs observed in either group."""
    vals = np.concatenate((d0.output_values(), d1.output_values()))
    if vals.size == 0:
        raise InvalidInput("no outputs")
    return float((vals.max() - vals.min()) ** p)


def threshold_C(d0, d1, p=1):
    """diameter / gap, the level-mismatch penalty above which the outer plan stays diagonal."""
    return output_diameter(d0, d1, p) / min_level_gap(d0, d1, p)


def resolve_C(d0, d1, cfg: BcdConfig) -> float:
    try:
        thr = threshold_C(d0, d1, cfg.p)
    except UndefinedGap:
        return 1.0 if cfg.C is None else float(cfg.C)
    if cfg.C is None:
        return max(1.0, 1.01 * thr)
    if cfg.C <= thr:
        warnings.warn(
            f"C={cfg.C:g} is not above diameter/gap={thr:.4g}; the outer plan may mix levels "
            "and the distance no longer equals the level-wise Wasserstein disparity",
            stacklevel=3,
        )
    return float(cfg.C)


# ---------------------------------------------------------------------------
# nested solver
# ---------------------------------------------------------------------------


def nested_ot(
    coords0,
    level_w0,
    atoms0,
    coords1,
    level_w1,
    atoms1,
    C,
    p,
    inner=None,
    outer=None,
    exact=False,
    n_jobs=None,
    labels0=None,
    labels1=None,
):
    """Solve the nested problem on raw arrays.

    ``atoms0[m]`` is a pair (values, weights) of the outputs at level m of
    group 0, and likewise for group 1.  Values need not be sorted unless
    ``exact`` is set.  Returns a :class:`BcdResult` whose inner plans are
    dense matrices indexed like the given atoms.
    """
    inner = inner or SinkhornConfig(p=p)
    outer = outer or SinkhornConfig(p=p)
    labels0 = labels0 if labels0 is not None else list(range(len(atoms0)))
    labels1 = labels1 if labels1 is not None else list(range(len(atoms1)))
    pairs = [(m, n) for m in range(len(atoms0)) for n in range(len(atoms1))]

    def solve_pair(mn):
        m, n = mn
        x, wx = atoms0[m]
        y, wy = atoms1[n]
        if exact:
            a = Empirical1D(x, wx)
            b = Empirical1D(y, wy)
            w = exact_wasserstein_1d(p, a, b)
            return w, w, monotone_coupling(a, b)
        res = sinkhorn(kernels.cost_matrix(x, y, p), wx, wy, inner, warn=False)
        return res.transport_cost, res.regularized_objective, res.plan

    solved = pmap(solve_pair, pairs, n_jobs)
    M, N = len(atoms0), len(atoms1)
    inner_sharp = np.empty((M, N))
    inner_obj = np.empty((M, N))
    inner_plans = {}
    bad = []
    for (m, n), (sharp, obj, plan) in zip(pairs, solved):
        inner_sharp[m, n] = sharp
        inner_obj[m, n] = obj
        inner_plans[(labels0[m], labels1[n])] = plan
        if not plan.converged:
            bad.append((labels0[m], labels1[n]))
    if bad:
        warnings.warn(
            f"inner Sinkhorn did not converge for level pairs {bad}", ConvergenceWarning, stacklevel=3
        )

    lvl = C * level_cost_matrix(coords0, coords1, p)
    D_obj = lvl + inner_obj
    D_sharp = lvl + inner_sharp
    if exact:
        value, outer_plan = exact_ot(D_sharp, level_w0, level_w1)
        objective = value
    else:
        # entropic inner values can dip below zero; a constant shift leaves the plan unchanged
        shift = min(0.0, float(D_obj.min()))
        res = sinkhorn(D_obj - shift, level_w0, level_w1, outer, warn=False)
        outer_plan = res.plan
        if not outer_plan.converged:
            warnings.warn(
                f"outer Sinkhorn did not converge (violation {outer_plan.marginal_violation:.3g})",
                ConvergenceWarning,
                stacklevel=3,
            )
        value = float(np.sum(outer_plan.entries * D_sharp))
        objective = res.regularized_objective + shift
    return BcdResult(value, objective, outer_plan, inner_plans, inner_sharp, lvl, float(C), p)


def _atoms(d: LeveledDistribution):
    return [(o.values, o.weights) for o in d.outputs]


def bcd_nested_sinkhorn(d0: LeveledDistribution, d1: LeveledDistribution, cfg: BcdConfig | None = None) -> BcdResult:
    """Bi-causal distance (p-th power form) between two groups by nested OT."""
    cfg = cfg or BcdConfig()
    if d0.coords.shape[1] != d1.coords.shape[1]:
        raise InvalidInput("level coordinates of the two groups differ in dimension")
    C = resolve_C(d0, d1, cfg)
    return nested_ot(
        d0.coords,
        d0.level_weights,
        _atoms(d0),
        d1.coords,
        d1.level_weights,
        _atoms(d1),
        C,
        cfg.p,
        cfg.inner,
        cfg.outer,
        cfg.use_exact_oracles,
        cfg.n_jobs,
        d0.levels,
        d1.levels,
    )


def check_common_support(d0: LeveledDistribution, d1: LeveledDistribution):
    s0, s1 = set(d0.levels), set(d1.levels)
    if s0 != s1:
        only0 = sorted(s0 - s1, key=repr)
        only1 = sorted(s1 - s0, key=repr)
        raise SupportMismatch(
            f"levels differ between groups: only in A=0 {only0}, only in A=1 {only1}", only0, only1
        )


def cdd_wass_direct(d0: LeveledDistribution, d1: LeveledDistribution, p=1):
    """Level-wise Wasserstein disparity with cross-level transport forbidden.

    Returns sum_l P(l) W_p^p at level l when both groups put the same weight
    on every level, and ``None`` otherwise: with unequal level weights no
    plan avoids moving mass between levels, so the value is infeasible.
    """
    check_common_support(d0, d1)
    idx1 = d1.index()
    order = [idx1[lvl] for lvl in d0.levels]
    w1 = d1.level_weights[order]
    if np.max(np.abs(d0.level_weights - w1)) > 1e-9:
        return None
    total = 0.0
    for k, lvl in enumerate(d0.levels):
        total += d0.level_weights[k] * exact_wasserstein_1d(p, d0.outputs[k], d1.outputs[order[k]])
    return float(total)


def level_marginal_wasserstein(d0: LeveledDistribution, d1: LeveledDistribution, p=1) -> float:
    """Exact W_p^p between the two level-weight vectors under ||l - l'||_p^p."""
    if d0.coords.shape[1] == 1 and d1.coords.shape[1] == 1:
        a = Empirical1D.from_samples(d0.coords[:, 0], d0.level_weights)
        b = Empirical1D.from_samples(d1.coords[:, 0], d1.level_weights)
        return exact_wasserstein_1d(p, a, b)
    value, _ = exact_ot(level_cost_matrix(d0.coords, d1.coords, p), d0.level_weights, d1.level_weights)
    return value


def normalized_cdd_wass(d0: LeveledDistribution, d1: LeveledDistribution, cfg: BcdConfig | None = None):
    """Bi-causal distance minus C times the level-marginal W_p^p."""
    cfg = cfg or BcdConfig()
    return normalize_bcd(bcd_nested_sinkhorn(d0, d1, cfg), d0, d1)


def normalize_bcd(res: BcdResult, d0, d1) -> float:
    """Subtract the cost of matching the level marginals alone from a solved distance."""
    return res.value - res.C * level_marginal_wasserstein(d0, d1, res.p)
