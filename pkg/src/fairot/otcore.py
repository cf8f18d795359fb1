"""Entropic and exact optimal transport over finite weighted distributions."""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from ._simplex import transport_simplex
from .errors import (
    ConvergenceWarning,
    InstanceTooLarge,
    InvalidInput,
    NotConverged,
    NumericFailure,
)

WEIGHT_TOL = 1e-9
# dual Newton refinement: dense solves up to this many potentials
NEWTON_MAX_DIM = 600
NEWTON_AFTER = 2000
STEP_CAP = 20.0


# ---------------------------------------------------------------------------
# types
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Empirical1D:
    """A finite distribution on the real line in canonical form.

    Values are sorted ascending with strictly positive weights that sum to one.
    Build instances with :meth:`from_samples` unless the arrays are already
    canonical.
    """

    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if values.ndim != 1 or values.shape != weights.shape or values.size == 0:
            raise InvalidInput("values and weights must be 1-D arrays of equal, non-zero length")
        if not np.all(np.isfinite(values)) or not np.all(np.isfinite(weights)):
            raise InvalidInput("non-finite value or weight")
        if np.any(weights < 0):
            raise InvalidInput("negative weight")
        if abs(weights.sum() - 1.0) > WEIGHT_TOL:
            raise InvalidInput(f"weights sum to {weights.sum()!r}, expected 1")
        if np.any(np.diff(values) < 0):
            raise InvalidInput("values must be sorted ascending; use Empirical1D.from_samples")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_samples(cls, values, weights=None, merge=True):
        """Sort, normalise and (optionally) merge duplicate atoms.

        Zero-weight atoms are dropped.
        """
        values = np.asarray(values, dtype=float).ravel()
        if values.size == 0:
            raise InvalidInput("empty sample")
        if weights is None:
            weights = np.full(values.size, 1.0 / values.size)
        else:
            weights = np.asarray(weights, dtype=float).ravel()
            if weights.shape != values.shape:
                raise InvalidInput("values and weights differ in length")
            if np.any(weights < 0) or weights.sum() <= 0:
                raise InvalidInput("weights must be non-negative with positive total")
            weights = weights / weights.sum()
        keep = weights > 0
        values, weights = values[keep], weights[keep]
        order = np.argsort(values, kind="stable")
        values, weights = values[order], weights[order]
        if merge and values.size > 1:
            uniq, start = np.unique(values, return_index=True)
            weights = np.add.reduceat(weights, start)
            values = uniq
        return cls(values, weights / weights.sum())

    def __len__(self):
        return self.values.size

    def mean(self):
        return float(np.dot(self.values, self.weights))

    def scaled(self, s):
        """Push-forward under x -> s * x for s > 0."""
        if s <= 0:
            raise InvalidInput("scale must be positive")
        return Empirical1D(self.values * s, self.weights)


@dataclass(frozen=True)
class SinkhornConfig:
    """Entropic OT settings.

    ``epsilon`` is in cost units; ``None`` resolves to 1e-2 times the median
    cost entry of each problem.  ``tol`` bounds the max row/column marginal
    violation.  ``eps_scaling`` anneals epsilon down from the cost scale
    before the final solve, which only changes speed, not the answer.
    """

    epsilon: float | None = None
    max_iter: int = 100_000
    tol: float = 1e-6
    p: int = 1
    eps_scaling: bool = True

    def __post_init__(self):
        if self.epsilon is not None and not self.epsilon > 0:
            raise InvalidInput("epsilon must be positive")
        if self.max_iter < 1:
            raise InvalidInput("max_iter must be at least 1")
        if not self.tol > 0:
            raise InvalidInput("tol must be positive")
        if self.p not in (1, 2):
            raise InvalidInput("order p must be 1 or 2")


@dataclass(frozen=True, eq=False)
class TransportPlan:
    entries: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray
    converged: bool = True
    marginal_violation: float = 0.0

    @property
    def shape(self):
        return self.entries.shape

    def check(self, tol=1e-6):
        """True if the entries are non-negative and reproduce both marginals within ``tol``."""
        P = self.entries
        return bool(
            np.all(P >= 0)
            and np.max(np.abs(P.sum(axis=1) - self.row_marginal)) <= tol
            and np.max(np.abs(P.sum(axis=0) - self.col_marginal)) <= tol
        )

    def off_diagonal_mass(self):
        P = self.entries
        return float(P.sum() - np.trace(P))


@dataclass(frozen=True, eq=False)
class SinkhornResult:
    plan: TransportPlan
    transport_cost: float
    regularized_objective: float
    epsilon: float
    n_iter: int

    @property
    def converged(self):
        return self.plan.converged


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def check_cost_matrix(cost):
    C = np.asarray(cost, dtype=float)
    if C.ndim != 2 or C.size == 0:
        raise InvalidInput("cost must be a non-empty 2-D matrix")
    if not np.all(np.isfinite(C)):
        raise InvalidInput("cost entries must be finite")
    if np.any(C < 0):
        raise InvalidInput("cost entries must be non-negative")
    return C


def check_weights(w, name="weights"):
    w = np.asarray(w, dtype=float).ravel()
    if w.size == 0 or not np.all(np.isfinite(w)) or np.any(w < 0):
        raise InvalidInput(f"{name} must be a non-empty non-negative vector")
    if abs(w.sum() - 1.0) > WEIGHT_TOL:
        raise InvalidInput(f"{name} sum to {w.sum()!r}, expected 1")
    return w


def default_epsilon(cost):
    """1e-2 times the median cost entry, falling back to the mean, then to 1e-2."""
    C = np.asarray(cost, dtype=float)
    scale = float(np.median(C))
    if scale <= 0:
        scale = float(C.mean())
    if scale <= 0:
        scale = 1.0
    return 1e-2 * scale


def _epsilon_schedule(cmax, eps):
    stages = []
    e = cmax
    while e > 10.0 * eps:
        stages.append(e)
        e /= 10.0
    stages.append(eps)
    return stages


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def exact_wasserstein_1d(p, a: Empirical1D, b: Empirical1D) -> float:
    """Exact W_p^p between two 1-D distributions via their quantile functions."""
    if p < 1:
        raise InvalidInput("order p must be >= 1")
    return kernels.wasserstein_1d_sorted(a.values, a.weights, b.values, b.weights, p)


def monotone_coupling(a: Empirical1D, b: Empirical1D) -> TransportPlan:
    """The quantile (north-west corner on sorted atoms) coupling as a dense plan."""
    rows, cols, mass = kernels.monotone_plan(a.weights, b.weights)
    P = np.zeros((len(a), len(b)))
    np.add.at(P, (rows, cols), mass)
    return TransportPlan(P, a.weights, b.weights)


def _uniform(w):
    return np.allclose(w, w[0], rtol=0, atol=1e-15)


def _ot_by_permutation(C):
    n = C.shape[0]
    best = np.inf
    rows = np.arange(n)
    for perm in itertools.permutations(range(n)):
        val = C[rows, perm].sum()
        if val < best:
            best = val
    return best / n


def _ot_by_vertex_enumeration(C, a, b):
    m, n = C.shape
    A = np.zeros((m + n, m * n))
    for i in range(m):
        A[i, i * n : (i + 1) * n] = 1.0
    for j in range(n):
        A[m + j, j::n] = 1.0
    rhs = np.concatenate((a, b))
    k = m + n - 1
    best = np.inf
    flatC = C.ravel()
    for support in itertools.combinations(range(m * n), k):
        cols = list(support)
        sub = A[:, cols]
        if np.linalg.matrix_rank(sub) < k:
            continue
        x, *_ = np.linalg.lstsq(sub, rhs, rcond=None)
        if np.max(np.abs(sub @ x - rhs)) > 1e-9 or np.min(x) < -1e-12:
            continue
        best = min(best, float(flatC[cols] @ x))
    return best


def brute_force_ot(cost, a, b, method="auto", max_cells=4096) -> float:
    """Exact optimal transport cost, used as the independent oracle for Sinkhorn.

    ``method``:
      * ``"permutation"`` - minimum-cost assignment over all permutations
        (square instances with equal uniform marginals, n <= 8);
      * ``"vertex"`` - enumerate every basis of the transport polytope
        (m*n <= 16);
      * ``"simplex"`` - transportation simplex from the north-west-corner
        basis (m*n <= ``max_cells``);
      * ``"auto"`` - permutation when it applies, simplex otherwise.
    """
    C = check_cost_matrix(cost)
    a = check_weights(a, "a")
    b = check_weights(b, "b")
    m, n = C.shape
    if (m, n) != (a.size, b.size):
        raise InvalidInput("marginal lengths do not match the cost matrix")
    square_uniform = m == n and _uniform(a) and _uniform(b)
    if method == "auto":
        method = "permutation" if square_uniform and n <= 8 else "simplex"
    if method == "permutation":
        if not square_uniform:
            raise InvalidInput("permutation oracle needs equal uniform marginals")
        if n > 8:
            raise InstanceTooLarge(f"permutation oracle capped at n=8, got {n}")
        return float(_ot_by_permutation(C))
    if method == "vertex":
        if m * n > 16:
            raise InstanceTooLarge(f"vertex enumeration capped at 16 cells, got {m * n}")
        return _ot_by_vertex_enumeration(C, a, b)
    if method == "simplex":
        if m * n > max_cells:
            raise InstanceTooLarge(f"exact oracle capped at {max_cells} cells, got {m * n}")
        return transport_simplex(C, a, b)[0]
    raise InvalidInput(f"unknown method {method!r}")


def exact_ot(cost, a, b, max_cells=1 << 20):
    """Exact optimal cost and an optimal vertex plan (transportation simplex)."""
    C = check_cost_matrix(cost)
    a = check_weights(a, "a")
    b = check_weights(b, "b")
    if C.size > max_cells:
        raise InstanceTooLarge(f"exact solver capped at {max_cells} cells, got {C.size}")
    value, X = transport_simplex(C, a, b)
    return value, TransportPlan(X, a, b)


def _dual_value(C, a, b, eps, f, g):
    z = (f[:, None] + g[None, :] - C) / eps
    if np.max(z) > 700:
        return -np.inf, None
    P = np.exp(z)
    return float(f @ a + g @ b - eps * P.sum()), P


def _newton_polish(C, a, b, eps, f, g, tol, max_steps=200):
    """Damped Newton ascent on the entropic dual from near-optimal potentials.

    Sinkhorn slows to a crawl when the optimal plan splits into nearly
    independent blocks (common with uniform weights); a few Newton steps
    on the full dual fix the mass exchanged between blocks.  Every accepted
    step raises the dual, so the last iterate is returned even on failure.
    """
    m, n = C.shape
    val, P = _dual_value(C, a, b, eps, f, g)
    for step in range(max_steps):
        r, c = P.sum(axis=1), P.sum(axis=0)
        if max(np.max(np.abs(r - a)), np.max(np.abs(c - b))) <= tol:
            return f, g, True, step
        # Hessian of the negated dual, gauge fixed by pinning the last g
        H = np.empty((m + n - 1, m + n - 1))
        H[:m, :m] = np.diag(r)
        H[:m, m:] = P[:, :-1]
        H[m:, :m] = P[:, :-1].T
        H[m:, m:] = np.diag(c[:-1])
        grad = np.concatenate((a - r, (b - c)[:-1]))
        H[np.diag_indices_from(H)] += 1e-13 * np.max(np.diag(H))
        try:
            d = np.linalg.solve(H, grad) * eps
        except np.linalg.LinAlgError:
            d = np.linalg.lstsq(H, grad, rcond=None)[0] * eps
        # weakly linked blocks make the quadratic model wildly optimistic
        big = np.max(np.abs(d))
        if big > STEP_CAP * eps:
            d *= STEP_CAP * eps / big
        df, dg = d[:m], np.append(d[m:], 0.0)
        t = 1.0
        slope = float(grad @ d)
        while t > 1e-8:
            nf, ng = f + t * df, g + t * dg
            nval, nP = _dual_value(C, a, b, eps, nf, ng)
            if nval >= val + 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            return f, g, False, step
        f, g, val, P = nf, ng, nval, nP
    r, c = P.sum(axis=1), P.sum(axis=0)
    return f, g, max(np.max(np.abs(r - a)), np.max(np.abs(c - b))) <= tol, max_steps


def _final_stage(C, a, b, log_a, log_b, eps, f, g, cfg, n_iter):
    """Sinkhorn at the target epsilon, switching to Newton if it stalls."""
    m, n = C.shape
    # Newton steps count as iterations; tiny budgets get plain Sinkhorn
    newton = m + n <= NEWTON_MAX_DIM and cfg.max_iter > NEWTON_AFTER
    budget = cfg.max_iter
    first = min(budget, NEWTON_AFTER) if newton else budget
    f, g, it, err = kernels.sinkhorn_log(C, log_a, log_b, eps, f, g, first, cfg.tol)
    n_iter += it
    budget -= it
    if err <= cfg.tol:
        return f, g, n_iter
    if newton:
        f, g, ok, steps = _newton_polish(C, a, b, eps, f, g, cfg.tol)
        n_iter += steps
        if ok:
            return f, g, n_iter
    if budget > 0:
        f, g, it, _ = kernels.sinkhorn_log(C, log_a, log_b, eps, f, g, budget, cfg.tol)
        n_iter += it
    return f, g, n_iter


def sinkhorn(cost, a, b, cfg: SinkhornConfig | None = None, init=None, warn=True) -> SinkhornResult:
    """Entropic OT in the log domain.

    Minimises <P, C> + eps * sum P (log P - 1) over couplings of ``a`` and
    ``b``.  The reported ``transport_cost`` is the sharp cost <P, C> of the
    entropic optimiser.  Zero-weight atoms are removed before solving and
    re-inserted as zero rows/columns.  ``init`` optionally warm-starts the
    dual potentials (f, g) on the non-zero atoms.  With ``warn=False`` a
    non-converged solve is only flagged on the returned plan.
    """
    cfg = cfg or SinkhornConfig()
    C = check_cost_matrix(cost)
    a = check_weights(a, "a")
    b = check_weights(b, "b")
    m, n = C.shape
    if (m, n) != (a.size, b.size):
        raise InvalidInput("marginal lengths do not match the cost matrix")
    eps = cfg.epsilon if cfg.epsilon is not None else default_epsilon(C)

    rows = np.flatnonzero(a > 0)
    cols = np.flatnonzero(b > 0)
    Cs = C[np.ix_(rows, cols)]
    a_s, b_s = a[rows], b[cols]
    log_a, log_b = np.log(a_s), np.log(b_s)
    if init is not None:
        f, g = (np.asarray(v, dtype=float) for v in init)
    else:
        f, g = np.zeros(rows.size), np.zeros(cols.size)

    n_iter = 0
    if rows.size == 1 or cols.size == 1:
        # the product coupling is the only feasible plan
        P_s = np.outer(a_s, b_s)
        log_P = np.log(P_s)
    else:
        stages = _epsilon_schedule(float(Cs.max()), eps) if cfg.eps_scaling and init is None else [eps]
        for e in stages[:-1]:
            f, g, it, _ = kernels.sinkhorn_log(
                Cs, log_a, log_b, e, f, g, cfg.max_iter, max(cfg.tol, 1e-3 / max(m, n))
            )
            n_iter += it
        f, g, n_iter = _final_stage(Cs, a_s, b_s, log_a, log_b, eps, f, g, cfg, n_iter)
        log_P = (f[:, None] + g[None, :] - Cs) / eps
        P_s = np.exp(log_P)

    if not np.all(np.isfinite(P_s)):
        raise NumericFailure("Sinkhorn produced a non-finite plan (epsilon too small for the cost scale?)")
    violation = max(
        float(np.max(np.abs(P_s.sum(axis=1) - a_s))),
        float(np.max(np.abs(P_s.sum(axis=0) - b_s))),
    )
    converged = violation <= cfg.tol
    if not converged and warn:
        warnings.warn(
            f"Sinkhorn stopped after {n_iter} iterations with marginal violation {violation:.3g} "
            f"(tol {cfg.tol:.3g}, eps {eps:.3g})",
            ConvergenceWarning,
            stacklevel=2,
        )
    transport_cost = float(np.sum(P_s * Cs))
    objective = transport_cost + eps * float(np.sum(P_s * (log_P - 1.0)))
    if not (np.isfinite(transport_cost) and np.isfinite(objective)):
        raise NumericFailure("Sinkhorn objective is not finite")

    if rows.size == m and cols.size == n:
        P = P_s
    else:
        P = np.zeros((m, n))
        P[np.ix_(rows, cols)] = P_s
    plan = TransportPlan(P, a, b, converged=converged, marginal_violation=violation)
    return SinkhornResult(plan, transport_cost, objective, float(eps), n_iter)


def entropic_gradient_wrt_cost(plan: TransportPlan) -> np.ndarray:
    """Gradient of the entropic objective with respect to the cost matrix.

    By the envelope theorem this is the optimal plan itself.
    """
    if not plan.converged:
        raise NotConverged("gradient requested for a non-converged plan")
    return plan.entries.copy()
