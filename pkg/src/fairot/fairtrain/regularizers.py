"""Transport-based fairness penalties on a batch of model outputs, with gradients.

Every penalty compares the outputs of the two sensitive groups.  Values are
sharp transport costs of entropic plans; gradients are exact gradients of
the entropic objective (``objective`` on the result) obtained from the
optimal plans, so no Sinkhorn iteration is differentiated.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..bicausal import nested_ot
from ..disparity import AggregationMeasure
from ..errors import InvalidInput
from ..otcore import SinkhornConfig, sinkhorn

log = logging.getLogger(__name__)

KINDS = ("none", "fairbit", "fairleap-uniform", "fairleap-pl", "fairleap-avg", "wasserstein")
_LEAP_Q = {
    "fairleap-uniform": AggregationMeasure.UNIFORM,
    "fairleap-pl": AggregationMeasure.MARGINAL_PL,
    "fairleap-avg": AggregationMeasure.AVERAGED_CONDITIONAL,
}


@dataclass(frozen=True)
class Regularizer:
    """Penalty kind and its transport settings.

    ``p=None`` picks the conventional order: 2 for ``fairbit`` (inner and
    outer), 1 otherwise.  ``epsilon`` is an absolute entropic strength held
    fixed through training.  ``C`` is the level-mismatch penalty of
    ``fairbit``.  The tight default ``tol`` keeps plan errors, and so
    gradient errors, well below finite-difference resolution.
    """

    kind: str = "none"
    p: int | None = None
    epsilon: float = 0.01
    C: float = 1.0
    tol: float = 1e-9
    max_iter: int = 100_000

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInput(f"unknown regularizer {self.kind!r}; choose from {KINDS}")
        if self.p is None:
            object.__setattr__(self, "p", 2 if self.kind == "fairbit" else 1)
        if self.p not in (1, 2):
            raise InvalidInput("order p must be 1 or 2")
        if not self.epsilon > 0 or not self.C > 0:
            raise InvalidInput("epsilon and C must be positive")

    @property
    def active(self):
        return self.kind != "none"

    def sinkhorn_config(self):
        return SinkhornConfig(epsilon=self.epsilon, tol=self.tol, max_iter=self.max_iter, p=self.p)


@dataclass(frozen=True, eq=False)
class RegValue:
    value: float
    objective: float
    grad: np.ndarray
    skipped_levels: tuple = ()
    converged: bool = True


def _cost_grad(plan, x, y, p):
    """Gradient of <plan, |x_i - y_j|^p> in x and in y."""
    diff = x[:, None] - y[None, :]
    if p == 1:
        dc = np.sign(diff)
    else:
        dc = p * np.abs(diff) ** (p - 1) * np.sign(diff)
    w = plan * dc
    return w.sum(axis=1), -w.sum(axis=0)


def _pair(x, y, cfg):
    wx = np.full(x.size, 1.0 / x.size)
    wy = np.full(y.size, 1.0 / y.size)
    res = sinkhorn(kernels.cost_matrix(x, y, cfg.p), wx, wy, cfg, warn=False)
    gx, gy = _cost_grad(res.plan.entries, x, y, cfg.p)
    return res, gx, gy


def _wasserstein(out, A, reg):
    i0 = np.flatnonzero(A == 0)
    i1 = np.flatnonzero(A == 1)
    grad = np.zeros(out.size)
    if i0.size == 0 or i1.size == 0:
        log.debug("batch lacks one sensitive group; penalty skipped")
        return RegValue(0.0, 0.0, grad, ("*",))
    res, g0, g1 = _pair(out[i0], out[i1], reg.sinkhorn_config())
    grad[i0] = g0
    grad[i1] = g1
    return RegValue(res.transport_cost, res.regularized_objective, grad, (), res.converged)


def _shared_levels(L, A):
    lv0 = set(np.unique(L[A == 0]).tolist())
    lv1 = set(np.unique(L[A == 1]).tolist())
    shared = sorted(lv0 & lv1)
    skipped = tuple(sorted(lv0 ^ lv1))
    if skipped:
        log.debug("levels %s present in one group only; no penalty for them in this batch", skipped)
    return shared, skipped


def _fairleap(out, L, A, reg):
    Q = _LEAP_Q[reg.kind]
    shared, skipped = _shared_levels(L, A)
    grad = np.zeros(out.size)
    if not shared:
        return RegValue(0.0, 0.0, grad, skipped)
    n0 = np.array([np.sum((L == l) & (A == 0)) for l in shared], dtype=float)
    n1 = np.array([np.sum((L == l) & (A == 1)) for l in shared], dtype=float)
    if Q is AggregationMeasure.UNIFORM:
        q = np.full(len(shared), 1.0 / len(shared))
    elif Q is AggregationMeasure.MARGINAL_PL:
        q = (n0 + n1) / (n0 + n1).sum()
    else:
        q = 0.5 * (n0 / n0.sum() + n1 / n1.sum())
    cfg = reg.sinkhorn_config()
    value = objective = 0.0
    converged = True
    for k, l in enumerate(shared):
        i0 = np.flatnonzero((L == l) & (A == 0))
        i1 = np.flatnonzero((L == l) & (A == 1))
        res, g0, g1 = _pair(out[i0], out[i1], cfg)
        value += q[k] * res.transport_cost
        objective += q[k] * res.regularized_objective
        grad[i0] += q[k] * g0
        grad[i1] += q[k] * g1
        converged &= res.converged
    return RegValue(value, objective, grad, skipped, converged)


def _fairbit(out, L, A, coords, reg):
    grad = np.zeros(out.size)
    groups = []
    for a in (0, 1):
        ia = np.flatnonzero(A == a)
        if ia.size == 0:
            log.debug("batch lacks one sensitive group; penalty skipped")
            return RegValue(0.0, 0.0, grad, ("*",))
        levels = np.unique(L[ia])
        rows = [ia[L[ia] == l] for l in levels]
        w = np.array([r.size for r in rows], dtype=float)
        atoms = [(out[r], np.full(r.size, 1.0 / r.size)) for r in rows]
        groups.append((levels, rows, w / w.sum(), atoms))
    (lv0, rows0, w0, at0), (lv1, rows1, w1, at1) = groups
    cfg = reg.sinkhorn_config()
    res = nested_ot(coords[lv0], w0, at0, coords[lv1], w1, at1, reg.C, reg.p, cfg, cfg, labels0=list(lv0), labels1=list(lv1))
    G = res.outer_plan.entries
    for m, lm in enumerate(lv0):
        for n, ln in enumerate(lv1):
            if G[m, n] == 0.0:
                continue
            P = res.inner_plans[(lm, ln)].entries
            gx, gy = _cost_grad(P, at0[m][0], at1[n][0], reg.p)
            grad[rows0[m]] += G[m, n] * gx
            grad[rows1[n]] += G[m, n] * gy
    conv = res.outer_plan.converged and all(p.converged for p in res.inner_plans.values())
    return RegValue(res.value, res.objective, grad, (), conv)


def regularizer_value_and_grad(reg: Regularizer, outputs, L, A, coords=None) -> RegValue:
    """Penalty of the batch and its gradient with respect to every output.

    ``L`` holds integer level ids indexing ``coords`` (default: the ids
    themselves as coordinates).  Levels seen in only one group add nothing
    and receive zero gradient.
    """
    out = np.asarray(outputs, dtype=float).ravel()
    L = np.asarray(L).ravel()
    A = np.asarray(A).ravel()
    if not (out.shape == L.shape == A.shape):
        raise InvalidInput("outputs, L and A must be aligned")
    if reg.kind == "none":
        return RegValue(0.0, 0.0, np.zeros(out.size))
    if reg.kind == "wasserstein":
        return _wasserstein(out, A, reg)
    if reg.kind == "fairbit":
        if coords is None:
            coords = np.arange(int(L.max()) + 1, dtype=float)
        coords = np.asarray(coords, dtype=float)
        if coords.ndim == 1:
            coords = coords[:, None]
        return _fairbit(out, L.astype(np.int64), A, coords, reg)
    return _fairleap(out, L, A, reg)
