"""The DCFR regularizer quantity on discrete joints of (Z, L, A).

For a test function h(z, l) in [0, 1],

    Q(h) = E[1{A=1} P(A=0|L) h(Z,L)] - E[1{A=0} P(A=1|L) h(Z,L)]
         = sum_{z,l} h(z,l) P(z,l) (P(A=1|z,l) - P(A=1|l)),

so the supremum over h is attained by the indicator of the cells with a
positive coefficient, giving E[(P(A=1|Z,L) - P(A=1|L))_+].
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import discretize_quantiles
from .errors import DegenerateCondition, InstanceTooLarge, InvalidInput

MAX_BRUTE_CELLS = 16
_ZERO = 1e-15


@dataclass(frozen=True, eq=False)
class DiscreteJoint:
    """Probability table over (z, l, a) with a in {0, 1}.

    ``mass[i, k, a]`` is the probability of (z_values[i], l_values[k], a).
    """

    z_values: tuple
    l_values: tuple
    mass: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mass, dtype=float)
        if m.shape != (len(self.z_values), len(self.l_values), 2):
            raise InvalidInput("mass must have shape (|Z|, |L|, 2)")
        if not np.all(np.isfinite(m)) or np.any(m < 0):
            raise InvalidInput("masses must be finite and non-negative")
        if abs(m.sum() - 1.0) > 1e-9:
            raise InvalidInput(f"masses sum to {m.sum()!r}, expected 1")
        object.__setattr__(self, "mass", m)
        object.__setattr__(self, "z_values", tuple(self.z_values))
        object.__setattr__(self, "l_values", tuple(self.l_values))

    @classmethod
    def from_cells(cls, cells):
        """From a mapping (z, l, a) -> mass; absent cells have mass 0."""
        zs = sorted({k[0] for k in cells}, key=repr)
        ls = sorted({k[1] for k in cells}, key=repr)
        zi = {z: i for i, z in enumerate(zs)}
        li = {v: i for i, v in enumerate(ls)}
        m = np.zeros((len(zs), len(ls), 2))
        for (z, l, a), w in cells.items():
            if a not in (0, 1):
                raise InvalidInput("sensitive bit must be 0 or 1")
            m[zi[z], li[l], a] += w
        return cls(tuple(zs), tuple(ls), m)

    @classmethod
    def from_samples(cls, z, l, a, weights=None):
        """Plug-in frequencies of observed (z, l, a) triples."""
        z = np.asarray(z)
        l = np.asarray(l)
        a = np.asarray(a).astype(np.int64)
        if not (z.shape == l.shape == a.shape) or z.ndim != 1 or z.size == 0:
            raise InvalidInput("z, l, a must be aligned non-empty 1-D arrays")
        if not np.isin(a, (0, 1)).all():
            raise InvalidInput("sensitive bit must be 0 or 1")
        w = np.ones(z.size) if weights is None else np.asarray(weights, dtype=float)
        zs, zi = np.unique(z, return_inverse=True)
        ls, li = np.unique(l, return_inverse=True)
        m = np.zeros((zs.size, ls.size, 2))
        np.add.at(m, (zi.ravel(), li.ravel(), a), w)
        return cls(tuple(zs.tolist()), tuple(ls.tolist()), m / m.sum())

    @property
    def n_cells(self):
        """Number of (z, l) cells."""
        return self.mass.shape[0] * self.mass.shape[1]

    def flipped(self):
        """The same joint with the sensitive labels swapped."""
        return DiscreteJoint(self.z_values, self.l_values, self.mass[:, :, ::-1].copy())

    # -- conditionals ------------------------------------------------------

    def p_l(self):
        return self.mass.sum(axis=(0, 2))

    def p_zl(self):
        return self.mass.sum(axis=2)

    def p_a1_given_l(self):
        """P(A=1|l); levels without mass get 0 since they carry no weight anywhere."""
        pl = self.p_l()
        ones = self.mass[:, :, 1].sum(axis=0)
        return np.divide(ones, pl, out=np.zeros_like(pl), where=pl > 0)

    def q_coefficients(self):
        """c(z, l) with Q(h) = sum h(z, l) c(z, l)."""
        p1_l = self.p_a1_given_l()
        return self.mass[:, :, 1] * (1.0 - p1_l)[None, :] - self.mass[:, :, 0] * p1_l[None, :]


def q_value(j: DiscreteJoint, h) -> float:
    """Q(h) for a test function given as a (|Z|, |L|) array."""
    h = np.asarray(h, dtype=float)
    if h.shape != j.mass.shape[:2]:
        raise InvalidInput("h must have shape (|Z|, |L|)")
    return float(np.sum(h * j.q_coefficients()))


def dcfr_closed_form(j: DiscreteJoint) -> float:
    """E[(P(A=1|Z,L) - P(A=1|L))_+] with plug-in conditionals."""
    pzl = j.p_zl()
    p1_l = j.p_a1_given_l()
    total = 0.0
    for i in range(pzl.shape[0]):
        for k in range(pzl.shape[1]):
            if pzl[i, k] > 0:
                gap = j.mass[i, k, 1] / pzl[i, k] - p1_l[k]
                if gap > 0:
                    total += pzl[i, k] * gap
    return float(total)


def dcfr_sup_bruteforce(j: DiscreteJoint) -> float:
    """sup of Q(h) over every indicator function h of the (z, l) cells."""
    k = j.n_cells
    if k > MAX_BRUTE_CELLS:
        raise InstanceTooLarge(f"brute-force sup capped at {MAX_BRUTE_CELLS} cells, got {k}")
    c = j.q_coefficients().ravel()
    # every h as a row of bits; code 0 is h == 0
    codes = np.arange(1 << k, dtype=np.int64)
    bits = (codes[:, None] >> np.arange(k)) & 1
    return float(max(0.0, (bits @ c).max()))


def _cond(j, z, l):
    try:
        i = j.z_values.index(z)
        k = j.l_values.index(l)
    except ValueError:
        raise InvalidInput(f"cell ({z!r}, {l!r}) not in the joint") from None
    cell = j.mass[i, k]
    col = j.mass[:, k]
    p_l = col.sum()
    p_a_l = col.sum(axis=0)
    p_zl = cell.sum()
    if p_l <= 0 or p_zl <= 0 or p_a_l[0] <= 0 or p_a_l[1] <= 0:
        raise DegenerateCondition(f"conditional probabilities undefined at z={z!r}, l={l!r}")
    return cell, p_l, p_a_l, p_zl


def ratio_identity(j: DiscreteJoint, z, l):
    """Both sides of the identity linking output gaps and sensitive-attribute gaps.

    lhs = |P(z|A=1,l) - P(z|A=0,l)| / |P(A=1|z,l) - P(A=1|l)|
    rhs = P(z|l) / (P(A=0|l) P(A=1|l))
    """
    cell, p_l, p_a_l, p_zl = _cond(j, z, l)
    num = abs(cell[1] / p_a_l[1] - cell[0] / p_a_l[0])
    den = abs(cell[1] / p_zl - p_a_l[1] / p_l)
    if den <= _ZERO:
        raise DegenerateCondition(
            f"P(A=1|z,l) equals P(A=1|l) at z={z!r}, l={l!r}; both sides are 0/0"
        )
    lhs = num / den
    rhs = (p_zl / p_l) / ((p_a_l[0] / p_l) * (p_a_l[1] / p_l))
    return float(lhs), float(rhs)


def bin_outputs(outputs, bins=10):
    """Discrete ids for continuous outputs: equal-frequency bins, or the values themselves if few."""
    y = np.asarray(outputs, dtype=float)
    uniq = np.unique(y)
    if uniq.size <= bins:
        return np.searchsorted(uniq, y)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ids, _, _ = discretize_quantiles(y, bins)
    return ids
