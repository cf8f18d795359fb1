"""Hot numerical kernels, each with a numba and a pure-numpy implementation.

The public names at the bottom dispatch on :func:`fairot._accel.numba_enabled`.
Both paths take and return plain float64 arrays so they can be swapped freely
and compared in tests and in ``benchmarks/bench_kernels.py``.
"""

import numpy as np

from . import _accel
from ._accel import njit

# ---------------------------------------------------------------------------
# ground cost |x_i - y_j|^p
# ---------------------------------------------------------------------------


@njit
def _cost_matrix_nb(x, y, p):
    m = x.shape[0]
    n = y.shape[0]
    out = np.empty((m, n))
    for i in range(m):
        for j in range(n):
            d = abs(x[i] - y[j])
            if p == 1.0:
                out[i, j] = d
            elif p == 2.0:
                out[i, j] = d * d
            else:
                out[i, j] = d**p
    return out


def _cost_matrix_np(x, y, p):
    d = np.abs(x[:, None] - y[None, :])
    if p == 1.0:
        return d
    if p == 2.0:
        return d * d
    return d**p


# ---------------------------------------------------------------------------
# 1-D monotone (quantile) coupling of sorted weighted atoms
# ---------------------------------------------------------------------------


@njit
def _monotone_plan_nb(xw, yw):
    m = xw.shape[0]
    n = yw.shape[0]
    rows = np.empty(m + n, dtype=np.int64)
    cols = np.empty(m + n, dtype=np.int64)
    mass = np.empty(m + n)
    k = 0
    i = 0
    j = 0
    wi = xw[0]
    wj = yw[0]
    while i < m and j < n:
        rows[k] = i
        cols[k] = j
        if wi < wj:
            mass[k] = wi
            wj -= wi
            i += 1
            if i < m:
                wi = xw[i]
        else:
            mass[k] = wj
            wi -= wj
            j += 1
            if j < n:
                wj = yw[j]
        k += 1
    return rows[:k], cols[:k], mass[:k]


def _monotone_plan_np(xw, yw):
    cx = np.cumsum(xw)
    cy = np.cumsum(yw)
    top = min(cx[-1], cy[-1])
    grid = np.unique(np.concatenate((cx, cy)))
    grid = grid[grid < top]
    grid = np.append(grid, top)
    lo = np.concatenate(([0.0], grid[:-1]))
    width = grid - lo
    keep = width > 0
    mid = (grid + lo)[keep] / 2.0
    rows = np.minimum(np.searchsorted(cx, mid), len(xw) - 1)
    cols = np.minimum(np.searchsorted(cy, mid), len(yw) - 1)
    return rows.astype(np.int64), cols.astype(np.int64), width[keep]


@njit
def _wasserstein_1d_nb(xv, xw, yv, yw, p):
    m = xv.shape[0]
    n = yv.shape[0]
    total = 0.0
    i = 0
    j = 0
    wi = xw[0]
    wj = yw[0]
    while i < m and j < n:
        d = abs(xv[i] - yv[j])
        if p == 1.0:
            c = d
        elif p == 2.0:
            c = d * d
        else:
            c = d**p
        if wi < wj:
            total += wi * c
            wj -= wi
            i += 1
            if i < m:
                wi = xw[i]
        else:
            total += wj * c
            wi -= wj
            j += 1
            if j < n:
                wj = yw[j]
    return total


def _wasserstein_1d_np(xv, xw, yv, yw, p):
    rows, cols, mass = _monotone_plan_np(xw, yw)
    d = np.abs(xv[rows] - yv[cols])
    return float(np.dot(mass, d**p))


# ---------------------------------------------------------------------------
# log-stabilised Sinkhorn
# ---------------------------------------------------------------------------
# State is a pair of dual potentials (f, g); the plan is exp((f_i + g_j - C_ij) / eps).
# Inner sweeps run plain matrix scaling on the kernel K = exp((f + g - C) / eps)
# with multipliers (u, v), which stay near 1 because K is rebuilt from the current
# potentials.  Whenever a multiplier leaves [e^-ABSORB, e^ABSORB] or a kernel
# column/row underflows, (u, v) are absorbed into (f, g) and K is rebuilt.
#
# Each sweep sets v so the columns are exact, then measures the row violation
# max_i |u_i (K v)_i - a_i| before updating u.  On convergence the returned
# potentials are the pre-update ones: exact columns, row violation < tol.

ABSORB = 40.0


@njit
def _lse_rows_nb(C, g, log_a, eps, out):
    # out_i = eps * log a_i - eps * log sum_j exp((g_j - C_ij) / eps)
    m = C.shape[0]
    n = C.shape[1]
    for i in range(m):
        row = C[i]
        mx = -np.inf
        for j in range(n):
            val = g[j] - row[j]
            if val > mx:
                mx = val
        s = 0.0
        for j in range(n):
            s += np.exp((g[j] - row[j] - mx) / eps)
        out[i] = eps * log_a[i] - mx - eps * np.log(s)


@njit
def _sinkhorn_log_nb(C, CT, log_a, log_b, eps, f, g, max_iter, tol):
    m = C.shape[0]
    n = C.shape[1]
    a = np.exp(log_a)
    b = np.exp(log_b)
    K = np.empty((m, n))
    u = np.ones(m)
    v = np.ones(n)
    Ktu = np.empty(n)
    Kv = np.empty(m)
    lim = np.exp(ABSORB)
    err = np.inf
    it = 0
    rebuild = True
    while it < max_iter:
        if rebuild:
            # absorb v, then an exact f update keeps every kernel row sum at a_i
            for j in range(n):
                g[j] += eps * np.log(v[j])
                v[j] = 1.0
            _lse_rows_nb(C, g, log_a, eps, f)
            for i in range(m):
                u[i] = 1.0
                for j in range(n):
                    K[i, j] = np.exp((f[i] + g[j] - C[i, j]) / eps)
            rebuild = False
        it += 1
        for j in range(n):
            Ktu[j] = 0.0
        for i in range(m):
            ui = u[i]
            for j in range(n):
                Ktu[j] += K[i, j] * ui
        bad = False
        for j in range(n):
            if not Ktu[j] > 0.0:
                bad = True
                break
        if bad:
            # a kernel column underflowed: exact g update, then rebuild
            for i in range(m):
                f[i] += eps * np.log(u[i])
                u[i] = 1.0
            _lse_rows_nb(CT, f, log_b, eps, g)
            for j in range(n):
                v[j] = 1.0
            rebuild = True
            continue
        for j in range(n):
            v[j] = b[j] / Ktu[j]
        err = 0.0
        for i in range(m):
            s = 0.0
            for j in range(n):
                s += K[i, j] * v[j]
            Kv[i] = s
            e = abs(u[i] * s - a[i])
            if not e <= err:
                err = e
        if err < tol:
            break
        for i in range(m):
            if Kv[i] > 0.0:
                u[i] = a[i] / Kv[i]
                if u[i] > lim or u[i] * lim < 1.0:
                    rebuild = True
            else:
                rebuild = True
        for j in range(n):
            if v[j] > lim or v[j] * lim < 1.0:
                rebuild = True
    for i in range(m):
        f[i] += eps * np.log(u[i])
    for j in range(n):
        g[j] += eps * np.log(v[j])
    return f, g, it, err


def _lse(z, axis):
    mx = np.max(z, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(z - mx), axis=axis, keepdims=True)) + mx
    return np.squeeze(out, axis=axis)


def _sinkhorn_log_np(C, CT, log_a, log_b, eps, f, g, max_iter, tol):
    a = np.exp(log_a)
    b = np.exp(log_b)
    f = f.copy()
    g = g.copy()
    u = np.ones_like(f)
    v = np.ones_like(g)
    lim = np.exp(ABSORB)
    err = np.inf
    it = 0
    rebuild = True
    while it < max_iter:
        if rebuild:
            g += eps * np.log(v)
            v = np.ones_like(g)
            f = eps * log_a - eps * _lse((g[None, :] - C) / eps, axis=1)
            u = np.ones_like(f)
            K = np.exp((f[:, None] + g[None, :] - C) / eps)
            rebuild = False
        it += 1
        Ktu = u @ K
        if not np.all(Ktu > 0):
            f += eps * np.log(u)
            u = np.ones_like(f)
            g = eps * log_b - eps * _lse((f[:, None] - C) / eps, axis=0)
            rebuild = True
            continue
        v = b / Ktu
        Kv = K @ v
        err = float(np.max(np.abs(u * Kv - a)))
        if err < tol:
            break
        if not np.all(Kv > 0):
            rebuild = True
            continue
        u = a / Kv
        if np.any((u > lim) | (u * lim < 1.0)) or np.any((v > lim) | (v * lim < 1.0)):
            rebuild = True
    return f + eps * np.log(u), g + eps * np.log(v), it, err


@njit
def _plan_from_potentials_nb(C, f, g, eps):
    m = C.shape[0]
    n = C.shape[1]
    P = np.empty((m, n))
    for i in range(m):
        for j in range(n):
            P[i, j] = np.exp((f[i] + g[j] - C[i, j]) / eps)
    return P


def _plan_from_potentials_np(C, f, g, eps):
    return np.exp((f[:, None] + g[None, :] - C) / eps)


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def _pick(nb, np_):
    return nb if _accel.numba_enabled() else np_


def cost_matrix(x, y, p):
    """Dense matrix of |x_i - y_j|^p."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    return _pick(_cost_matrix_nb, _cost_matrix_np)(x, y, float(p))


def monotone_plan(xw, yw):
    """Quantile coupling of two sorted weight vectors as (rows, cols, mass) triplets."""
    xw = np.ascontiguousarray(xw, dtype=np.float64)
    yw = np.ascontiguousarray(yw, dtype=np.float64)
    return _pick(_monotone_plan_nb, _monotone_plan_np)(xw, yw)


def wasserstein_1d_sorted(xv, xw, yv, yw, p):
    """W_p^p between two sorted weighted 1-D atom sets."""
    args = [np.ascontiguousarray(v, dtype=np.float64) for v in (xv, xw, yv, yw)]
    return float(_pick(_wasserstein_1d_nb, _wasserstein_1d_np)(*args, float(p)))


def sinkhorn_log(C, log_a, log_b, eps, f, g, max_iter, tol):
    """Run Sinkhorn sweeps from potentials (f, g); returns (f, g, iterations, row_violation)."""
    C = np.ascontiguousarray(C, dtype=np.float64)
    CT = np.ascontiguousarray(C.T)
    f = np.array(f, dtype=np.float64)
    g = np.array(g, dtype=np.float64)
    fn = _pick(_sinkhorn_log_nb, _sinkhorn_log_np)
    f, g, it, err = fn(C, CT, log_a, log_b, float(eps), f, g, int(max_iter), float(tol))
    return f, g, int(it), float(err)


def plan_from_potentials(C, f, g, eps):
    C = np.ascontiguousarray(C, dtype=np.float64)
    return _pick(_plan_from_potentials_nb, _plan_from_potentials_np)(C, f, g, float(eps))
