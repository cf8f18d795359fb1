"""Exact discrete optimal transport by the transportation simplex method.

Starts from the north-west-corner basis and pivots on reduced costs computed
from dual potentials (u-v / MODI method).  The basis is kept as a spanning
tree over the m row nodes and n column nodes, so every basic solution is a
vertex of the transport polytope.  Dantzig's rule picks the entering cell;
after a run of degenerate pivots it switches to Bland's rule (lowest index
for both entering and leaving cell), which cannot cycle.
"""

from collections import deque

import numpy as np

from .errors import NumericFailure


def _northwest_corner(a, b):
    m, n = len(a), len(b)
    x = np.zeros((m, n))
    basis = []
    ra = a.astype(float).copy()
    rb = b.astype(float).copy()
    i = j = 0
    while True:
        q = min(ra[i], rb[j])
        x[i, j] = q
        basis.append((i, j))
        ra[i] -= q
        rb[j] -= q
        if i == m - 1 and j == n - 1:
            break
        if i == m - 1:
            j += 1
        elif j == n - 1:
            i += 1
        elif ra[i] <= rb[j]:
            i += 1
        else:
            j += 1
    return x, basis


def _tree(m, n, basis, C):
    """Potentials u, v plus parent pointers of the basis tree rooted at row 0."""
    adj = [[] for _ in range(m + n)]
    for i, j in basis:
        adj[i].append(m + j)
        adj[m + j].append(i)
    pot = np.zeros(m + n)
    parent = np.full(m + n, -1)
    depth = np.zeros(m + n, dtype=int)
    seen = np.zeros(m + n, dtype=bool)
    seen[0] = True
    queue = deque([0])
    while queue:
        node = queue.popleft()
        for nxt in adj[node]:
            if seen[nxt]:
                continue
            seen[nxt] = True
            parent[nxt] = node
            depth[nxt] = depth[node] + 1
            if node < m:
                pot[nxt] = C[node, nxt - m] - pot[node]
            else:
                pot[nxt] = C[nxt, node - m] - pot[node]
            queue.append(nxt)
    if not seen.all():
        raise NumericFailure("transport simplex basis is not a spanning tree")
    return pot[:m], pot[m:], parent, depth


def _tree_path(start, end, parent, depth):
    """Node sequence from ``start`` to ``end`` along the tree."""
    left = [start]
    right = [end]
    s, e = start, end
    while depth[s] > depth[e]:
        s = parent[s]
        left.append(s)
    while depth[e] > depth[s]:
        e = parent[e]
        right.append(e)
    while s != e:
        s = parent[s]
        e = parent[e]
        left.append(s)
        right.append(e)
    return left + right[-2::-1]


def transport_simplex(C, a, b, max_pivots=None):
    """Solve min <X, C> over couplings of ``a`` and ``b``; returns (value, plan)."""
    C = np.asarray(C, dtype=float)
    m, n = C.shape
    if m == 1 or n == 1:
        # the product coupling is the only feasible plan
        x = np.outer(a, b)
        return float(np.sum(x * C)), x
    x, basis = _northwest_corner(np.asarray(a), np.asarray(b))
    in_basis = np.zeros((m, n), dtype=bool)
    for cell in basis:
        in_basis[cell] = True
    scale = max(float(np.abs(C).max()), 1e-300)
    tol = 1e-12 * scale
    if max_pivots is None:
        max_pivots = 50 * m * n + 1000
    degenerate_run = 0
    bland = False
    for _ in range(max_pivots):
        u, v, parent, depth = _tree(m, n, basis, C)
        reduced = C - u[:, None] - v[None, :]
        reduced[in_basis] = 0.0
        if bland:
            candidates = np.flatnonzero(reduced < -tol)
            if candidates.size == 0:
                break
            flat = candidates[0]
        else:
            flat = int(np.argmin(reduced))
            if reduced.flat[flat] >= -tol:
                break
        ei, ej = divmod(int(flat), n)
        nodes = _tree_path(ei, m + ej, parent, depth)
        cells = []
        for k in range(len(nodes) - 1):
            p_, q_ = nodes[k], nodes[k + 1]
            cells.append((p_, q_ - m) if p_ < m else (q_, p_ - m))
        minus = cells[0::2]
        plus = cells[1::2]
        theta = min(x[c] for c in minus)
        ties = [c for c in minus if x[c] <= theta]
        leave = min(ties, key=lambda c: c[0] * n + c[1]) if bland else ties[0]
        for c in minus:
            x[c] -= theta
        for c in plus:
            x[c] += theta
        x[ei, ej] = theta
        x[leave] = 0.0
        in_basis[leave] = False
        in_basis[ei, ej] = True
        basis.remove(leave)
        basis.append((ei, ej))
        if theta <= 0.0:
            degenerate_run += 1
            if degenerate_run > 2 * (m + n):
                bland = True
        else:
            degenerate_run = 0
            bland = False
    else:
        raise NumericFailure(f"transport simplex exceeded {max_pivots} pivots")
    np.maximum(x, 0.0, out=x)
    return float(np.sum(x * C)), x
