"""Exact solver for the balanced transportation problem.

Primal network simplex on the bipartite supply/demand graph (the classic
u-v / stepping-stone method): north-west-corner start, potentials from the
spanning tree, entering arc by most negative reduced cost, with Bland's rule
after a run of degenerate pivots to rule out cycling.
"""

from __future__ import annotations

from collections import deque

import numpy as np


class TransportError(ValueError):
    pass


def _northwest(supply: np.ndarray, demand: np.ndarray) -> tuple[np.ndarray, list[tuple[int, int]]]:
    m, n = len(supply), len(demand)
    flow = np.zeros((m, n))
    ra, rb = supply.astype(float).copy(), demand.astype(float).copy()
    basis = []
    i = j = 0
    while True:
        x = min(ra[i], rb[j])
        flow[i, j] = x
        basis.append((i, j))
        ra[i] -= x
        rb[j] -= x
        if i == m - 1 and j == n - 1:
            break
        if (ra[i] <= rb[j] and i < m - 1) or j == n - 1:
            i += 1
        else:
            j += 1
    return flow, basis


def _potentials(cost: np.ndarray, basis: list[tuple[int, int]], m: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    u = np.full(m, np.nan)
    v = np.full(n, np.nan)
    rows: list[list[int]] = [[] for _ in range(m)]
    cols: list[list[int]] = [[] for _ in range(n)]
    for i, j in basis:
        rows[i].append(j)
        cols[j].append(i)
    u[0] = 0.0
    queue = deque([("r", 0)])
    while queue:
        side, k = queue.popleft()
        if side == "r":
            for j in rows[k]:
                if np.isnan(v[j]):
                    v[j] = cost[k, j] - u[k]
                    queue.append(("c", j))
        else:
            for i in cols[k]:
                if np.isnan(u[i]):
                    u[i] = cost[i, k] - v[k]
                    queue.append(("r", i))
    if np.isnan(u).any() or np.isnan(v).any():
        raise TransportError("basis is not a spanning tree")
    return u, v


def _cycle(basis: list[tuple[int, int]], enter: tuple[int, int], m: int) -> list[tuple[int, int]]:
    """Cells of the cycle closed by ``enter``, starting with ``enter``."""
    p, q = enter
    adj: dict[int, list[tuple[int, tuple[int, int]]]] = {}
    for i, j in basis:
        adj.setdefault(i, []).append((m + j, (i, j)))
        adj.setdefault(m + j, []).append((i, (i, j)))
    start, goal = m + q, p
    prev: dict[int, tuple[int, tuple[int, int]] | None] = {start: None}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        if node == goal:
            break
        for nxt, cell in adj.get(node, ()):
            if nxt not in prev:
                prev[nxt] = (node, cell)
                queue.append(nxt)
    if goal not in prev:
        raise TransportError("entering cell does not close a cycle")
    path = []
    node = goal
    while prev[node] is not None:
        parent, cell = prev[node]
        path.append(cell)
        node = parent
    # path runs from row p back to column q; the cycle is enter, then column q onward
    return [enter] + path[::-1]


def solve_transport(
    supply, demand, cost, max_iter: int = 100_000, tol: float = 1e-12
) -> tuple[float, np.ndarray]:
    """Minimise ``sum(cost * plan)`` over plans with the given marginals.

    ``supply`` and ``demand`` must be non-negative with equal totals.
    Returns ``(optimal cost, plan)``.
    """
    supply = np.asarray(supply, dtype=float)
    demand = np.asarray(demand, dtype=float)
    cost = np.asarray(cost, dtype=float)
    m, n = len(supply), len(demand)
    if cost.shape != (m, n):
        raise TransportError(f"cost shape {cost.shape} != ({m}, {n})")
    if m == 0 or n == 0:
        raise TransportError("empty marginal")
    if (supply < 0).any() or (demand < 0).any():
        raise TransportError("negative mass")
    if not np.isclose(supply.sum(), demand.sum(), rtol=1e-9, atol=1e-12):
        raise TransportError("unbalanced marginals")

    flow, basis = _northwest(supply, demand)
    scale = max(1.0, float(np.abs(cost).max()))
    degenerate_run = 0
    for _ in range(max_iter):
        u, v = _potentials(cost, basis, m, n)
        reduced = cost - u[:, None] - v[None, :]
        for i, j in basis:
            reduced[i, j] = 0.0
        if degenerate_run < 50:
            flat = int(np.argmin(reduced))
            if reduced.flat[flat] >= -tol * scale:
                break
            enter = divmod(flat, n)
        else:
            negative = np.flatnonzero(reduced.ravel() < -tol * scale)
            if negative.size == 0:
                break
            enter = divmod(int(negative[0]), n)
        cycle = _cycle(basis, enter, m)
        minus = cycle[1::2]
        theta = min(flow[c] for c in minus)
        leaving = min((c for c in minus if flow[c] == theta), key=lambda c: c[0] * n + c[1])
        for k, c in enumerate(cycle):
            flow[c] += theta if k % 2 == 0 else -theta
        flow[leaving] = 0.0
        basis.remove(leaving)
        basis.append(enter)
        degenerate_run = degenerate_run + 1 if theta == 0 else 0
    else:
        raise TransportError("transport simplex did not converge")
    np.clip(flow, 0.0, None, out=flow)
    return float(np.sum(flow * cost)), flow
