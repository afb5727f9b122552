"""Minimum-cost bipartite assignment (Hungarian method).

The solver is the shortest-augmenting-path form of the Hungarian algorithm
with row/column potentials.  For an ``n x m`` matrix with ``n <= m`` it runs in
O(n^2 m); the inner minimum search over columns is vectorised.
"""
from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np


class Assignment(NamedTuple):
    columns: tuple  # per row: assigned column index or None
    cost: float

    def pairs(self) -> list[tuple[int, int]]:
        return [(i, j) for i, j in enumerate(self.columns) if j is not None]


def _hungarian(a: np.ndarray) -> np.ndarray:
    """Match every row of ``a`` (n <= m) to a distinct column; returns col per row."""
    n, m = a.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=int)  # p[j]: 1-based row matched to column j
    way = np.zeros(m + 1, dtype=int)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = a[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            masked = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(masked)) + 1  # lowest column index on ties
            delta = masked[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col_of_row = np.full(n, -1)
    for j in range(1, m + 1):
        if p[j]:
            col_of_row[p[j] - 1] = j - 1
    return col_of_row


def solve_assignment(cost, allow_skip: bool = False) -> Assignment:
    """Minimum-cost matching with at most one column per row and one row per column.

    Without ``allow_skip`` the matching has ``min(rows, cols)`` pairs.  With
    ``allow_skip`` any row or column may stay unmatched at zero cost, which is
    the same as padding with zero-cost dummy columns; pairs of cost >= 0 are
    then never needed and are dropped from the result.
    """
    c = np.asarray(cost, dtype=float)
    if c.ndim != 2 or c.size == 0:
        raise ValueError("cost must be a non-empty 2-D matrix")
    if not np.all(np.isfinite(c)):
        raise ValueError("cost entries must be finite")
    rows, cols = c.shape
    transposed = rows > cols
    work = c.T if transposed else c
    n = work.shape[0]
    if allow_skip:
        work = np.hstack([work, np.zeros((n, n))])
    match = _hungarian(work)

    columns = [None] * rows
    for r, k in enumerate(match):
        if k < 0 or k >= (cols if not transposed else rows):
            continue
        i, j = (k, r) if transposed else (r, k)
        if allow_skip and c[i, j] >= 0:
            continue
        columns[i] = j
    total = math.fsum(c[i, j] for i, j in enumerate(columns) if j is not None)
    return Assignment(tuple(columns), total)
