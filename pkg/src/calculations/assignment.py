"""
Optimal linear assignment on rectangular cost matrices with forbidden
(+inf) entries.

Successive shortest augmenting paths: each augmentation adds one pair at
minimum extra cost, so the final matching has maximum cardinality among
finite-cost matchings and minimum total cost among those.
"""

import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

logger = logging.getLogger(__name__)

_EPS = 1e-12


@dataclass(frozen=True)
class Assignment:
    """Matched (row, col) pairs, sorted by row, and their total cost."""
    pairs: Tuple[Tuple[int, int], ...]
    cost: float
    shape: Tuple[int, int]

    def rows(self) -> List[int]:
        return [r for r, _ in self.pairs]

    def cols(self) -> List[int]:
        return [c for _, c in self.pairs]

    def unmatched_rows(self) -> List[int]:
        taken = set(self.rows())
        return [r for r in range(self.shape[0]) if r not in taken]

    def unmatched_cols(self) -> List[int]:
        taken = set(self.cols())
        return [c for c in range(self.shape[1]) if c not in taken]

    def as_dict(self) -> dict:
        return dict(self.pairs)


def as_cost_matrix(cost) -> np.ndarray:
    """Validate and coerce to a 2D float array with entries >= 0 or +inf."""
    c = np.asarray(cost, dtype=float)
    if c.ndim == 1 and c.size == 0:
        c = c.reshape(0, 0)
    if c.ndim != 2:
        raise ValueError(f"Cost matrix must be 2D, got {c.ndim}D")
    if np.isnan(c).any():
        raise ValueError("Cost matrix contains NaN")
    if (c < 0).any():
        raise ValueError("Cost matrix entries must be >= 0 or +inf")
    return c


def _shortest_paths(c: np.ndarray, feasible: np.ndarray, row_match: np.ndarray,
                    col_match: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Bellman-Ford over the residual graph from every free row.

    Forward arcs row->col on unmatched feasible pairs cost c[i, j];
    backward arcs col->row on matched pairs cost -c[i, j].
    """
    n, m = c.shape
    dist_row = np.where(row_match < 0, 0.0, np.inf)
    dist_col = np.full(m, np.inf)
    pred = np.full(m, -1, dtype=int)

    forward = feasible.copy()
    matched_rows = np.nonzero(row_match >= 0)[0]
    forward[matched_rows, row_match[matched_rows]] = False
    arc = np.where(forward, c, np.inf)

    for _ in range(n + m + 1):
        cand = dist_row[:, None] + arc
        best_row = np.argmin(cand, axis=0)
        best = cand[best_row, np.arange(m)]
        improved = best < dist_col - _EPS
        if not improved.any():
            break
        dist_col = np.where(improved, best, dist_col)
        pred = np.where(improved, best_row, pred)

        mates = col_match >= 0
        cols = np.nonzero(mates)[0]
        rows = col_match[cols]
        via = dist_col[cols] - c[rows, cols]
        better = via < dist_row[rows] - _EPS
        dist_row[rows[better]] = via[better]
    return dist_col, pred


def solve(cost) -> Assignment:
    """
    Maximum-cardinality, minimum-cost matching of rows to columns.

    Pairs with +inf cost never appear. Ties resolve towards lower indices.
    """
    c = as_cost_matrix(cost)
    n, m = c.shape
    if n == 0 or m == 0:
        return Assignment((), 0.0, (n, m))

    feasible = np.isfinite(c)
    row_match = np.full(n, -1, dtype=int)
    col_match = np.full(m, -1, dtype=int)

    for _ in range(min(n, m)):
        dist_col, pred = _shortest_paths(c, feasible, row_match, col_match)
        free_cols = np.nonzero((col_match < 0) & np.isfinite(dist_col))[0]
        if free_cols.size == 0:
            break
        j = int(free_cols[np.argmin(dist_col[free_cols])])
        while True:
            i = int(pred[j])
            prev = int(row_match[i])
            row_match[i] = j
            col_match[j] = i
            if prev < 0:
                break
            j = prev

    pairs = tuple((int(i), int(row_match[i])) for i in range(n) if row_match[i] >= 0)
    total = float(sum(c[i, j] for i, j in pairs))
    logger.debug("Assigned %d of %dx%d (cost %.4f)", len(pairs), n, m, total)
    return Assignment(pairs, total, (n, m))
