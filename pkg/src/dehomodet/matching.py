"""One-to-one assignment between predictions and ground truths.

The production path builds a detection-style cost matrix (score, L1,
GIoU terms) and solves it with scipy's linear sum assignment. The
brute-force enumerator exists as an independent check for small
instances and stays deliberately naive.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .boxes import Box, pairwise_corner_giou, to_corner_array

__all__ = ["Assignment", "DEFAULT_COST_WEIGHTS", "match_cost", "hungarian", "brute_force_assign"]

# (w_cls, w_l1, w_giou): score term weight, box L1 weight, GIoU term weight.
DEFAULT_COST_WEIGHTS: tuple[float, float, float] = (2.0, 5.0, 2.0)


@dataclass
class Assignment:
    """Result of a one-to-one matching over a cost matrix."""

    pairs: list[tuple[int, int]]
    unmatched_rows: list[int] = field(default_factory=list)
    unmatched_cols: list[int] = field(default_factory=list)

    def total_cost(self, cost: np.ndarray) -> float:
        return float(sum(cost[r, c] for r, c in self.pairs))

    @property
    def row_to_col(self) -> dict[int, int]:
        return dict(self.pairs)


def match_cost(
    pred_boxes: Sequence[Box],
    pred_scores: Sequence[float],
    gt_boxes: Sequence[Box],
    weights: tuple[float, float, float] = DEFAULT_COST_WEIGHTS,
) -> np.ndarray:
    """Detection matching cost: w_cls * (-score) + w_l1 * L1 + w_giou * (1 - GIoU).

    Rows are predictions, columns ground truths. A perfect prediction
    (score 1 on top of its GT) costs exactly -w_cls.
    """
    if len(pred_boxes) != len(pred_scores):
        raise ValueError(f"{len(pred_boxes)} boxes vs {len(pred_scores)} scores")
    w_cls, w_l1, w_giou = (float(w) for w in weights)
    n, m = len(pred_boxes), len(gt_boxes)
    if n == 0 or m == 0:
        return np.zeros((n, m))
    p = np.array([b.to_list() for b in pred_boxes], dtype=np.float64)
    g = np.array([b.to_list() for b in gt_boxes], dtype=np.float64)
    l1 = np.abs(p[:, None, :] - g[None, :, :]).sum(axis=2)
    giou_mat = pairwise_corner_giou(to_corner_array(pred_boxes), to_corner_array(gt_boxes))
    scores = np.asarray(pred_scores, dtype=np.float64)
    cost = w_cls * (-scores)[:, None] + w_l1 * l1 + w_giou * (1.0 - giou_mat)
    if not np.isfinite(cost).all():
        raise ValueError("match_cost produced non-finite entries")
    return cost


def hungarian(cost: np.ndarray) -> Assignment:
    """Minimum-total-cost one-to-one assignment of min(rows, cols) pairs.

    Finite costs required. Empty matrices give an empty assignment with
    every row/column unmatched.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"cost matrix must be 2-D, got shape {cost.shape}")
    if not np.isfinite(cost).all():
        raise ValueError("cost matrix contains non-finite entries")
    n, m = cost.shape
    if n == 0 or m == 0:
        return Assignment(pairs=[], unmatched_rows=list(range(n)), unmatched_cols=list(range(m)))
    rows, cols = linear_sum_assignment(cost)
    pairs = sorted(zip(rows.tolist(), cols.tolist()))
    matched_r = {r for r, _ in pairs}
    matched_c = {c for _, c in pairs}
    return Assignment(
        pairs=pairs,
        unmatched_rows=[r for r in range(n) if r not in matched_r],
        unmatched_cols=[c for c in range(m) if c not in matched_c],
    )


def brute_force_assign(cost: np.ndarray) -> Assignment:
    """Exhaustive minimum assignment for min(rows, cols) <= 8.

    Enumerates every maximal injection; ties resolve to the
    lexicographically smallest pair list, so results are deterministic.
    """
    cost = np.asarray(cost, dtype=np.float64)
    n, m = cost.shape
    k = min(n, m)
    if k > 8:
        raise ValueError(f"brute force capped at 8 pairs, got min(rows, cols) = {k}")
    if k == 0:
        return Assignment(pairs=[], unmatched_rows=list(range(n)), unmatched_cols=list(range(m)))
    best_total = np.inf
    best_pairs: list[tuple[int, int]] | None = None
    for row_subset in itertools.combinations(range(n), k):
        for col_perm in itertools.permutations(range(m), k):
            total = sum(cost[r, c] for r, c in zip(row_subset, col_perm))
            pairs = sorted(zip(row_subset, col_perm))
            if total < best_total - 1e-15 or (
                abs(total - best_total) <= 1e-15 and (best_pairs is None or pairs < best_pairs)
            ):
                best_total = total
                best_pairs = pairs
    assert best_pairs is not None
    matched_r = {r for r, _ in best_pairs}
    matched_c = {c for _, c in best_pairs}
    return Assignment(
        pairs=best_pairs,
        unmatched_rows=[r for r in range(n) if r not in matched_r],
        unmatched_cols=[c for c in range(m) if c not in matched_c],
    )
