"""Shared independent oracles used by unit tests and the acceptance suite.

These deliberately avoid the library's own kernels: geometry is checked
by counting raster cells, assignment by permutation enumeration, and
suppression by a structurally different quadratic pass. Expected values
in the test modules were computed with these and then frozen.
"""

import itertools

import numpy as np

from dehomodet.boxes import Box


def raster_iou_2d(a: Box, b: Box, n: int = 1500) -> float:
    """IoU by counting cell centers on an n x n grid over the enclosing span."""
    ax1, ay1, ax2, ay2 = a.corners()
    bx1, by1, bx2, by2 = b.corners()
    x_lo, x_hi = min(ax1, bx1), max(ax2, bx2)
    y_lo, y_hi = min(ay1, by1), max(ay2, by2)
    xs = x_lo + (np.arange(n) + 0.5) * (x_hi - x_lo) / n
    ys = y_lo + (np.arange(n) + 0.5) * (y_hi - y_lo) / n
    in_a = ((xs >= ax1) & (xs <= ax2))[:, None] & ((ys >= ay1) & (ys <= ay2))[None, :]
    in_b = ((xs >= bx1) & (xs <= bx2))[:, None] & ((ys >= by1) & (ys <= by2))[None, :]
    inter = np.count_nonzero(in_a & in_b)
    union = np.count_nonzero(in_a | in_b)
    return inter / union


def raster_iou(a: Box, b: Box, n: int = 50_000) -> float:
    """Counting IoU with per-axis counts (rectangles factor over axes)."""
    ax1, ay1, ax2, ay2 = a.corners()
    bx1, by1, bx2, by2 = b.corners()
    x_lo, x_hi = min(ax1, bx1), max(ax2, bx2)
    y_lo, y_hi = min(ay1, by1), max(ay2, by2)
    xs = x_lo + (np.arange(n) + 0.5) * (x_hi - x_lo) / n
    ys = y_lo + (np.arange(n) + 0.5) * (y_hi - y_lo) / n
    ax_c = np.count_nonzero((xs >= ax1) & (xs <= ax2))
    ay_c = np.count_nonzero((ys >= ay1) & (ys <= ay2))
    bx_c = np.count_nonzero((xs >= bx1) & (xs <= bx2))
    by_c = np.count_nonzero((ys >= by1) & (ys <= by2))
    ix_c = np.count_nonzero((xs >= max(ax1, bx1)) & (xs <= min(ax2, bx2)))
    iy_c = np.count_nonzero((ys >= max(ay1, by1)) & (ys <= min(ay2, by2)))
    inter = ix_c * iy_c
    union = ax_c * ay_c + bx_c * by_c - inter
    return inter / union


def raster_giou(a: Box, b: Box, n: int = 50_000) -> float:
    """Counting GIoU: raster IoU minus the counted enclosure penalty."""
    ax1, ay1, ax2, ay2 = a.corners()
    bx1, by1, bx2, by2 = b.corners()
    x_lo, x_hi = min(ax1, bx1), max(ax2, bx2)
    y_lo, y_hi = min(ay1, by1), max(ay2, by2)
    xs = x_lo + (np.arange(n) + 0.5) * (x_hi - x_lo) / n
    ys = y_lo + (np.arange(n) + 0.5) * (y_hi - y_lo) / n
    ax_c = np.count_nonzero((xs >= ax1) & (xs <= ax2))
    ay_c = np.count_nonzero((ys >= ay1) & (ys <= ay2))
    bx_c = np.count_nonzero((xs >= bx1) & (xs <= bx2))
    by_c = np.count_nonzero((ys >= by1) & (ys <= by2))
    ix_c = np.count_nonzero((xs >= max(ax1, bx1)) & (xs <= min(ax2, bx2)))
    iy_c = np.count_nonzero((ys >= max(ay1, by1)) & (ys <= min(ay2, by2)))
    inter = ix_c * iy_c
    union = ax_c * ay_c + bx_c * by_c - inter
    enclosing = n * n  # the grid spans exactly the enclosing box
    return inter / union - (enclosing - union) / enclosing


def random_box(rng: np.random.Generator, size_lo: float = 0.15, size_hi: float = 0.5) -> Box:
    return Box(
        cx=float(rng.uniform(0.2, 0.8)),
        cy=float(rng.uniform(0.2, 0.8)),
        w=float(rng.uniform(size_lo, size_hi)),
        h=float(rng.uniform(size_lo, size_hi)),
    )


def brute_force_min_cost(cost: np.ndarray) -> float:
    """Minimum total cost over all maximal one-to-one assignments, by enumeration."""
    n_rows, n_cols = cost.shape
    k = min(n_rows, n_cols)
    if k == 0:
        return 0.0
    best = np.inf
    rows = range(n_rows)
    for row_subset in itertools.combinations(rows, k):
        for col_perm in itertools.permutations(range(n_cols), k):
            total = sum(cost[r, c] for r, c in zip(row_subset, col_perm))
            best = min(best, total)
    return best


def reference_nms_keep(boxes, scores, iou_fn, thresh):
    """Quadratic suppression-matrix NMS, structured differently from the library's.

    Builds the full pairwise IoU matrix first, then scans score order and
    marks every strictly-greater-than-threshold overlap with a kept box.
    """
    order = sorted(range(len(boxes)), key=lambda i: (-scores[i], i))
    m = len(boxes)
    over = np.zeros((m, m), dtype=bool)
    for i in range(m):
        for j in range(m):
            if i != j:
                over[i, j] = iou_fn(boxes[i], boxes[j]) > thresh
    kept = []
    for i in order:
        if not any(over[i, j] for j in kept):
            kept.append(i)
    return kept
