"""Box overlap measures and one-to-one assignment.

Walks through IoU and generalized IoU on hand-built boxes, confirms
the generalized form against a pixel-counting estimate, then matches
a small prediction set to ground truth with the Hungarian solver.

Run:
    python demos/box_geometry.py
"""

from __future__ import annotations

import numpy as np

from dehomodet.boxes import Box, giou, iou
from dehomodet.matching import hungarian, match_cost


def raster_estimate(a: Box, b: Box, cells: int = 400) -> tuple[float, float]:
    """Estimate IoU and generalized IoU by counting grid cells."""
    xs = np.linspace(0.0, 1.0, cells, endpoint=False) + 0.5 / cells
    gx, gy = np.meshgrid(xs, xs)

    def inside(box: Box) -> np.ndarray:
        x0, y0, x1, y1 = box.corners()
        return (gx >= x0) & (gx < x1) & (gy >= y0) & (gy < y1)

    ia, ib = inside(a), inside(b)
    inter = float(np.sum(ia & ib))
    union = float(np.sum(ia | ib))
    x0 = min(a.corners()[0], b.corners()[0])
    y0 = min(a.corners()[1], b.corners()[1])
    x1 = max(a.corners()[2], b.corners()[2])
    y1 = max(a.corners()[3], b.corners()[3])
    hull = (gx >= x0) & (gx < x1) & (gy >= y0) & (gy < y1)
    h = float(np.sum(hull))
    return inter / union, inter / union - (h - union) / h


def overlap_tour() -> None:
    a = Box(0.25, 0.25, 0.5, 0.5)
    b = Box(0.5, 0.5, 0.5, 0.5)
    print(f"iou(a, b)  = {iou(a, b):.6f}  (exact 1/7 = {1 / 7:.6f})")
    print(f"giou(a, b) = {giou(a, b):.6f}  (exact -5/63 = {-5 / 63:.6f})")
    est_iou, est_giou = raster_estimate(a, b)
    print(f"raster estimate: iou {est_iou:.4f}, giou {est_giou:.4f}")

    # Disjoint boxes: IoU flattens to 0 but generalized IoU still ranks
    # them by how far apart they are.
    near = Box(0.40, 0.2, 0.2, 0.2)
    far = Box(0.85, 0.2, 0.2, 0.2)
    ref = Box(0.15, 0.2, 0.2, 0.2)
    print("disjoint: iou", iou(ref, near), iou(ref, far))
    print("disjoint: giou near", round(giou(ref, near), 4), "far", round(giou(ref, far), 4))


def assignment_tour() -> None:
    gts = [Box(0.2, 0.2, 0.2, 0.2), Box(0.6, 0.6, 0.25, 0.25)]
    preds = [
        Box(0.62, 0.58, 0.25, 0.25),  # close to gt 1
        Box(0.22, 0.21, 0.18, 0.2),   # close to gt 0
        Box(0.9, 0.1, 0.1, 0.1),      # matches nothing well
    ]
    scores = np.array([0.9, 0.8, 0.7])
    cost = match_cost(preds, scores, gts)
    print("cost matrix:\n", np.round(cost, 3))
    result = hungarian(cost)
    for r, c in result.pairs:
        print(f"prediction {r} -> ground truth {c}, cost {cost[r, c]:.3f}")
    print("unmatched predictions:", result.unmatched_rows)


def main() -> None:
    overlap_tour()
    print()
    assignment_tour()


if __name__ == "__main__":
    main()
