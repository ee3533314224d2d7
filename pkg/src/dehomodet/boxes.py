"""Axis-aligned box geometry: IoU, generalized IoU, and pairwise kernels.

Boxes live in normalized image coordinates as (cx, cy, w, h) with
strictly positive extent; values outside [0, 1] are legal (objects may
cross the frame border). All kernels are exact closed forms, symmetric
in their arguments, and vectorized via corner-form arrays internally.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = ["Box", "iou", "giou", "iou_distance", "pairwise"]


@dataclass(frozen=True)
class Box:
    """Center-form axis-aligned box; w and h must be strictly positive."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0.0 and self.h > 0.0):
            raise ValueError(f"degenerate box: w={self.w}, h={self.h} (both must be > 0)")
        for v in (self.cx, self.cy, self.w, self.h):
            if not np.isfinite(v):
                raise ValueError(f"non-finite box coordinate: {(self.cx, self.cy, self.w, self.h)}")

    @property
    def area(self) -> float:
        return self.w * self.h

    def corners(self) -> tuple[float, float, float, float]:
        """(x1, y1, x2, y2) with x1 < x2 and y1 < y2."""
        return (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )

    def to_list(self) -> list[float]:
        return [self.cx, self.cy, self.w, self.h]

    @staticmethod
    def from_list(values: Sequence[float]) -> "Box":
        if len(values) != 4:
            raise ValueError(f"box needs 4 values (cx, cy, w, h), got {len(values)}")
        return Box(float(values[0]), float(values[1]), float(values[2]), float(values[3]))


def to_corner_array(boxes: Sequence[Box]) -> np.ndarray:
    """(n, 4) corner-form array; empty input gives shape (0, 4)."""
    if not boxes:
        return np.zeros((0, 4))
    return np.array([b.corners() for b in boxes], dtype=np.float64)


def _pair_terms(a: Box, b: Box) -> tuple[float, float, float]:
    """(intersection, union, enclosing area) for one box pair.

    Areas come from the same corner coordinates as the intersection, so
    identical boxes give union == intersection == enclosing exactly and
    giou(a, a) is bitwise 1.0 even at non-dyadic coordinates.
    """
    ax1, ay1, ax2, ay2 = a.corners()
    bx1, by1, bx2, by2 = b.corners()
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    ew = max(ax2, bx2) - min(ax1, bx1)
    eh = max(ay2, by2) - min(ay1, by1)
    return inter, union, ew * eh


def iou(a: Box, b: Box) -> float:
    """Intersection over union, in [0, 1].

    The upper clamp absorbs float error on identical boxes with
    non-dyadic corners, where intersection can exceed area by an ulp.
    """
    inter, union, _ = _pair_terms(a, b)
    return min(inter / union, 1.0)


def giou(a: Box, b: Box) -> float:
    """Generalized IoU: IoU minus the enclosing-box penalty, in (-1, 1]."""
    inter, union, enclosing = _pair_terms(a, b)
    return min(inter / union - (enclosing - union) / enclosing, 1.0)


def iou_distance(a: Box, b: Box) -> float:
    """1 - IoU, in [0, 1]; zero only for geometrically identical boxes."""
    return 1.0 - iou(a, b)


def pairwise_corner_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU matrix between (n, 4) and (m, 4) corner-form arrays."""
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]))
    x1 = np.maximum(a[:, None, 0], b[None, :, 0])
    y1 = np.maximum(a[:, None, 1], b[None, :, 1])
    x2 = np.minimum(a[:, None, 2], b[None, :, 2])
    y2 = np.minimum(a[:, None, 3], b[None, :, 3])
    inter = np.clip(x2 - x1, 0.0, None) * np.clip(y2 - y1, 0.0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.minimum(inter / union, 1.0)


def pairwise_corner_giou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """GIoU matrix between (n, 4) and (m, 4) corner-form arrays."""
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]))
    x1 = np.maximum(a[:, None, 0], b[None, :, 0])
    y1 = np.maximum(a[:, None, 1], b[None, :, 1])
    x2 = np.minimum(a[:, None, 2], b[None, :, 2])
    y2 = np.minimum(a[:, None, 3], b[None, :, 3])
    inter = np.clip(x2 - x1, 0.0, None) * np.clip(y2 - y1, 0.0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    ex1 = np.minimum(a[:, None, 0], b[None, :, 0])
    ey1 = np.minimum(a[:, None, 1], b[None, :, 1])
    ex2 = np.maximum(a[:, None, 2], b[None, :, 2])
    ey2 = np.maximum(a[:, None, 3], b[None, :, 3])
    enclosing = (ex2 - ex1) * (ey2 - ey1)
    return np.minimum(inter / union - (enclosing - union) / enclosing, 1.0)


_KERNELS: dict[str, Callable[[Box, Box], float]] = {}


def pairwise(kernel: str | Callable[[Box, Box], float], a: Sequence[Box], b: Sequence[Box]) -> np.ndarray:
    """len(a) x len(b) matrix of kernel values.

    ``kernel`` is one of the names "iou", "giou", "iou_distance" (these
    use vectorized paths) or any callable Box x Box -> float.
    """
    if callable(kernel):
        out = np.zeros((len(a), len(b)))
        for i, bi in enumerate(a):
            for j, bj in enumerate(b):
                out[i, j] = kernel(bi, bj)
        return out
    if kernel not in _KERNELS:
        raise ValueError(f"unknown kernel {kernel!r}; expected one of {sorted(_KERNELS)}")
    ca, cb = to_corner_array(a), to_corner_array(b)
    if kernel == "iou":
        return pairwise_corner_iou(ca, cb)
    if kernel == "giou":
        return pairwise_corner_giou(ca, cb)
    return 1.0 - pairwise_corner_iou(ca, cb)


_KERNELS.update({"iou": iou, "giou": giou, "iou_distance": iou_distance})
