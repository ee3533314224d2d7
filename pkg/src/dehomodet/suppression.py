"""Post-hoc duplicate suppression baselines: NMS, Soft-NMS, adaptive NMS.

These exist as reference behavior to compare the end-to-end pipeline
against; the trained detector itself never calls them. All three are
greedy over score order with deterministic tie-breaking (score
descending, then input index ascending).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Sequence

from .boxes import Box, iou

__all__ = ["Detection", "nms", "soft_nms", "adaptive_nms", "max_overlap_density"]


@dataclass(frozen=True)
class Detection:
    """A scored box, optionally tagged with its source image and decoder stage."""

    box: Box
    score: float
    image_id: int | str | None = None
    stage: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score must be in [0, 1], got {self.score}")


def _score_order(dets: Sequence[Detection]) -> list[int]:
    return sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))


def nms(dets: Sequence[Detection], iou_thresh: float) -> list[Detection]:
    """Greedy NMS: drop any detection overlapping a kept one by IoU strictly above the threshold.

    Returns survivors in descending score order with scores untouched.
    """
    if not 0.0 <= iou_thresh <= 1.0:
        raise ValueError(f"iou threshold must be in [0, 1], got {iou_thresh}")
    kept: list[Detection] = []
    for i in _score_order(dets):
        cand = dets[i]
        if all(iou(cand.box, k.box) <= iou_thresh for k in kept):
            kept.append(cand)
    return kept


def soft_nms(
    dets: Sequence[Detection],
    sigma: float = 0.5,
    score_floor: float = 1e-3,
) -> list[Detection]:
    """Gaussian Soft-NMS: rescore instead of dropping.

    Iteratively selects the highest currently-scored detection, then
    decays every remaining score by exp(-IoU^2 / sigma) against the
    selection. Detections falling below ``score_floor`` are discarded.
    Output is ordered by selection, i.e. descending rescored order.
    """
    if sigma <= 0.0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    remaining = [(i, dets[i].score) for i in range(len(dets))]
    out: list[Detection] = []
    while remaining:
        # max current score, ties to the lowest original index
        best_pos = min(range(len(remaining)), key=lambda k: (-remaining[k][1], remaining[k][0]))
        idx, score = remaining.pop(best_pos)
        out.append(replace(dets[idx], score=score))
        decayed = []
        for j, s in remaining:
            v = iou(dets[idx].box, dets[j].box)
            s2 = s * math.exp(-(v * v) / sigma)
            if s2 >= score_floor:
                decayed.append((j, s2))
        remaining = decayed
    return out


def adaptive_nms(
    dets: Sequence[Detection],
    base_thresh: float,
    density_of: Mapping[Box, float] | Callable[[Box], float],
) -> list[Detection]:
    """NMS whose per-box threshold is max(base threshold, local density).

    ``density_of`` maps each kept box to its crowding estimate in [0, 1];
    a missing box is an error. Denser neighborhoods raise the kept box's
    suppression threshold, so crowded true positives survive.
    """
    if not 0.0 <= base_thresh <= 1.0:
        raise ValueError(f"base threshold must be in [0, 1], got {base_thresh}")
    kept: list[tuple[Detection, float]] = []
    for i in _score_order(dets):
        cand = dets[i]
        suppressed = False
        for k, thresh_k in kept:
            if iou(cand.box, k.box) > thresh_k:
                suppressed = True
                break
        if not suppressed:
            kept.append((cand, _lookup_density(density_of, cand.box, base_thresh)))
    return [d for d, _ in kept]


def _lookup_density(
    density_of: Mapping[Box, float] | Callable[[Box], float],
    box: Box,
    base_thresh: float,
) -> float:
    if callable(density_of):
        d = density_of(box)
    else:
        try:
            d = density_of[box]
        except KeyError as exc:
            raise ValueError(f"no density known for box {box}") from exc
    if not 0.0 <= d <= 1.0:
        raise ValueError(f"density must be in [0, 1], got {d} for {box}")
    return max(base_thresh, d)


def max_overlap_density(boxes: Sequence[Box]) -> dict[Box, float]:
    """Density estimate per box: its maximum IoU with any *other* box.

    The usual ground-truth density definition for adaptive NMS; isolated
    boxes get 0.
    """
    out: dict[Box, float] = {}
    for i, b in enumerate(boxes):
        best = 0.0
        for j, other in enumerate(boxes):
            if i != j:
                best = max(best, iou(b, other))
        out[b] = best
    return out
