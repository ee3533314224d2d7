"""Detection metrics and diagnostics.

Protocol choices that the numbers depend on:
- True positives are assigned greedily in score order, each detection
  taking the highest-IoU still-unmatched GT at or above the threshold.
- Average precision is the exact all-point area under the PR curve at a
  single IoU threshold (0.5 unless stated).
- The log-average miss rate samples 9 FPPI references log-uniform in
  [1e-2, 1], reading the curve at the largest FPPI not above each
  reference, miss rate 1 when no point qualifies, floor-clamped at 1e-4.
- The Jaccard index sweeps score thresholds 0.05..0.95, keeps detections
  strictly above each, computes a per-image maximum one-to-one matching
  among IoU-feasible pairs, aggregates counts over the dataset, and
  reports the best threshold (ties to the lowest).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .boxes import Box, iou
from .matching import hungarian
from .suppression import Detection

MR2_FLOOR = 1e-4
MR2_REFERENCES = np.logspace(-2.0, 0.0, 9)
JI_THRESHOLDS = [round(0.05 * k, 2) for k in range(1, 20)]
INFEASIBLE = 1e6


@dataclass(frozen=True)
class EvalMatch:
    """Per-image detection-to-GT correspondence at one IoU threshold."""

    pairs: tuple[tuple[int, int], ...]
    tp: tuple[bool, ...]

    def __post_init__(self) -> None:
        dets = [d for d, _ in self.pairs]
        gts = [g for _, g in self.pairs]
        if len(set(dets)) != len(dets) or len(set(gts)) != len(gts):
            raise ValueError("each detection and each GT may match at most once")


def greedy_match(
    dets: Sequence[Detection], gts: Sequence[Box], iou_thresh: float = 0.5
) -> EvalMatch:
    """Score-ordered greedy assignment; ties broken by input position."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    taken: set[int] = set()
    tp = [False] * len(dets)
    pairs: list[tuple[int, int]] = []
    for i in order:
        best_j = -1
        best_v = 0.0
        for j, gt in enumerate(gts):
            if j in taken:
                continue
            v = iou(dets[i].box, gt)
            if v >= iou_thresh and v > best_v:
                best_j, best_v = j, v
        if best_j >= 0:
            taken.add(best_j)
            tp[i] = True
            pairs.append((i, best_j))
    return EvalMatch(pairs=tuple(sorted(pairs)), tp=tuple(tp))


def _pooled_flags(
    dets_per_image: Sequence[Sequence[Detection]],
    gts_per_image: Sequence[Sequence[Box]],
    iou_thresh: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """All detections pooled and sorted by (-score, image, position).

    Returns (scores, tp flags, image indices) in pooled order plus the
    total GT count. Greedy matching is per image, so pooling after
    matching equals matching in global score order.
    """
    if len(dets_per_image) != len(gts_per_image):
        raise ValueError(
            f"{len(dets_per_image)} detection lists vs {len(gts_per_image)} GT lists"
        )
    rows: list[tuple[float, int, int, bool]] = []
    n_gt = 0
    for img, (dets, gts) in enumerate(zip(dets_per_image, gts_per_image)):
        n_gt += len(gts)
        match = greedy_match(dets, gts, iou_thresh)
        for i, det in enumerate(dets):
            rows.append((det.score, img, i, match.tp[i]))
    rows.sort(key=lambda r: (-r[0], r[1], r[2]))
    scores = np.array([r[0] for r in rows])
    tp = np.array([r[3] for r in rows], dtype=bool)
    img_idx = np.array([r[1] for r in rows], dtype=int)
    return scores, tp, img_idx, n_gt


def average_precision(
    dets_per_image: Sequence[Sequence[Detection]],
    gts_per_image: Sequence[Sequence[Box]],
    iou_thresh: float = 0.5,
) -> float:
    """All-point area under the precision-recall curve.

    Vacuously 1.0 when there is nothing to find and nothing predicted;
    0.0 when detections exist but no GT does.
    """
    scores, tp, _, n_gt = _pooled_flags(dets_per_image, gts_per_image, iou_thresh)
    if n_gt == 0:
        return 1.0 if scores.size == 0 else 0.0
    if scores.size == 0:
        return 0.0
    cum_tp = np.cumsum(tp)
    cum_fp = np.cumsum(~tp)
    recalls = cum_tp / n_gt
    precisions = cum_tp / (cum_tp + cum_fp)
    rec = np.concatenate([[0.0], recalls])
    env = np.maximum.accumulate(precisions[::-1])[::-1]
    return float(np.sum(np.diff(rec) * env))


def mr2(
    dets_per_image: Sequence[Sequence[Detection]],
    gts_per_image: Sequence[Sequence[Box]],
    iou_thresh: float = 0.5,
) -> float:
    """Log-average miss rate over FPPI references in [1e-2, 1]. Lower is better."""
    scores, tp, _, n_gt = _pooled_flags(dets_per_image, gts_per_image, iou_thresh)
    if n_gt == 0:
        raise ValueError("miss rate is undefined without ground-truth boxes")
    n_images = len(dets_per_image)
    # one curve point per distinct score: counts include all ties
    points: list[tuple[float, float]] = []  # (fppi, miss rate)
    cum_tp = np.cumsum(tp)
    cum_fp = np.cumsum(~tp)
    for k in range(len(scores)):
        if k + 1 < len(scores) and scores[k + 1] == scores[k]:
            continue
        points.append((cum_fp[k] / n_images, 1.0 - cum_tp[k] / n_gt))
    sampled = []
    for ref in MR2_REFERENCES:
        feasible = [p for p in points if p[0] <= ref]
        if not feasible:
            sampled.append(1.0)
            continue
        largest = max(p[0] for p in feasible)
        sampled.append(min(m for f, m in feasible if f == largest))
    if all(m == 0.0 for m in sampled):
        return 0.0
    return float(math.exp(np.mean(np.log(np.maximum(sampled, MR2_FLOOR)))))


def _max_matching_count(dets: Sequence[Detection], gts: Sequence[Box], iou_thresh: float) -> int:
    """Maximum one-to-one matching size among IoU-feasible pairs."""
    if not dets or not gts:
        return 0
    cost = np.full((len(dets), len(gts)), INFEASIBLE)
    for i, det in enumerate(dets):
        for j, gt in enumerate(gts):
            v = iou(det.box, gt)
            if v >= iou_thresh:
                cost[i, j] = 1.0 - v
    assign = hungarian(cost)
    return sum(1 for r, c in assign.pairs if cost[r, c] < INFEASIBLE)


def jaccard_index(
    dets_per_image: Sequence[Sequence[Detection]],
    gts_per_image: Sequence[Sequence[Box]],
    iou_thresh: float = 0.5,
) -> tuple[float, float]:
    """Best dataset-level Jaccard index over the score-threshold sweep.

    Returns (ji, best threshold); threshold ties resolve to the lowest.
    """
    if len(dets_per_image) != len(gts_per_image):
        raise ValueError(
            f"{len(dets_per_image)} detection lists vs {len(gts_per_image)} GT lists"
        )
    n_gt = sum(len(g) for g in gts_per_image)
    best = (-1.0, 0.0)
    for thresh in JI_THRESHOLDS:
        n_det = 0
        n_match = 0
        for dets, gts in zip(dets_per_image, gts_per_image):
            kept = [d for d in dets if d.score > thresh]
            n_det += len(kept)
            n_match += _max_matching_count(kept, gts, iou_thresh)
        denom = n_det + n_gt - n_match
        ji = 1.0 if denom == 0 else n_match / denom
        if ji > best[0]:
            best = (ji, thresh)
    return best


def tp_fp_by_confidence(
    dets_per_image: Sequence[Sequence[Detection]],
    gts_per_image: Sequence[Sequence[Box]],
    iou_thresh: float = 0.5,
    bins: int = 10,
) -> tuple[np.ndarray, np.ndarray]:
    """TP and FP counts histogrammed by detection score over uniform bins."""
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    scores, tp, _, _ = _pooled_flags(dets_per_image, gts_per_image, iou_thresh)
    tp_counts = np.zeros(bins, dtype=int)
    fp_counts = np.zeros(bins, dtype=int)
    for s, flag in zip(scores, tp):
        # the nudge keeps exact bin edges (0.3, 0.8, ...) in their own bin
        idx = min(bins - 1, int(s * bins + 1e-9))
        if flag:
            tp_counts[idx] += 1
        else:
            fp_counts[idx] += 1
    return tp_counts, fp_counts


def tp_fp_by_density(
    dets_per_image: Sequence[Sequence[Detection]],
    gts_per_image: Sequence[Sequence[Box]],
    iou_thresh: float = 0.5,
    density_edges: Sequence[float] = (1, 6, 11, 10**9),
) -> tuple[np.ndarray, np.ndarray]:
    """TP and FP counts aggregated by per-image GT count.

    Bin i covers density_edges[i] <= GT count < density_edges[i+1];
    images outside every bin are skipped.
    """
    edges = list(density_edges)
    if len(edges) < 2 or any(a >= b for a, b in zip(edges, edges[1:])):
        raise ValueError(f"density edges must be strictly increasing, got {edges}")
    n_bins = len(edges) - 1
    tp_counts = np.zeros(n_bins, dtype=int)
    fp_counts = np.zeros(n_bins, dtype=int)
    for dets, gts in zip(dets_per_image, gts_per_image):
        density = len(gts)
        idx = None
        for b in range(n_bins):
            if edges[b] <= density < edges[b + 1]:
                idx = b
                break
        if idx is None:
            continue
        match = greedy_match(dets, gts, iou_thresh)
        for flag in match.tp:
            if flag:
                tp_counts[idx] += 1
            else:
                fp_counts[idx] += 1
    return tp_counts, fp_counts


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float | None:
    """Pearson correlation; None when either series has zero variance."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"series shapes {x.shape} vs {y.shape}")
    if x.size < 2:
        return None
    xc = x - x.mean()
    yc = y - y.mean()
    denom = math.sqrt(float(np.dot(xc, xc)) * float(np.dot(yc, yc)))
    if denom == 0.0:
        return None
    return float(np.dot(xc, yc) / denom)


def homogeneity_scatter(
    contents: np.ndarray,
    boxes: Sequence[Box],
    confidences: Sequence[float],
    positive_floor: float = 0.5,
) -> tuple[list[tuple[float, float]], float | None]:
    """Pairwise (IoU distance, content cosine similarity) among confident queries.

    Also returns the Pearson correlation between cosine similarity and IoU
    proximity (1 - IoU distance), or None with fewer than two retained
    queries or degenerate variance.
    """
    contents = np.asarray(contents, dtype=np.float64)
    if contents.ndim != 2 or contents.shape[0] != len(boxes) or len(boxes) != len(confidences):
        raise ValueError("contents, boxes, and confidences must align by row")
    keep = [i for i, c in enumerate(confidences) if c > positive_floor]
    points: list[tuple[float, float]] = []
    for a in range(len(keep)):
        for b in range(a + 1, len(keep)):
            i, j = keep[a], keep[b]
            dist = 1.0 - iou(boxes[i], boxes[j])
            na = float(np.linalg.norm(contents[i]))
            nb = float(np.linalg.norm(contents[j]))
            cos = 0.0 if na == 0.0 or nb == 0.0 else float(
                np.dot(contents[i], contents[j]) / (na * nb)
            )
            points.append((dist, cos))
    if len(points) < 1:
        return [], None
    corr = pearson([1.0 - d for d, _ in points], [c for _, c in points])
    return points, corr


def score_iou_correlation(
    dets: Sequence[Detection], gts: Sequence[Box]
) -> float | None:
    """Pearson correlation between detection scores and best-GT IoU."""
    if len(dets) < 2:
        return None
    scores = [d.score for d in dets]
    best = [max((iou(d.box, g) for g in gts), default=0.0) for d in dets]
    return pearson(scores, best)


def pooled_score_iou(
    dets_per_image: Sequence[Sequence[Detection]],
    gts_per_image: Sequence[Sequence[Box]],
) -> float | None:
    """Dataset-level score vs best-GT-IoU Pearson correlation.

    Each detection pairs with the best IoU among its own image's GTs;
    pairs pool across images into one correlation.
    """
    if len(dets_per_image) != len(gts_per_image):
        raise ValueError(
            f"{len(dets_per_image)} detection lists vs {len(gts_per_image)} GT lists"
        )
    scores: list[float] = []
    best: list[float] = []
    for dets, gts in zip(dets_per_image, gts_per_image):
        for d in dets:
            scores.append(d.score)
            best.append(max((iou(d.box, g) for g in gts), default=0.0))
    if len(scores) < 2:
        return None
    return pearson(scores, best)


@dataclass(frozen=True)
class MetricsReport:
    ap: float
    mr2: float
    ji: float
    ji_best_threshold: float
    per_stage: dict[str, "MetricsReport"] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "ap": self.ap,
            "mr2": self.mr2,
            "ji": self.ji,
            "ji_best_threshold": self.ji_best_threshold,
        }
        if self.per_stage:
            out["per_stage"] = {k: v.to_dict() for k, v in self.per_stage.items()}
        return out


def compute_report(
    dets_per_image: Sequence[Sequence[Detection]],
    gts_per_image: Sequence[Sequence[Box]],
    iou_thresh: float = 0.5,
) -> MetricsReport:
    ji, best_t = jaccard_index(dets_per_image, gts_per_image, iou_thresh)
    return MetricsReport(
        ap=average_precision(dets_per_image, gts_per_image, iou_thresh),
        mr2=mr2(dets_per_image, gts_per_image, iou_thresh),
        ji=ji,
        ji_best_threshold=best_t,
    )
