"""Training losses and the duplicate-query equilibrium analysis.

Probability-taking losses build differentiable graphs on the engine's
primitives, so every gradient here is covered by finite-difference
checks. Scalar convenience: each loss accepts a plain float and wraps
it as a constant, letting hand-value tests read naturally via
``.item()``.

Probabilities are clamped into [1e-12, 1 - 1e-12] before any log, so
exact 0/1 inputs yield large finite losses instead of infinities.

The classification loss for selected queries is GIoU-aware: its
weighting term rises when the predicted confidence and the localization
quality disagree, which ties score ranking to box quality. The
``weight_mode="gap"`` alternative (|p - giou|^gamma) is exposed for
comparison but the agreement form is the default and the documented
behavior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .boxes import Box, giou
from .matching import Assignment
from .tensor import DiffTensor

__all__ = [
    "PROB_EPS",
    "ClassTarget",
    "bce",
    "pair_loss",
    "pair_loss_grad",
    "giou_aware_weight",
    "fl_giou_cls",
    "fl_giou_cls_terms",
    "decoder_cls_loss",
    "focal_cls_terms",
    "giou_pairs",
    "box_loss",
    "box_loss_sum",
    "encoder_joint_loss",
    "EquilibriumTrace",
    "equilibrium_sim",
]

PROB_EPS = 1e-12

WEIGHT_MODES = ("agreement", "gap")


def _as_prob(p: DiffTensor | float, name: str) -> DiffTensor:
    if isinstance(p, DiffTensor):
        t = p
    else:
        t = T.constant(float(p))
    if np.any(t.data < 0.0) or np.any(t.data > 1.0):
        raise ValueError(f"{name}: probability outside [0, 1]: {t.data}")
    return t


def _clamped(p: DiffTensor) -> DiffTensor:
    return T.clamp(p, PROB_EPS, 1.0 - PROB_EPS)


def _check_binary(y: int, name: str) -> int:
    if y not in (0, 1):
        raise ValueError(f"{name}: class label must be 0 or 1, got {y!r}")
    return int(y)


def bce(p: DiffTensor | float, y: int) -> DiffTensor:
    """Binary cross-entropy -[y log p + (1-y) log(1-p)] as a scalar graph."""
    y = _check_binary(y, "bce")
    p = _clamped(_as_prob(p, "bce"))
    if y == 1:
        return T.scale(T.log(p), -1.0)
    return T.scale(T.log(T.add_const(T.scale(p, -1.0), 1.0)), -1.0)


def pair_loss(p1: DiffTensor | float, p2: DiffTensor | float) -> DiffTensor:
    """Loss of a duplicate pair where query 1 is the matched one: -[log p1 + log(1-p2)]."""
    p1 = _clamped(_as_prob(p1, "pair_loss"))
    p2 = _clamped(_as_prob(p2, "pair_loss"))
    one_minus_p2 = T.add_const(T.scale(p2, -1.0), 1.0)
    return T.scale(T.add(T.log(p1), T.log(one_minus_p2)), -1.0)


def pair_loss_grad(p: float) -> float:
    """d/dp of the tied-duplicate loss -[log p + log(1-p)]: 1/(1-p) - 1/p.

    Zero exactly at p = 0.5, the equilibrium where the matched query's
    pull upward cancels the unmatched one's push downward.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"pair_loss_grad needs p in (0, 1), got {p}")
    return 1.0 / (1.0 - p) - 1.0 / p


def giou_aware_weight(p_hat: float, giou_val: float, gamma: float = 2.0, mode: str = "agreement") -> float:
    """Quality weighting term in [0, 1] for the selected-query classification loss.

    "agreement": (p*g + (1-p)(1-g))^gamma, maximal when confidence and
    localization quality agree at the extremes. "gap": |p - g|^gamma.
    ``giou_val`` is clamped into [0, 1] first.
    """
    if gamma <= 0.0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    if mode not in WEIGHT_MODES:
        raise ValueError(f"unknown weight mode {mode!r}: expected one of {WEIGHT_MODES}")
    if not 0.0 <= p_hat <= 1.0:
        raise ValueError(f"p_hat outside [0, 1]: {p_hat}")
    g = min(max(giou_val, 0.0), 1.0)
    if mode == "agreement":
        base = p_hat * g + (1.0 - p_hat) * (1.0 - g)
    else:
        base = abs(p_hat - g)
    return base ** gamma


@dataclass(frozen=True)
class ClassTarget:
    """Target for one selected query: background (c=0) or matched (c=1 with a quality label)."""

    c: int
    giou_target: float | None = None

    def __post_init__(self):
        _check_binary(self.c, "ClassTarget")
        if self.c == 1 and self.giou_target is None:
            raise ValueError("matched target needs a giou_target")
        if self.c == 0 and self.giou_target is not None:
            raise ValueError("background target must not carry a giou_target")


def fl_giou_cls(
    p_hat: DiffTensor | float,
    target: ClassTarget,
    gamma: float = 2.0,
    mode: str = "agreement",
) -> DiffTensor:
    """GIoU-aware focal classification loss for one query, as a scalar graph.

    Matched: -g * w * log(p) with w the agreement weight against the
    clamped GIoU target g. Background: -(1-p)^gamma * log(1-p), the
    matched form at quality zero.
    """
    p = _as_prob(p_hat, "fl_giou_cls")
    if p.data.shape != ():
        raise T.ShapeMismatchError(f"fl_giou_cls takes a scalar probability, got shape {p.data.shape}")
    pos = np.zeros(1, dtype=bool)
    g = np.zeros(1)
    if target.c == 1:
        pos[0] = True
        g[0] = min(max(float(target.giou_target), 0.0), 1.0)
    terms = fl_giou_cls_terms(T.reshape(p, (1,)), pos, g, gamma=gamma, mode=mode)
    return T.reduce_sum(terms)


def fl_giou_cls_terms(
    p_hat: DiffTensor,
    pos_mask: np.ndarray,
    giou_targets: np.ndarray,
    gamma: float = 2.0,
    mode: str = "agreement",
) -> DiffTensor:
    """Vectorized GIoU-aware focal loss, one term per query.

    ``pos_mask`` marks matched queries; ``giou_targets`` carries their
    clamped quality labels (entries under the mask's False positions are
    ignored). Gradients flow only through ``p_hat``; the quality labels
    are constants by design, localization trains through the box loss.
    """
    if gamma <= 0.0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    if mode not in WEIGHT_MODES:
        raise ValueError(f"unknown weight mode {mode!r}: expected one of {WEIGHT_MODES}")
    p = _as_prob(p_hat, "fl_giou_cls_terms")
    if p.data.ndim != 1:
        raise T.ShapeMismatchError(f"expected a 1-D probability vector, got shape {p.data.shape}")
    n = p.data.shape[0]
    pos_mask = np.asarray(pos_mask, dtype=bool)
    g = np.clip(np.asarray(giou_targets, dtype=np.float64), 0.0, 1.0)
    if pos_mask.shape != (n,) or g.shape != (n,):
        raise T.ShapeMismatchError(
            f"mask/targets shapes {pos_mask.shape}/{g.shape} do not match probabilities {p.data.shape}"
        )
    g = np.where(pos_mask, g, 0.0)

    p = _clamped(p)
    one_minus_p = T.add_const(T.scale(p, -1.0), 1.0)
    if mode == "agreement":
        # p*g + (1-p)*(1-g) is affine in p: p*(2g-1) + (1-g)
        base = T.add(T.mul(p, T.constant(2.0 * g - 1.0)), T.constant(1.0 - g))
    else:
        base = T.absolute(T.sub(p, T.constant(g)))
    weight = T.power(base, gamma)

    pos_term = T.mul(T.constant(g), T.mul(weight, T.log(p)))  # -g * w * log p, sign applied below
    neg_term = T.mul(weight, T.log(one_minus_p))
    mask_pos = T.constant(pos_mask.astype(np.float64))
    mask_neg = T.constant((~pos_mask).astype(np.float64))
    combined = T.add(T.mul(mask_pos, pos_term), T.mul(mask_neg, neg_term))
    return T.scale(combined, -1.0)


def bce_terms(p_hat: DiffTensor, pos_mask: np.ndarray) -> DiffTensor:
    """Vectorized plain binary cross-entropy against a boolean target mask."""
    p = _as_prob(p_hat, "bce_terms")
    if p.data.ndim != 1:
        raise T.ShapeMismatchError(f"expected a 1-D probability vector, got shape {p.data.shape}")
    pos_mask = np.asarray(pos_mask, dtype=bool)
    if pos_mask.shape != p.data.shape:
        raise T.ShapeMismatchError(f"mask shape {pos_mask.shape} vs probabilities {p.data.shape}")
    p = _clamped(p)
    one_minus_p = T.add_const(T.scale(p, -1.0), 1.0)
    mask_pos = T.constant(pos_mask.astype(np.float64))
    mask_neg = T.constant((~pos_mask).astype(np.float64))
    combined = T.add(T.mul(mask_pos, T.log(p)), T.mul(mask_neg, T.log(one_minus_p)))
    return T.scale(combined, -1.0)


def encoder_bce_loss(
    pred_boxes: DiffTensor,
    pred_scores: DiffTensor,
    gt_boxes: Sequence[Box],
    assignment: Assignment,
    box_weights: tuple[float, float] = (5.0, 2.0),
    cls_weight: float = 1.0,
) -> DiffTensor:
    """Encoder supervision with plain BCE targets instead of quality labels.

    The quality-unaware counterpart of ``encoder_joint_loss``: matched
    rows are positives, everything else background, box loss and
    normalization identical. Exists so the quality-aware selection can be
    ablated against a baseline that differs in nothing else.
    """
    m = pred_boxes.data.shape[0]
    if pred_scores.data.shape != (m,):
        raise T.ShapeMismatchError(
            f"scores shape {pred_scores.data.shape} vs {m} predicted boxes"
        )
    pos_mask = np.zeros(m, dtype=bool)
    matched_rows: list[int] = []
    matched_gts: list[Box] = []
    for r, c in assignment.pairs:
        if not (0 <= r < m and 0 <= c < len(gt_boxes)):
            raise ValueError(f"assignment pair ({r}, {c}) out of range")
        pos_mask[r] = True
        matched_rows.append(r)
        matched_gts.append(gt_boxes[c])
    total = T.scale(T.reduce_sum(bce_terms(pred_scores, pos_mask)), float(cls_weight))
    if matched_rows:
        matched = T.gather_rows(pred_boxes, matched_rows)
        total = T.add(total, box_loss_sum(matched, matched_gts, box_weights))
    return T.scale(total, 1.0 / max(1, len(gt_boxes)))


def decoder_cls_loss(
    p_hat: DiffTensor | float,
    c: int,
    alpha: float = 0.25,
    gamma: float = 2.0,
) -> DiffTensor:
    """Focal binary cross-entropy for one decoder query with a discrete target."""
    c = _check_binary(c, "decoder_cls_loss")
    p = _as_prob(p_hat, "decoder_cls_loss")
    if p.data.shape != ():
        raise T.ShapeMismatchError(f"decoder_cls_loss takes a scalar probability, got {p.data.shape}")
    mask = np.array([c == 1])
    terms = focal_cls_terms(T.reshape(p, (1,)), mask, alpha=alpha, gamma=gamma)
    return T.reduce_sum(terms)


def focal_cls_terms(
    p_hat: DiffTensor,
    pos_mask: np.ndarray,
    alpha: float = 0.25,
    gamma: float = 2.0,
) -> DiffTensor:
    """Vectorized focal BCE: -alpha (1-p)^g log p on positives, -(1-alpha) p^g log(1-p) on negatives."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if gamma < 0.0:
        raise ValueError(f"gamma must be non-negative, got {gamma}")
    p = _as_prob(p_hat, "focal_cls_terms")
    if p.data.ndim != 1:
        raise T.ShapeMismatchError(f"expected a 1-D probability vector, got shape {p.data.shape}")
    pos_mask = np.asarray(pos_mask, dtype=bool)
    if pos_mask.shape != p.data.shape:
        raise T.ShapeMismatchError(f"mask shape {pos_mask.shape} vs probabilities {p.data.shape}")
    p = _clamped(p)
    one_minus_p = T.add_const(T.scale(p, -1.0), 1.0)
    pos_term = T.scale(T.mul(T.power(one_minus_p, gamma), T.log(p)), -alpha)
    neg_term = T.scale(T.mul(T.power(p, gamma), T.log(one_minus_p)), -(1.0 - alpha))
    mask_pos = T.constant(pos_mask.astype(np.float64))
    mask_neg = T.constant((~pos_mask).astype(np.float64))
    return T.add(T.mul(mask_pos, pos_term), T.mul(mask_neg, neg_term))


# --- box losses -------------------------------------------------------------

def giou_pairs(pred_boxes: DiffTensor, gt_boxes: Sequence[Box]) -> DiffTensor:
    """Differentiable GIoU between the i-th predicted box and the i-th GT.

    Predictions are center-form rows (cx, cy, w, h) with strictly
    positive extent; GTs are constants. Built from engine primitives so
    the backward pass needs no bespoke geometry gradients.
    """
    if pred_boxes.data.ndim != 2 or pred_boxes.data.shape[1] != 4:
        raise T.ShapeMismatchError(f"pred boxes must be (n, 4), got {pred_boxes.data.shape}")
    n = pred_boxes.data.shape[0]
    if n != len(gt_boxes):
        raise T.ShapeMismatchError(f"{n} predictions vs {len(gt_boxes)} ground truths")
    if np.any(pred_boxes.data[:, 2:] <= 0.0):
        raise ValueError("degenerate predicted box: w and h must be strictly positive")
    gc = np.array([b.corners() for b in gt_boxes], dtype=np.float64)
    gx1, gy1 = T.constant(gc[:, 0:1]), T.constant(gc[:, 1:2])
    gx2, gy2 = T.constant(gc[:, 2:3]), T.constant(gc[:, 3:4])
    g_area = T.constant(((gc[:, 2] - gc[:, 0]) * (gc[:, 3] - gc[:, 1]))[:, None])

    cx = T.slice_axis(pred_boxes, 1, 0, 1)
    cy = T.slice_axis(pred_boxes, 1, 1, 2)
    w = T.slice_axis(pred_boxes, 1, 2, 3)
    h = T.slice_axis(pred_boxes, 1, 3, 4)
    x1 = T.sub(cx, T.scale(w, 0.5))
    x2 = T.add(cx, T.scale(w, 0.5))
    y1 = T.sub(cy, T.scale(h, 0.5))
    y2 = T.add(cy, T.scale(h, 0.5))

    iw = T.relu(T.sub(T.minimum(x2, gx2), T.maximum(x1, gx1)))
    ih = T.relu(T.sub(T.minimum(y2, gy2), T.maximum(y1, gy1)))
    inter = T.mul(iw, ih)
    union = T.sub(T.add(T.mul(w, h), g_area), inter)
    iou_t = T.div(inter, union)

    ew = T.sub(T.maximum(x2, gx2), T.minimum(x1, gx1))
    eh = T.sub(T.maximum(y2, gy2), T.minimum(y1, gy1))
    enclosing = T.mul(ew, eh)
    penalty = T.div(T.sub(enclosing, union), enclosing)
    return T.reshape(T.sub(iou_t, penalty), (n,))


def box_loss(
    b_hat: DiffTensor,
    gt: Box,
    weights: tuple[float, float] = (5.0, 2.0),
) -> DiffTensor:
    """Localization loss for one matched pair: w_l1 * L1 + w_giou * (1 - GIoU)."""
    if b_hat.data.shape != (4,):
        raise T.ShapeMismatchError(f"b_hat must have shape (4,), got {b_hat.data.shape}")
    return box_loss_sum(T.reshape(b_hat, (1, 4)), [gt], weights)


def box_loss_sum(
    pred_boxes: DiffTensor,
    gt_boxes: Sequence[Box],
    weights: tuple[float, float] = (5.0, 2.0),
) -> DiffTensor:
    """Sum of matched-pair localization losses over aligned rows."""
    w_l1, w_giou = (float(w) for w in weights)
    if w_l1 < 0.0 or w_giou < 0.0:
        raise ValueError(f"box loss weights must be non-negative, got {weights}")
    n = pred_boxes.data.shape[0]
    if n == 0:
        return T.constant(0.0)
    gt_arr = np.array([b.to_list() for b in gt_boxes], dtype=np.float64)
    l1 = T.reduce_sum(T.absolute(T.sub(pred_boxes, T.constant(gt_arr))))
    g = giou_pairs(pred_boxes, gt_boxes)
    giou_term = T.reduce_sum(T.add_const(T.scale(g, -1.0), 1.0))
    return T.add(T.scale(l1, w_l1), T.scale(giou_term, w_giou))


def encoder_joint_loss(
    pred_boxes: DiffTensor,
    pred_scores: DiffTensor,
    gt_boxes: Sequence[Box],
    assignment: Assignment,
    gamma: float = 2.0,
    box_weights: tuple[float, float] = (5.0, 2.0),
    cls_weight: float = 1.0,
    mode: str = "agreement",
    quality_labels: np.ndarray | None = None,
) -> DiffTensor:
    """Joint encoder supervision: box loss plus GIoU-aware classification.

    Matched rows (per the given assignment) are trained toward their GT
    with quality labels taken from the current prediction's GIoU,
    detached and clamped into [0, 1]. Unmatched rows take the background
    branch. Normalized by max(1, #GT).

    ``quality_labels`` overrides the per-row quality label (length must
    equal the number of predictions). Gradient checks pass labels frozen
    at the base point, since the labels are stop-gradient by design and
    numeric probes must not see them move.
    """
    m = pred_boxes.data.shape[0]
    if pred_scores.data.shape != (m,):
        raise T.ShapeMismatchError(
            f"scores shape {pred_scores.data.shape} vs {m} predicted boxes"
        )
    if quality_labels is not None and np.asarray(quality_labels).shape != (m,):
        raise T.ShapeMismatchError(f"quality_labels must have shape ({m},)")
    pos_mask = np.zeros(m, dtype=bool)
    giou_targets = np.zeros(m)
    matched_rows: list[int] = []
    matched_gts: list[Box] = []
    for r, c in assignment.pairs:
        if not (0 <= r < m and 0 <= c < len(gt_boxes)):
            raise ValueError(f"assignment pair ({r}, {c}) out of range")
        pos_mask[r] = True
        if quality_labels is not None:
            giou_targets[r] = float(quality_labels[r])
        else:
            pred_box = Box.from_list(pred_boxes.data[r].tolist())
            giou_targets[r] = giou(pred_box, gt_boxes[c])  # detached quality label
        matched_rows.append(r)
        matched_gts.append(gt_boxes[c])

    cls_terms = fl_giou_cls_terms(pred_scores, pos_mask, giou_targets, gamma=gamma, mode=mode)
    total = T.scale(T.reduce_sum(cls_terms), float(cls_weight))
    if matched_rows:
        matched = T.gather_rows(pred_boxes, matched_rows)
        total = T.add(total, box_loss_sum(matched, matched_gts, box_weights))
    return T.scale(total, 1.0 / max(1, len(gt_boxes)))


# --- duplicate-query equilibrium ---------------------------------------------

@dataclass
class EquilibriumTrace:
    """Descent trace of the two-query duplicate toy problem.

    Each step records the pre-update confidences and their loss
    gradients in confidence space. In the tied run both queries share
    one parameter, so both gradient columns carry the combined
    d(loss)/dp, which vanishes exactly at p = 0.5. In the differentiated
    run the columns are the separate per-query gradients.
    """

    differentiated: bool
    lr: float
    steps: list[tuple[float, float, float, float]] = field(default_factory=list)
    final_p1: float = math.nan
    final_p2: float = math.nan


def equilibrium_sim(
    init_p: float,
    differentiated: bool,
    lr: float = 0.1,
    steps: int = 500,
) -> EquilibriumTrace:
    """Gradient descent on the duplicate-pair loss -[log p1 + log(1-p2)].

    Descent runs on logits for stability; the trace records
    confidence-space quantities. Tied mode (differentiated=False) forces
    p1 = p2 = sigmoid(theta) through one shared parameter: the matched
    query's upward pull and the unmatched one's downward push cancel at
    p = 0.5, where descent stalls. Differentiated mode gives each query
    its own parameter and the pair separates toward (1, 0).
    """
    if not 0.0 < init_p < 1.0:
        raise ValueError(f"init_p must be in (0, 1), got {init_p}")
    if lr <= 0.0:
        raise ValueError(f"lr must be positive, got {lr}")
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")

    def sig(x: float) -> float:
        if x >= 0:
            return 1.0 / (1.0 + math.exp(-x))
        e = math.exp(x)
        return e / (1.0 + e)

    theta0 = float(T.logit(init_p))
    trace = EquilibriumTrace(differentiated=differentiated, lr=lr)

    if not differentiated:
        th = theta0
        for step in range(steps):
            p = sig(th)
            g_conf = pair_loss_grad(p)  # combined gradient on the shared confidence
            th -= lr * g_conf * p * (1.0 - p)  # chain rule onto the logit
            if not math.isfinite(th):
                raise ValueError(f"equilibrium_sim diverged to non-finite at step {step}")
            trace.steps.append((p, p, g_conf, g_conf))
        trace.final_p1 = trace.final_p2 = sig(th)
        return trace

    th1, th2 = theta0, theta0
    for step in range(steps):
        p1, p2 = sig(th1), sig(th2)
        g1 = -1.0 / p1  # d/dp1 of -log p1
        g2 = 1.0 / (1.0 - p2)  # d/dp2 of -log(1-p2)
        th1 -= lr * g1 * p1 * (1.0 - p1)
        th2 -= lr * g2 * p2 * (1.0 - p2)
        if not (math.isfinite(th1) and math.isfinite(th2)):
            raise ValueError(f"equilibrium_sim diverged to non-finite at step {step}")
        trace.steps.append((p1, p2, g1, g2))
    trace.final_p1, trace.final_p2 = sig(th1), sig(th2)
    return trace
