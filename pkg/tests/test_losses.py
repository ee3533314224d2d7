"""Loss hand values, gradient checks, and the duplicate-pair equilibrium."""

import math

import numpy as np
import pytest

from dehomodet import tensor as T
from dehomodet.boxes import Box, giou
from dehomodet.losses import (
    ClassTarget,
    bce,
    box_loss,
    box_loss_sum,
    decoder_cls_loss,
    encoder_joint_loss,
    equilibrium_sim,
    fl_giou_cls,
    fl_giou_cls_terms,
    focal_cls_terms,
    giou_aware_weight,
    giou_pairs,
    pair_loss,
    pair_loss_grad,
)
from dehomodet.matching import hungarian, match_cost

from conftest import random_box

LN2 = math.log(2.0)


def test_bce_hand_values():
    assert bce(0.5, 1).item() == pytest.approx(LN2, rel=1e-12)
    assert bce(0.9, 0).item() == pytest.approx(-math.log(0.1), rel=1e-12)
    assert bce(0.9, 1).item() == pytest.approx(-math.log(0.9), rel=1e-12)


def test_bce_extremes_stay_finite():
    assert bce(1.0, 1).item() == pytest.approx(0.0, abs=1e-9)
    big = bce(0.0, 1).item()
    assert math.isfinite(big) and big > 20.0  # -log(1e-12)
    assert bce(1.0, 0).item() > 20.0


def test_bce_validation():
    with pytest.raises(ValueError):
        bce(1.2, 1)
    with pytest.raises(ValueError):
        bce(0.5, 2)


def test_pair_loss_hand_values():
    assert pair_loss(0.5, 0.5).item() == pytest.approx(2 * LN2, rel=1e-12)
    # matched confident, duplicate suppressed: small loss
    assert pair_loss(0.99, 0.01).item() == pytest.approx(-2 * math.log(0.99), rel=1e-9)


def test_pair_loss_grad_hand_values():
    assert pair_loss_grad(0.5) == 0.0  # exact equilibrium
    assert pair_loss_grad(0.8) == pytest.approx(3.75, rel=1e-12)
    assert pair_loss_grad(0.25) == pytest.approx(1 / 0.75 - 4.0, rel=1e-12)
    with pytest.raises(ValueError):
        pair_loss_grad(0.0)


def test_pair_loss_grad_sign_structure():
    # below 0.5 the shared confidence is pushed up, above 0.5 pushed down
    assert pair_loss_grad(0.3) < 0.0
    assert pair_loss_grad(0.7) > 0.0


def test_giou_aware_weight_hand_values():
    assert giou_aware_weight(0.5, 0.8) == pytest.approx(0.25, rel=1e-12)
    assert giou_aware_weight(0.9, 0.1) == pytest.approx(0.0324, rel=1e-9)
    assert giou_aware_weight(1.0, 1.0) == 1.0
    assert giou_aware_weight(0.0, 1.0) == 0.0
    assert giou_aware_weight(1.0, 0.0) == 0.0
    # negative giou clamps to zero quality
    assert giou_aware_weight(0.3, -0.4) == pytest.approx(0.7 ** 2, rel=1e-12)


def test_giou_aware_weight_range_property():
    rng = np.random.default_rng(5)
    for _ in range(500):
        w = giou_aware_weight(
            float(rng.uniform(0, 1)),
            float(rng.uniform(-1, 1)),
            gamma=float(rng.uniform(0.5, 4.0)),
        )
        assert 0.0 <= w <= 1.0


def test_giou_aware_weight_gap_mode():
    assert giou_aware_weight(0.9, 0.1, mode="gap") == pytest.approx(0.64, rel=1e-12)
    assert giou_aware_weight(0.7, 0.7, mode="gap") == 0.0
    with pytest.raises(ValueError):
        giou_aware_weight(0.5, 0.5, mode="nonsense")
    with pytest.raises(ValueError):
        giou_aware_weight(0.5, 0.5, gamma=0.0)


def test_fl_giou_cls_hand_values():
    # matched, p=0.5, quality 0.8: 0.8 * 0.25 * ln 2
    loss = fl_giou_cls(0.5, ClassTarget(1, 0.8))
    assert loss.item() == pytest.approx(0.8 * 0.25 * LN2, rel=1e-9)
    assert loss.item() == pytest.approx(0.13863, abs=1e-5)
    # background, p=0.5: (1-p)^2 * -log(1-p)
    neg = fl_giou_cls(0.5, ClassTarget(0))
    assert neg.item() == pytest.approx(0.25 * LN2, rel=1e-9)


def test_fl_giou_cls_background_branch_shape():
    # confident and correct: tiny loss
    good = fl_giou_cls(0.99, ClassTarget(1, 0.99)).item()
    assert good < 0.02
    # background branch weights by (1 - p)^gamma, which damps confidently
    # wrong negatives instead of amplifying them: -(1-p)^2 log(1-p)
    bg = ClassTarget(0)
    confident_wrong = fl_giou_cls(0.99, bg).item()
    assert confident_wrong == pytest.approx(-(0.01 ** 2) * math.log(0.01), rel=1e-9)
    mid = fl_giou_cls(0.5, bg).item()
    easy = fl_giou_cls(0.01, bg).item()
    assert easy < mid
    assert confident_wrong < mid


def test_class_target_validation():
    with pytest.raises(ValueError):
        ClassTarget(1)  # matched without quality
    with pytest.raises(ValueError):
        ClassTarget(0, 0.5)  # background with quality


def test_decoder_cls_loss_hand_value():
    loss = decoder_cls_loss(0.5, 1)
    assert loss.item() == pytest.approx(0.25 * 0.25 * LN2, rel=1e-9)
    assert loss.item() == pytest.approx(0.0433, abs=1e-4)
    neg = decoder_cls_loss(0.5, 0)
    assert neg.item() == pytest.approx(0.75 * 0.25 * LN2, rel=1e-9)


def test_box_loss_zero_for_perfect_prediction():
    b = Box(0.4, 0.6, 0.2, 0.3)
    pred = T.tensor(np.array(b.to_list()))
    assert box_loss(pred, b).item() == pytest.approx(0.0, abs=1e-12)
    # zero weights kill the loss regardless of the boxes
    other = T.tensor([0.7, 0.2, 0.1, 0.4])
    assert box_loss(other, b, weights=(0.0, 0.0)).item() == 0.0


def test_box_loss_decomposes():
    gt = Box(0.5, 0.5, 0.2, 0.2)
    pred_vals = [0.6, 0.5, 0.2, 0.2]
    pred = T.tensor(pred_vals)
    l1_only = box_loss(pred, gt, weights=(1.0, 0.0)).item()
    assert l1_only == pytest.approx(0.1, abs=1e-12)
    giou_only = box_loss(pred, gt, weights=(0.0, 1.0)).item()
    assert giou_only == pytest.approx(1.0 - giou(Box.from_list(pred_vals), gt), rel=1e-12)


def test_giou_pairs_matches_scalar_kernel():
    rng = np.random.default_rng(21)
    preds = [random_box(rng) for _ in range(12)]
    gts = [random_box(rng) for _ in range(12)]
    pred_t = T.tensor(np.array([b.to_list() for b in preds]))
    vals = giou_pairs(pred_t, gts).data
    for i in range(12):
        assert vals[i] == pytest.approx(giou(preds[i], gts[i]), abs=1e-12)


def test_giou_pairs_rejects_degenerate_predictions():
    bad = T.tensor([[0.5, 0.5, 0.0, 0.2]])
    with pytest.raises(ValueError):
        giou_pairs(bad, [Box(0.5, 0.5, 0.2, 0.2)])


# --- finite-difference checks over seeded samples ---------------------------

def test_bce_finite_diff_100_seeds():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        y = int(rng.integers(0, 2))
        x = T.tensor(rng.normal(scale=1.5), requires_grad=True)
        report = T.finite_diff_check(lambda t: bce(T.sigmoid(t), y), x, eps=1e-5, tol=1e-5)
        assert report.ok, f"seed {seed}: {report.max_rel_err}"


def test_pair_loss_finite_diff_100_seeds():
    for seed in range(100):
        rng = np.random.default_rng(200 + seed)
        x = T.tensor(rng.normal(size=2, scale=1.5), requires_grad=True)

        def f(t):
            p = T.sigmoid(t)
            return pair_loss(T.reduce_sum(T.slice_axis(p, 0, 0, 1)), T.reduce_sum(T.slice_axis(p, 0, 1, 2)))

        report = T.finite_diff_check(f, x, eps=1e-5, tol=1e-5)
        assert report.ok, f"seed {seed}: {report.max_rel_err}"


def test_fl_giou_cls_composed_with_sigmoid_finite_diff_100_seeds():
    # random (logit, giou target, class) triples
    for seed in range(100):
        rng = np.random.default_rng(300 + seed)
        c = int(rng.integers(0, 2))
        target = ClassTarget(c, float(rng.uniform(0.05, 0.95))) if c == 1 else ClassTarget(0)
        gamma = float(rng.choice([1.0, 2.0, 3.0]))
        x = T.tensor(rng.normal(scale=1.5), requires_grad=True)
        report = T.finite_diff_check(
            lambda t: fl_giou_cls(T.sigmoid(t), target, gamma=gamma), x, eps=1e-5, tol=1e-5
        )
        assert report.ok, f"seed {seed}: {report.max_rel_err}"


def test_fl_giou_cls_gap_mode_finite_diff():
    for seed in range(30):
        rng = np.random.default_rng(400 + seed)
        target = ClassTarget(1, float(rng.uniform(0.05, 0.95)))
        x = T.tensor(rng.normal(scale=1.2), requires_grad=True)
        report = T.finite_diff_check(
            lambda t: fl_giou_cls(T.sigmoid(t), target, mode="gap"), x, eps=1e-5, tol=1e-5
        )
        assert report.ok, f"seed {seed}: {report.max_rel_err}"


def test_decoder_cls_loss_finite_diff_100_seeds():
    for seed in range(100):
        rng = np.random.default_rng(500 + seed)
        c = int(rng.integers(0, 2))
        x = T.tensor(rng.normal(scale=1.5), requires_grad=True)
        report = T.finite_diff_check(
            lambda t: decoder_cls_loss(T.sigmoid(t), c), x, eps=1e-5, tol=1e-5
        )
        assert report.ok, f"seed {seed}: {report.max_rel_err}"


def test_box_loss_finite_diff_100_seeds():
    for seed in range(100):
        rng = np.random.default_rng(600 + seed)
        gt = random_box(rng)
        x = T.tensor(rng.normal(size=4, scale=1.0), requires_grad=True)

        def f(t):
            # sigmoid keeps w, h strictly positive, matching the production path
            return box_loss(T.sigmoid(t), gt)

        report = T.finite_diff_check(f, x, eps=1e-5, tol=1e-5)
        assert report.ok, f"seed {seed}: {report.max_rel_err}"


def test_encoder_joint_loss_finite_diff():
    # The assignment and the quality labels are stop-gradient quantities:
    # compute both once at the base point and hold them fixed while probing,
    # otherwise the numeric difference measures paths the graph cuts.
    for seed in range(25):
        rng = np.random.default_rng(700 + seed)
        gts = [random_box(rng) for _ in range(3)]
        m = 5
        x = T.tensor(rng.normal(size=m * 5, scale=0.8), requires_grad=True)

        base = 1.0 / (1.0 + np.exp(-x.data.reshape(m, 5)))
        pb = [Box.from_list(row.tolist()) for row in base[:, :4]]
        assignment = hungarian(match_cost(pb, base[:, 4].tolist(), gts))
        labels = np.zeros(m)
        for r, c in assignment.pairs:
            labels[r] = giou(pb[r], gts[c])

        def f(t):
            raw = T.reshape(t, (m, 5))
            boxes = T.sigmoid(T.slice_axis(raw, 1, 0, 4))
            scores = T.reshape(T.sigmoid(T.slice_axis(raw, 1, 4, 5)), (m,))
            return encoder_joint_loss(
                boxes, scores, gts, assignment, quality_labels=labels
            )

        report = T.finite_diff_check(f, x, eps=1e-5, tol=1e-4)
        assert report.ok, f"seed {seed}: {report.max_rel_err}"


def test_encoder_joint_loss_hand_case():
    # one perfect-box prediction with score p: quality label giou=1,
    # weight p^2, loss = -p^2 log p, box term zero, normalizer 1
    gt = Box(0.5, 0.5, 0.2, 0.2)
    boxes = T.tensor([gt.to_list()])
    for p in (0.3, 0.5, 0.9):
        scores = T.tensor([p])
        assignment = hungarian(match_cost([gt], [p], [gt]))
        loss = encoder_joint_loss(boxes, scores, [gt], assignment).item()
        assert loss == pytest.approx(-(p ** 2) * math.log(p), rel=1e-9)


def test_encoder_joint_loss_normalizes_by_gt_count():
    gts = [Box(0.3, 0.3, 0.2, 0.2), Box(0.7, 0.7, 0.2, 0.2)]
    boxes = T.tensor([b.to_list() for b in gts])
    scores = T.tensor([0.6, 0.6])
    assignment = hungarian(match_cost(gts, [0.6, 0.6], gts))
    loss2 = encoder_joint_loss(boxes, scores, gts, assignment).item()
    one = encoder_joint_loss(
        T.tensor([gts[0].to_list()]),
        T.tensor([0.6]),
        [gts[0]],
        hungarian(match_cost([gts[0]], [0.6], [gts[0]])),
    ).item()
    assert loss2 == pytest.approx(one, rel=1e-9)  # two identical cases, averaged


def test_batch_terms_match_scalar_forms():
    rng = np.random.default_rng(9)
    probs = rng.uniform(0.05, 0.95, size=6)
    mask = np.array([True, False, True, False, False, True])
    gious = rng.uniform(0, 1, size=6)
    terms = fl_giou_cls_terms(T.tensor(probs), mask, gious).data
    for i in range(6):
        tgt = ClassTarget(1, float(gious[i])) if mask[i] else ClassTarget(0)
        assert terms[i] == pytest.approx(fl_giou_cls(float(probs[i]), tgt).item(), rel=1e-9)
    f_terms = focal_cls_terms(T.tensor(probs), mask).data
    for i in range(6):
        assert f_terms[i] == pytest.approx(decoder_cls_loss(float(probs[i]), int(mask[i])).item(), rel=1e-9)


# --- equilibrium simulation --------------------------------------------------

def test_equilibrium_tied_at_half_is_stationary():
    trace = equilibrium_sim(0.5, differentiated=False, lr=0.1, steps=50)
    for p1, p2, g1, g2 in trace.steps:
        assert p1 == 0.5 and p2 == 0.5
        assert g1 == 0.0 and g2 == 0.0  # gradient exactly zero at the equilibrium
    assert trace.final_p1 == 0.5


def test_equilibrium_tied_converges_to_half():
    trace = equilibrium_sim(0.3, differentiated=False, lr=0.1, steps=500)
    assert abs(trace.final_p1 - 0.5) < 0.02
    assert trace.final_p1 == trace.final_p2
    # approach is monotone from below
    ps = [s[0] for s in trace.steps]
    assert all(b >= a for a, b in zip(ps, ps[1:]))


def test_equilibrium_tied_converges_from_above():
    trace = equilibrium_sim(0.8, differentiated=False, lr=0.1, steps=500)
    assert abs(trace.final_p1 - 0.5) < 0.02


def test_equilibrium_differentiated_separates():
    trace = equilibrium_sim(0.3, differentiated=True, lr=0.1, steps=500)
    assert trace.final_p1 > 0.9
    assert trace.final_p2 < 0.1
    assert all(0.0 < s[0] < 1.0 and 0.0 < s[1] < 1.0 for s in trace.steps)


def test_equilibrium_validation():
    with pytest.raises(ValueError):
        equilibrium_sim(0.0, False)
    with pytest.raises(ValueError):
        equilibrium_sim(0.5, False, lr=0.0)
    with pytest.raises(ValueError):
        equilibrium_sim(0.5, False, steps=0)


def test_equilibrium_trace_shape():
    trace = equilibrium_sim(0.4, differentiated=True, lr=0.05, steps=7)
    assert len(trace.steps) == 7
    assert trace.differentiated is True
    assert trace.lr == 0.05
