"""Metric protocols against hand-computed fixtures and rank invariances."""

import math

import numpy as np
import pytest

from dehomodet.boxes import Box, iou
from dehomodet.metrics import (
    MR2_FLOOR,
    average_precision,
    compute_report,
    greedy_match,
    homogeneity_scatter,
    jaccard_index,
    mr2,
    pearson,
    pooled_score_iou,
    score_iou_correlation,
    tp_fp_by_confidence,
    tp_fp_by_density,
)
from dehomodet.suppression import Detection

GT_A = Box(0.2, 0.2, 0.2, 0.2)
GT_B = Box(0.7, 0.7, 0.2, 0.2)
FAR = Box(0.5, 0.95, 0.08, 0.08)


def det(box: Box, score: float) -> Detection:
    return Detection(box=box, score=score)


def shifted(box: Box, dx: float) -> Box:
    # small shift keeps IoU well above 0.5
    return Box(box.cx + dx, box.cy, box.w, box.h)


# The shared three-detection fixture: [TP s=.9, FP s=.8, TP s=.3] on 2 GTs.
FIX_DETS = [det(shifted(GT_A, 0.01), 0.9), det(FAR, 0.8), det(shifted(GT_B, 0.01), 0.3)]
FIX_GTS = [GT_A, GT_B]


def test_greedy_match_single_tp():
    match = greedy_match([det(shifted(GT_A, 0.01), 0.9)], [GT_A])
    assert match.tp == (True,)
    assert match.pairs == ((0, 0),)


def test_greedy_match_one_gt_one_match():
    dets = [det(shifted(GT_A, 0.01), 0.9), det(shifted(GT_A, 0.02), 0.8)]
    match = greedy_match(dets, [GT_A])
    assert match.tp == (True, False)


def test_greedy_match_iou_boundary():
    # same-size boxes shifted by dx have IoU (w - dx) / (w + dx):
    # dx = 0.0685 lands strictly below 0.5, dx = 0.06 stays at or above
    a = Box(0.5, 0.5, 0.2, 0.2)
    b = Box(0.5 + 0.0685, 0.5, 0.2, 0.2)
    assert iou(a, b) < 0.5
    assert greedy_match([det(b, 0.9)], [a]).tp == (False,)
    c = Box(0.5 + 0.06, 0.5, 0.2, 0.2)
    assert iou(a, c) >= 0.5
    assert greedy_match([det(c, 0.9)], [a]).tp == (True,)


def test_greedy_match_prefers_highest_iou():
    close = shifted(GT_A, 0.005)
    d = det(close, 0.9)
    match = greedy_match([d], [shifted(GT_A, 0.1), GT_A])
    assert match.pairs == ((0, 1),)


def test_average_precision_hand_fixture():
    # precisions 1, 1/2, 2/3 at recalls 1/2, 1/2, 1 -> area 1/2 + 1/2 * 2/3
    ap = average_precision([FIX_DETS], [FIX_GTS])
    assert ap == pytest.approx(5.0 / 6.0, abs=1e-12)


def test_average_precision_edges():
    assert average_precision([[det(shifted(GT_A, 0.01), 0.9)]], [[GT_A]]) == 1.0
    assert average_precision([[]], [[GT_A]]) == 0.0
    assert average_precision([[]], [[]]) == 1.0
    assert average_precision([[det(GT_A, 0.9)]], [[]]) == 0.0


def test_average_precision_rank_invariance():
    def squash(dets):
        return [det(d.box, 0.2 + 0.7 * d.score**3) for d in dets]

    base = average_precision([FIX_DETS], [FIX_GTS])
    assert average_precision([squash(FIX_DETS)], [FIX_GTS]) == pytest.approx(base, abs=1e-12)


def test_average_precision_threshold_monotonicity():
    loose = average_precision([FIX_DETS], [FIX_GTS], iou_thresh=0.5)
    tight = average_precision([FIX_DETS], [FIX_GTS], iou_thresh=0.8)
    assert tight <= loose


def test_mr2_hand_fixture():
    # curve points (fppi, mr): (0, .5), (1, .5), (1, 0)
    # refs below 1 read the fppi=0 point (mr .5); ref 1.0 reads mr 0 -> floor
    value = mr2([FIX_DETS], [FIX_GTS])
    expected = math.exp((8 * math.log(0.5) + math.log(MR2_FLOOR)) / 9)
    assert value == pytest.approx(expected, rel=1e-12)
    assert value == pytest.approx(0.1940767, abs=1e-6)


def test_mr2_edges():
    perfect = [det(shifted(GT_A, 0.005), 0.9), det(shifted(GT_B, 0.005), 0.8)]
    assert mr2([perfect], [FIX_GTS]) == 0.0
    assert mr2([[]], [FIX_GTS]) == 1.0
    with pytest.raises(ValueError):
        mr2([[det(GT_A, 0.5)]], [[]])


def test_mr2_rewards_recovered_misses():
    before = mr2([[det(shifted(GT_A, 0.01), 0.9)]], [FIX_GTS])
    after = mr2([[det(shifted(GT_A, 0.01), 0.9), det(shifted(GT_B, 0.01), 0.85)]], [FIX_GTS])
    assert after <= before


def test_jaccard_index_hand_fixture():
    # 2 kept detections, 3 GTs, 2 matched -> 2 / (2 + 3 - 2) = 2/3
    gts = [GT_A, GT_B, Box(0.5, 0.2, 0.15, 0.15)]
    dets = [det(shifted(GT_A, 0.01), 0.9), det(shifted(GT_B, 0.01), 0.9)]
    ji, best_t = jaccard_index([dets], [gts])
    assert ji == pytest.approx(2.0 / 3.0, abs=1e-12)
    assert best_t == 0.05  # ties resolve to the lowest threshold


def test_jaccard_index_perfect_and_empty():
    dets = [det(GT_A, 1.0), det(GT_B, 1.0)]
    ji, best_t = jaccard_index([dets], [FIX_GTS])
    assert ji == 1.0
    assert best_t == 0.05
    assert jaccard_index([[]], [FIX_GTS])[0] == 0.0
    assert jaccard_index([[]], [[]])[0] == 1.0


def test_jaccard_threshold_is_strict():
    # a detection at exactly 0.05 is dropped at threshold 0.05
    lone = [det(shifted(GT_A, 0.01), 0.05)]
    ji, best_t = jaccard_index([lone], [[GT_A]])
    assert ji == 0.0


def test_jaccard_sweep_prefers_dropping_junk():
    # one good detection at 0.9 plus junk at 0.1: high thresholds win
    dets = [det(shifted(GT_A, 0.01), 0.9), det(FAR, 0.1), det(FAR, 0.1)]
    ji, best_t = jaccard_index([dets], [[GT_A]])
    assert ji == 1.0
    # the junk scores exactly 0.1, so the strict cut at threshold 0.1 drops it
    assert best_t == 0.1


def test_tp_fp_by_confidence_placement():
    tp, fp = tp_fp_by_confidence([[det(shifted(GT_A, 0.01), 0.95)]], [[GT_A]], bins=10)
    assert tp[9] == 1 and tp.sum() == 1 and fp.sum() == 0


def test_tp_fp_by_confidence_fixture():
    tp, fp = tp_fp_by_confidence([FIX_DETS], [FIX_GTS], bins=10)
    assert tp[9] == 1  # score .9
    assert fp[8] == 1  # score .8
    assert tp[3] == 1  # score .3 stays in its own bin despite float edges
    assert tp.sum() == 2 and fp.sum() == 1


def test_tp_fp_by_confidence_all_tp():
    dets = [det(shifted(GT_A, 0.005), 0.9), det(shifted(GT_B, 0.005), 0.4)]
    tp, fp = tp_fp_by_confidence([dets], [FIX_GTS])
    assert fp.sum() == 0 and tp.sum() == 2


def test_tp_fp_by_density():
    sparse_img = ([det(shifted(GT_A, 0.01), 0.9)], [GT_A])
    crowded_gts = [GT_A, GT_B, Box(0.5, 0.5, 0.1, 0.1), Box(0.3, 0.7, 0.1, 0.1), FAR, Box(0.8, 0.2, 0.1, 0.1)]
    crowded_img = ([det(FAR, 0.8)], crowded_gts)
    tp, fp = tp_fp_by_density(
        [sparse_img[0], crowded_img[0]],
        [sparse_img[1], crowded_img[1]],
        density_edges=(1, 6, 100),
    )
    assert tp.tolist() == [1, 1]
    assert fp.tolist() == [0, 0]
    with pytest.raises(ValueError):
        tp_fp_by_density([], [], density_edges=(5, 5))


def test_pearson_known_values():
    assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert pearson([1, 2, 3], [6, 4, 2]) == pytest.approx(-1.0)
    assert pearson([1, 1, 1], [1, 2, 3]) is None
    assert pearson([1], [2]) is None


def test_homogeneity_scatter_fixture_points():
    # identical queries -> (0, 1); orthogonal contents, disjoint boxes -> (1, 0)
    contents = np.array([[1.0, 0.0], [1.0, 0.0]])
    pts, _ = homogeneity_scatter(contents, [GT_A, GT_A], [0.9, 0.8])
    assert pts == [(0.0, 1.0)]
    contents = np.array([[1.0, 0.0], [0.0, 1.0]])
    pts, _ = homogeneity_scatter(contents, [GT_A, GT_B], [0.9, 0.8])
    assert pts == [(1.0, 0.0)]


def test_homogeneity_scatter_cosine_hand_value():
    contents = np.array([[1.0, 0.0], [1.0, 1.0]])
    pts, _ = homogeneity_scatter(contents, [GT_A, GT_A], [0.9, 0.8])
    assert pts[0][1] == pytest.approx(1.0 / math.sqrt(2.0), rel=1e-12)


def test_homogeneity_scatter_floor_and_degenerate():
    contents = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    boxes = [GT_A, GT_B, FAR]
    pts, corr = homogeneity_scatter(contents, boxes, [0.9, 0.4, 0.4])
    assert pts == [] and corr is None
    pts, corr = homogeneity_scatter(contents, boxes, [0.9, 0.9, 0.4])
    assert len(pts) == 1 and corr is None  # single pair: zero variance


def test_homogeneity_correlation_sign():
    # overlapping boxes share content; distant boxes do not -> positive corr
    rng = np.random.default_rng(0)
    contents = []
    boxes = []
    for k in range(6):
        base = np.zeros(4)
        base[k % 2] = 1.0
        contents.append(base + rng.normal(scale=0.05, size=4))
        boxes.append(Box(0.3 + 0.4 * (k % 2), 0.3, 0.2, 0.2))
    pts, corr = homogeneity_scatter(np.array(contents), boxes, [0.9] * 6)
    assert corr is not None and corr > 0.5


def test_score_iou_correlation_extremes():
    gts = [GT_A]
    boxes = [shifted(GT_A, dx) for dx in (0.0, 0.02, 0.05, 0.1)]
    ious = [iou(b, GT_A) for b in boxes]
    aligned = [det(b, v) for b, v in zip(boxes, ious)]
    assert score_iou_correlation(aligned, gts) == pytest.approx(1.0)
    inverted = [det(b, 1.0 - v) for b, v in zip(boxes, ious)]
    assert score_iou_correlation(inverted, gts) == pytest.approx(-1.0)
    assert score_iou_correlation(aligned[:1], gts) is None


def test_score_iou_correlation_hand_fixture():
    scores = [0.9, 0.8, 0.6, 0.4]
    ious = [0.8, 0.9, 0.5, 0.3]
    # fabricate detections whose best-GT IoU equals the chosen values:
    # each det sits on its own GT with a known overlap via x-shift
    gts = [Box(0.2 + 0.2 * k, 0.5, 0.1, 0.1) for k in range(4)]
    dets = []
    for k, (s, v) in enumerate(zip(scores, ious)):
        # shift dx gives IoU (1 - dx/w) / (1 + dx/w) for same-size boxes
        dx = 0.1 * (1.0 - v) / (1.0 + v)
        dets.append(det(Box(gts[k].cx + dx, 0.5, 0.1, 0.1), s))
    got = score_iou_correlation(dets, gts)
    # independent Pearson computation from raw sums
    n = 4
    sx = sum(scores)
    sy = sum(ious)
    sxy = sum(a * b for a, b in zip(scores, ious))
    sxx = sum(a * a for a in scores)
    syy = sum(b * b for b in ious)
    expected = (n * sxy - sx * sy) / math.sqrt((n * sxx - sx * sx) * (n * syy - sy * sy))
    assert got == pytest.approx(expected, rel=1e-9)


def test_pooled_score_iou_matches_single_image_case():
    gts = [GT_A]
    boxes = [shifted(GT_A, dx) for dx in (0.0, 0.02, 0.05, 0.1)]
    dets = [det(b, iou(b, GT_A)) for b in boxes]
    assert pooled_score_iou([dets], [gts]) == pytest.approx(
        score_iou_correlation(dets, gts)
    )


def test_pooled_score_iou_pairs_detections_with_their_own_image():
    # One aligned pair per image; pooling the two images still gives a
    # perfect correlation because each det is scored by its own overlap.
    d1 = [det(shifted(GT_A, 0.0), 1.0), det(shifted(GT_A, 0.1), iou(shifted(GT_A, 0.1), GT_A))]
    d2 = [det(shifted(GT_B, 0.02), iou(shifted(GT_B, 0.02), GT_B))]
    got = pooled_score_iou([d1, d2], [[GT_A], [GT_B]])
    assert got == pytest.approx(1.0)
    assert pooled_score_iou([d2], [[GT_B]]) is None  # single pooled pair
    with pytest.raises(ValueError):
        pooled_score_iou([d1], [[GT_A], [GT_B]])


def test_compute_report_bundles_consistently():
    report = compute_report([FIX_DETS], [FIX_GTS])
    assert report.ap == pytest.approx(5.0 / 6.0)
    assert report.mr2 == pytest.approx(mr2([FIX_DETS], [FIX_GTS]))
    ji, best_t = jaccard_index([FIX_DETS], [FIX_GTS])
    assert (report.ji, report.ji_best_threshold) == (ji, best_t)
    payload = report.to_dict()
    assert set(payload) == {"ap", "mr2", "ji", "ji_best_threshold"}
