"""The three detection metrics on a worked miniature example.

One image, two ground-truth boxes, three ranked detections: a good hit,
a decoy next to it, and a late hit on the second object. Walks through
the precision-recall curve behind AP, the miss-rate/FPPI trade behind
the log-average miss rate, and the set overlap behind the Jaccard
index, then shows the same numbers from the library calls.

Run:
    python demos/metrics_tour.py
"""

from __future__ import annotations

from dehomodet.boxes import Box
from dehomodet.metrics import average_precision, compute_report, jaccard_index, mr2
from dehomodet.suppression import Detection


def fixture() -> tuple[list[list[Detection]], list[list[Box]]]:
    gts = [[Box(0.2, 0.2, 0.2, 0.2), Box(0.7, 0.7, 0.2, 0.2)]]
    dets = [[
        Detection(Box(0.21, 0.2, 0.2, 0.2), 0.9),   # hits gt 0
        Detection(Box(0.33, 0.2, 0.2, 0.2), 0.8),   # decoy, iou too low
        Detection(Box(0.7, 0.71, 0.2, 0.2), 0.3),   # hits gt 1
    ]]
    return dets, gts


def walk_through() -> None:
    print("ranked detections: TP, FP, TP against 2 ground truths")
    print("after each detection, precision and recall:")
    rows = [("TP", 1 / 1, 1 / 2), ("FP", 1 / 2, 1 / 2), ("TP", 2 / 3, 2 / 2)]
    for kind, prec, rec in rows:
        print(f"  {kind}: precision {prec:.3f}, recall {rec:.3f}")
    print("interpolated area: 1.0 * 0.5 + (2/3) * 0.5 = 5/6 =", 5 / 6)


def library_values() -> None:
    dets, gts = fixture()
    ap = average_precision(dets, gts, iou_thresh=0.5)
    print("average_precision:", ap)

    mr = mr2(dets, gts, iou_thresh=0.5)
    print("log-average miss rate:", mr)
    print("(one image, so FPPI jumps straight from 0 to 1 at the decoy;")
    print(" most of the sampling grid sits at miss rate 1/2 or below)")

    ji, best_t = jaccard_index(dets, gts, iou_thresh=0.5)
    print(f"jaccard index: {ji} at score cut {best_t}")
    print("(keeping all 3: 2 matched of union 3; dropping the decoy is")
    print(" impossible without dropping the second hit, so 2/3 stands)")

    report = compute_report(dets, gts)
    print("compute_report bundles all three:")
    print(" ", report.to_dict())


def main() -> None:
    walk_through()
    print()
    library_values()


if __name__ == "__main__":
    main()
