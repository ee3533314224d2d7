"""De-homogenization step by step on a crafted duplicate cluster.

Five queries: three near-duplicates stacked on one spot with different
confidences, two non-overlapping bystanders elsewhere. The walkthrough
shows the neighbor gates firing, the asymmetric difference aggregation,
and that a fresh module is the exact identity on content. Then it
trains the module briefly to push the duplicates' composed contents
apart and shows the duplicates separating while the bystanders, whose
neighbor sets are empty, only pick up the shared constant offset.

Run:
    python demos/composition_walkthrough.py
"""

from __future__ import annotations

import itertools

import numpy as np

from dehomodet import tensor as T
from dehomodet.boxes import Box
from dehomodet.dcg import Dcg, DcgConfig, ada, neighbor_sets
from dehomodet.model import AdamW
from dehomodet.tensor import DiffTensor, Tape


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))


def cosine_graph(out: DiffTensor, i: int, j: int) -> DiffTensor:
    a = T.slice_axis(out, 0, i, i + 1)
    b = T.slice_axis(out, 0, j, j + 1)
    dot = T.reduce_sum(T.mul(a, b))
    na = T.power(T.reduce_sum(T.mul(a, a)), 0.5)
    nb = T.power(T.reduce_sum(T.mul(b, b)), 0.5)
    return T.div(dot, T.mul(na, nb))


def build_queries(d: int) -> tuple[DiffTensor, np.ndarray, list[Box]]:
    rng = np.random.default_rng(42)
    base = rng.normal(size=d)
    contents = np.stack([
        base + 0.02 * rng.normal(size=d),   # duplicate 0
        base + 0.02 * rng.normal(size=d),   # duplicate 1
        base + 0.02 * rng.normal(size=d),   # duplicate 2
        rng.normal(size=d),                 # bystander 3
        rng.normal(size=d),                 # bystander 4
    ])
    confidences = np.array([0.9, 0.7, 0.5, 0.8, 0.6])
    boxes = [
        Box(0.30, 0.30, 0.2, 0.2),
        Box(0.31, 0.30, 0.2, 0.2),
        Box(0.30, 0.32, 0.2, 0.2),
        Box(0.70, 0.70, 0.15, 0.15),
        Box(0.75, 0.65, 0.15, 0.15),
    ]
    return DiffTensor(contents), confidences, boxes


def main() -> None:
    d = 16
    content, conf, boxes = build_queries(d)
    dup_pairs = list(itertools.combinations(range(3), 2))

    config = DcgConfig(c_low=0.1, gate_threshold=0.5, gate_direction="above")
    neighbors = neighbor_sets(conf, boxes, config)
    print("gate: j is a neighbor of i when conf_j > conf_i, conf_j > 0.1,")
    print("and iou(i, j) is above 0.5")
    for i, neigh in enumerate(neighbors):
        print(f"  query {i} (conf {conf[i]:.2f}): neighbors {neigh}")

    module = Dcg(np.random.default_rng(5), d, config)
    agg = ada(module.dehomo_id(content), neighbors)
    print("aggregated difference row norms:",
          np.round(np.linalg.norm(agg.data, axis=1), 3))

    out = module.apply(content, conf, boxes)
    print("fresh module is the identity on content:",
          np.array_equal(out.data, content.data))
    before = {p: cosine(content.data[p[0]], content.data[p[1]]) for p in dup_pairs}

    # Train the module to decorrelate the duplicates' composed contents.
    opt = AdamW(module.params(), lr=0.02)
    for step in range(301):
        with Tape() as tape:
            composed = module.apply(content, conf, boxes)
            terms = [cosine_graph(composed, i, j) for i, j in dup_pairs]
            loss = T.reduce_sum(T.concat([T.reshape(T.mul(c, c), (1,)) for c in terms]))
            tape.backward(loss)
        if step % 100 == 0:
            print(f"  step {step:3d}  sum sq cosine {loss.data:.6f}")
        opt.step()

    out = module.apply(content, conf, boxes)
    print("duplicate pair cosines, before -> after composition:")
    for i, j in dup_pairs:
        print(f"  ({i}, {j}): {before[(i, j)]:.4f} -> {cosine(out.data[i], out.data[j]):.4f}")
    print("bystander pair (3, 4), empty neighbor sets, shared offset only:")
    print(f"  {cosine(content.data[3], content.data[4]):.4f} -> "
          f"{cosine(out.data[3], out.data[4]):.4f}")


if __name__ == "__main__":
    main()
