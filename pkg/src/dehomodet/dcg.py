"""Query differentiation: ID encoding, asymmetric difference aggregation,
and composition back into query content.

The aggregation is the only channel through which one query learns about
its neighbors when the decoder has no query self-attention, so its gating
rules are load-bearing: neighbor selection is strict (`c_j > c_i`,
`c_j > c_low`) and hard (no gradient through the gates); gradients flow
only through the ID vectors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .boxes import Box, iou
from .layers import Mlp, Params
from .tensor import DiffTensor

GATE_DIRECTIONS = ("below", "above")


@dataclass(frozen=True)
class DcgConfig:
    """Gating knobs for neighbor selection.

    `gate_direction` picks which side of `gate_threshold` an IoU must land
    on for a higher-confidence query to count as a neighbor: "below" keeps
    low-overlap neighbors, "above" keeps high-overlap ones. Both are
    supported and the ablation runner exercises both.
    """

    c_low: float = 0.1
    gate_threshold: float = 0.5
    gate_direction: str = "below"

    def __post_init__(self) -> None:
        if not 0.0 <= self.c_low < 1.0:
            raise ValueError(f"c_low must be in [0, 1), got {self.c_low}")
        if not 0.0 < self.gate_threshold < 1.0:
            raise ValueError(f"gate_threshold must be in (0, 1), got {self.gate_threshold}")
        if self.gate_direction not in GATE_DIRECTIONS:
            raise ValueError(f"gate_direction must be one of {GATE_DIRECTIONS}")


def neighbor_sets(
    confidences: np.ndarray | Sequence[float],
    boxes: Sequence[Box],
    config: DcgConfig,
) -> list[list[int]]:
    """Per-query neighbor indices under the strict confidence and IoU gates.

    A hard decision: confidences arrive as plain floats, detached from any
    gradient path. Exact confidence ties never pair (strict inequality),
    so two identical queries with equal confidence both get empty sets.
    """
    conf = np.asarray(confidences, dtype=np.float64)
    if conf.shape != (len(boxes),):
        raise ValueError(f"{conf.shape} confidences for {len(boxes)} boxes")
    if not np.isfinite(conf).all():
        raise ValueError("confidences must be finite")
    out: list[list[int]] = []
    for i in range(len(boxes)):
        neigh: list[int] = []
        for j in range(len(boxes)):
            if j == i:
                continue
            if not (conf[j] > conf[i] and conf[j] > config.c_low):
                continue
            overlap = iou(boxes[j], boxes[i])
            if config.gate_direction == "below":
                passes = overlap < config.gate_threshold
            else:
                passes = overlap > config.gate_threshold
            if passes:
                neigh.append(j)
        out.append(neigh)
    return out


def ada(ids: DiffTensor, neighbors: Sequence[Sequence[int]]) -> DiffTensor:
    """Asymmetric difference aggregation over ID vectors.

    Row i is the elementwise max of {id_i - id_j : j in neighbors[i]},
    or zeros when the set is empty. Output shape matches `ids` (K, d).
    """
    k, d = ids.data.shape
    if len(neighbors) != k:
        raise ValueError(f"{len(neighbors)} neighbor sets for {k} ids")
    rows: list[DiffTensor] = []
    for i, neigh in enumerate(neighbors):
        own = T.slice_axis(ids, 0, i, i + 1)
        diffs = [T.sub(own, T.slice_axis(ids, 0, j, j + 1)) for j in neigh]
        rows.append(T.max_pool_set(diffs, (1, d)))
    return T.concat(rows, axis=0)


class Dcg:
    """ID encoder plus composition feedforward.

    The composition feedforward's output layer starts at zero, so a fresh
    module is the exact identity on query content; training moves it away
    from zero.
    """

    def __init__(
        self,
        rng: np.random.Generator,
        d: int,
        config: DcgConfig | None = None,
        prefix: str = "dcg",
    ) -> None:
        self.d = d
        self.config = config if config is not None else DcgConfig()
        self.id_encoder = Mlp(rng, d, d, d, prefix + ".id")
        self.ffn = Mlp(rng, d, d, d, prefix + ".ffn", zero_init_output=True)

    def dehomo_id(self, content: DiffTensor) -> DiffTensor:
        """Layer-normalized two-layer encoding of query content, (K, d) -> (K, d)."""
        if content.data.ndim != 2 or content.data.shape[1] != self.d:
            raise T.ShapeMismatchError(
                f"content shape {content.data.shape} vs hidden size {self.d}"
            )
        return T.layer_norm(self.id_encoder(content))

    def compose(self, content: DiffTensor, q_de: DiffTensor) -> DiffTensor:
        """content + ffn(q_de); reference boxes and confidences are untouched."""
        if content.data.shape != q_de.data.shape:
            raise T.ShapeMismatchError(
                f"content shape {content.data.shape} vs q_de shape {q_de.data.shape}"
            )
        return T.add(content, self.ffn(q_de))

    def apply(
        self,
        content: DiffTensor,
        confidences: np.ndarray | Sequence[float],
        boxes: Sequence[Box],
    ) -> DiffTensor:
        """Full pass: IDs, neighbor gating, aggregation, composition."""
        ids = self.dehomo_id(content)
        neighbors = neighbor_sets(confidences, boxes, self.config)
        return self.compose(content, ada(ids, neighbors))

    def params(self) -> Params:
        return self.id_encoder.params() + self.ffn.params()
