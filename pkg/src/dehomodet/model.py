"""Toy two-stage query detector.

Pipeline: per-cell embedding of the scene grid, dense self-attention
encoder blocks, a per-cell head whose score doubles as the query
selector, top-K query initialization, then a decoder stack whose layers
cross-attend from queries to cells and deliberately contain no
query-to-query attention. Query differentiation happens once, between
the configured split point's stages, through the composition module.

Weight initialization draws every component from its own seeded stream,
so toggling one structural switch (query differentiation on/off, the
reference self-attention decoder) never shifts the weights of the parts
both variants share.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import files
from . import tensor as T
from .boxes import Box, giou
from .dcg import GATE_DIRECTIONS, Dcg, DcgConfig
from .layers import Attention, Block, Linear, Mlp, Params, attention_param_count, count_params
from .losses import (
    WEIGHT_MODES,
    box_loss_sum,
    encoder_bce_loss,
    encoder_joint_loss,
    focal_cls_terms,
)
from .matching import Assignment, hungarian, match_cost
from .metrics import compute_report
from .scenes import FEATURE_CHANNELS, Scene
from .suppression import Detection
from .tensor import DiffTensor

MODEL_SCHEMA_VERSION = 1
ENCODER_CLS_MODES = ("giou_aware", "bce")
BOX_EPS = 1e-6


class TrainingError(RuntimeError):
    """Raised when optimization produces a non-finite quantity."""


@dataclass(frozen=True)
class ModelConfig:
    grid_size: int = 16
    hidden: int = 32
    encoder_layers: int = 2
    decoder_before: int = 1
    decoder_after: int = 2
    queries: int = 32
    dcg_enabled: bool = True
    aligned: bool = True
    encoder_cls: str = "giou_aware"
    # "agreement" weighting saturates background scores in training (their
    # loss decreases toward confidence 1), wrecking top-K selection; the
    # detector defaults to "gap".
    weight_mode: str = "gap"
    gamma: float = 2.0
    c_low: float = 0.1
    gate_threshold: float = 0.5
    gate_direction: str = "below"
    cost_weights: tuple[float, float, float] = (2.0, 5.0, 2.0)
    box_loss_weights: tuple[float, float] = (5.0, 2.0)
    encoder_cls_weight: float = 1.0
    lr: float = 1e-3
    weight_decay: float = 1e-4
    seed: int = 0

    def __post_init__(self) -> None:
        if self.grid_size < 1 or self.hidden < 1 or self.encoder_layers < 1:
            raise ValueError("grid_size, hidden, and encoder_layers must be >= 1")
        if self.decoder_before < 0 or self.decoder_after < 1:
            raise ValueError(
                f"need decoder_before >= 0 and decoder_after >= 1, got "
                f"{self.decoder_before}/{self.decoder_after}"
            )
        if not 1 <= self.queries <= self.grid_size**2:
            raise ValueError(
                f"queries must be in [1, {self.grid_size ** 2}], got {self.queries}"
            )
        if self.encoder_cls not in ENCODER_CLS_MODES:
            raise ValueError(f"encoder_cls must be one of {ENCODER_CLS_MODES}")
        if self.weight_mode not in WEIGHT_MODES:
            raise ValueError(f"weight_mode must be one of {WEIGHT_MODES}")
        if self.gate_direction not in GATE_DIRECTIONS:
            raise ValueError(f"gate_direction must be one of {GATE_DIRECTIONS}")
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.lr < 0 or self.weight_decay < 0:
            raise ValueError("lr and weight_decay must be >= 0")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["cost_weights"] = list(self.cost_weights)
        out["box_loss_weights"] = list(self.box_loss_weights)
        return out

    @staticmethod
    def from_dict(data: dict) -> "ModelConfig":
        data = dict(data)
        for key in ("cost_weights", "box_loss_weights"):
            if key in data:
                data[key] = tuple(data[key])
        return ModelConfig(**data)


class DecoderLayer:
    """Cross-attention block over cell features, optionally preceded by
    query self-attention (the reference construction being ablated away)."""

    def __init__(
        self,
        rng_main: np.random.Generator,
        rng_self: np.random.Generator,
        d: int,
        aligned: bool,
        prefix: str,
    ) -> None:
        self.self_attn = None if aligned else Attention(rng_self, d, prefix + ".self_attn")
        self.block = Block(rng_main, d, prefix)

    def __call__(self, q: DiffTensor, cells: DiffTensor, ref_embed: DiffTensor) -> DiffTensor:
        if self.self_attn is not None:
            qk = T.add(q, ref_embed)
            q = T.layer_norm(T.add(q, self.self_attn(qk, qk)))
        return self.block(q, cells, q_extra=ref_embed)

    def params(self) -> Params:
        out: Params = [] if self.self_attn is None else self.self_attn.params()
        return out + self.block.params()


class StageHead:
    """Per-stage prediction head: scalar score logit and 4 box logits."""

    def __init__(self, rng: np.random.Generator, d: int, prefix: str) -> None:
        self.score = Linear(rng, d, 1, prefix + ".score")
        self.box = Mlp(rng, d, d, 4, prefix + ".box")

    def params(self) -> Params:
        return self.score.params() + self.box.params()


@dataclass(frozen=True)
class ForwardFreeze:
    """Pinned values for everything the forward pass treats as constant.

    The decoder reads query selection, per-stage reference boxes, and
    per-stage confidences as detached values. Gradient checks must hold
    them at the base point while weights are perturbed, or the numeric
    difference picks up contributions the analytic gradient rightly
    excludes. Training never uses this.
    """

    selected: list[int]
    stage_refs: list[np.ndarray]
    stage_confs: list[np.ndarray]


@dataclass(frozen=True)
class FrozenStructure:
    """Freeze bundle for a whole loss evaluation: forward constants plus
    the matching assignments and encoder quality labels."""

    forward: ForwardFreeze
    enc_assignment: "Assignment"
    quality_labels: np.ndarray | None
    stage_assignments: list["Assignment"]


@dataclass
class ForwardResult:
    """Every stage's predictions plus diagnostic snapshots.

    Tensors stay attached to whatever tape was active during the forward
    pass; the content snapshots and reference boxes are detached copies.
    ``stage_refs`` and ``stage_confs`` hold the values entering each
    decoder stage.
    """

    image_id: str | None
    encoder_scores: DiffTensor
    encoder_boxes: DiffTensor
    selected: list[int]
    stage_scores: list[DiffTensor]
    stage_boxes: list[DiffTensor]
    stage_contents: list[np.ndarray]
    stage_refs: list[np.ndarray]
    stage_confs: list[np.ndarray]
    dcg_input: np.ndarray | None
    dcg_output: np.ndarray | None

    def n_stages(self) -> int:
        return 1 + len(self.stage_scores)

    def encoder_detections(self) -> list[Detection]:
        return _to_detections(
            self.encoder_boxes.data, self.encoder_scores.data, self.image_id, stage=0
        )

    def stage_detections(self, stage: int) -> list[Detection]:
        """Decoder stage detections; stage counts from 1 (0 is the encoder)."""
        if not 1 <= stage <= len(self.stage_scores):
            raise ValueError(f"stage must be in [1, {len(self.stage_scores)}], got {stage}")
        return _to_detections(
            self.stage_boxes[stage - 1].data,
            self.stage_scores[stage - 1].data,
            self.image_id,
            stage=stage,
        )

    def final_detections(self) -> list[Detection]:
        return self.stage_detections(len(self.stage_scores))

    def all_stage_detections(self) -> list[list[Detection]]:
        out = [self.encoder_detections()]
        for s in range(1, len(self.stage_scores) + 1):
            out.append(self.stage_detections(s))
        return out


def _to_detections(
    boxes: np.ndarray, scores: np.ndarray, image_id: str | None, stage: int
) -> list[Detection]:
    return [
        Detection(box=Box.from_list(row.tolist()), score=float(s), image_id=image_id, stage=stage)
        for row, s in zip(boxes, scores)
    ]


def gqs_select(scores: np.ndarray, k: int) -> list[int]:
    """Indices of the top-k scores, descending, ties to the lowest index."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1:
        raise ValueError(f"scores must be 1-D, got shape {scores.shape}")
    if not 1 <= k <= scores.shape[0]:
        raise ValueError(f"k must be in [1, {scores.shape[0]}], got {k}")
    return [int(i) for i in np.argsort(-scores, kind="stable")[:k]]


class Model:
    def __init__(self, config: ModelConfig) -> None:
        d = config.hidden
        seed = config.seed

        def rng(*key: int) -> np.random.Generator:
            return np.random.default_rng([seed, *key])

        self.config = config
        self.embed = Mlp(rng(0), FEATURE_CHANNELS + 2, d, d, "embed")
        self.enc_blocks = [
            Block(rng(1, i), d, f"enc.{i}") for i in range(config.encoder_layers)
        ]
        self.enc_head = StageHead(rng(2), d, "enc_head")
        self.query_proj = Linear(rng(4), d, d, "query_proj")
        self.ref_proj = Linear(rng(5), 4, d, "ref_proj")
        n_dec = config.decoder_before + config.decoder_after
        self.dec_layers = [
            DecoderLayer(rng(6, i), rng(7, i), d, config.aligned, f"dec.{i}")
            for i in range(n_dec)
        ]
        self.dec_heads = [StageHead(rng(8, i), d, f"dec.{i}.head") for i in range(n_dec)]
        self.dcg = Dcg(
            rng(9),
            d,
            DcgConfig(config.c_low, config.gate_threshold, config.gate_direction),
        )
        g = config.grid_size
        cols, rows = np.meshgrid((np.arange(g) + 0.5) / g, (np.arange(g) + 0.5) / g)
        self._center_planes = np.stack([cols, rows], axis=2)

    # --- parameters -------------------------------------------------------

    def params(self) -> Params:
        """Every constructed parameter, in a fixed order (snapshot layout)."""
        out = list(self.embed.params())
        for blk in self.enc_blocks:
            out += blk.params()
        out += self.enc_head.params()
        out += self.query_proj.params() + self.ref_proj.params()
        for layer, head in zip(self.dec_layers, self.dec_heads):
            out += layer.params() + head.params()
        out += self.dcg.params()
        return out

    def trainable_params(self) -> Params:
        """Parameters the optimizer touches; excludes the inactive module."""
        if self.config.dcg_enabled:
            return self.params()
        dcg_names = {name for name, _ in self.dcg.params()}
        return [(n, p) for n, p in self.params() if n not in dcg_names]

    # --- forward ----------------------------------------------------------

    def encode(self, features: np.ndarray) -> tuple[DiffTensor, DiffTensor, DiffTensor]:
        """(cells, per-cell scores, per-cell boxes) from one scene grid."""
        g = self.config.grid_size
        features = np.asarray(features, dtype=np.float64)
        if features.shape != (g, g, FEATURE_CHANNELS):
            raise T.ShapeMismatchError(
                f"features shape {features.shape} vs expected {(g, g, FEATURE_CHANNELS)}"
            )
        grid = np.concatenate([features, self._center_planes], axis=2)
        x = self.embed(T.constant(grid.reshape(g * g, FEATURE_CHANNELS + 2)))
        for blk in self.enc_blocks:
            x = blk(x)
        scores = T.sigmoid(T.reshape(self.enc_head.score(x), (g * g,)))
        boxes = T.clamp(T.sigmoid(self.enc_head.box(x)), BOX_EPS, 1.0 - BOX_EPS)
        return x, scores, boxes

    def forward(
        self,
        features: np.ndarray,
        image_id: str | None = None,
        freeze: ForwardFreeze | None = None,
    ) -> ForwardResult:
        cfg = self.config
        n_dec = len(self.dec_layers)
        if freeze is not None and (
            len(freeze.stage_refs) != n_dec or len(freeze.stage_confs) != n_dec
        ):
            raise ValueError(
                f"freeze carries {len(freeze.stage_refs)} ref / "
                f"{len(freeze.stage_confs)} conf stages, model has {n_dec}"
            )
        cells, enc_scores, enc_boxes = self.encode(features)
        selected = gqs_select(enc_scores.data, cfg.queries) if freeze is None else list(freeze.selected)
        content = self.query_proj(T.gather_rows(cells, selected))
        refs = enc_boxes.data[selected].copy()
        confs = enc_scores.data[selected].copy()

        stage_scores: list[DiffTensor] = []
        stage_boxes: list[DiffTensor] = []
        stage_contents: list[np.ndarray] = []
        stage_refs: list[np.ndarray] = []
        stage_confs: list[np.ndarray] = []
        dcg_input = dcg_output = None
        for s, (layer, head) in enumerate(zip(self.dec_layers, self.dec_heads)):
            if freeze is not None:
                refs = freeze.stage_refs[s]
                confs = freeze.stage_confs[s]
            if s == cfg.decoder_before and cfg.dcg_enabled:
                dcg_input = content.data.copy()
                ref_boxes = [Box.from_list(r.tolist()) for r in refs]
                content = self.dcg.apply(content, confs, ref_boxes)
                dcg_output = content.data.copy()
            ref_embed = self.ref_proj(T.constant(refs))
            content = layer(content, cells, ref_embed)
            scores = T.sigmoid(T.reshape(head.score(content), (cfg.queries,)))
            delta = head.box(content)
            boxes = T.clamp(
                T.sigmoid(T.add(delta, T.constant(T.logit(refs)))),
                BOX_EPS,
                1.0 - BOX_EPS,
            )
            stage_scores.append(scores)
            stage_boxes.append(boxes)
            stage_contents.append(content.data.copy())
            stage_refs.append(refs)
            stage_confs.append(confs)
            refs = boxes.data.copy()
            confs = scores.data.copy()
        return ForwardResult(
            image_id=image_id,
            encoder_scores=enc_scores,
            encoder_boxes=enc_boxes,
            selected=selected,
            stage_scores=stage_scores,
            stage_boxes=stage_boxes,
            stage_contents=stage_contents,
            stage_refs=stage_refs,
            stage_confs=stage_confs,
            dcg_input=dcg_input,
            dcg_output=dcg_output,
        )

    # --- loss -------------------------------------------------------------

    def freeze_structure(self, scene: Scene) -> FrozenStructure:
        """Pin all stop-gradient structure of this scene's loss at the
        current weights. The quality labels must replicate what
        ``encoder_joint_loss`` computes when given none."""
        cfg = self.config
        result = self.forward(scene.features, image_id=scene.image_id)
        gts = list(scene.gt_boxes)
        enc_pred = [Box.from_list(r.tolist()) for r in result.encoder_boxes.data]
        enc_assign = hungarian(
            match_cost(enc_pred, result.encoder_scores.data.tolist(), gts, cfg.cost_weights)
        )
        labels = None
        if cfg.encoder_cls == "giou_aware":
            labels = np.zeros(len(enc_pred))
            for r, c in enc_assign.pairs:
                labels[r] = giou(enc_pred[r], gts[c])
        stage_assigns = [
            hungarian(
                match_cost(
                    [Box.from_list(row.tolist()) for row in boxes.data],
                    scores.data.tolist(),
                    gts,
                    cfg.cost_weights,
                )
            )
            for scores, boxes in zip(result.stage_scores, result.stage_boxes)
        ]
        fwd = ForwardFreeze(
            selected=list(result.selected),
            stage_refs=[r.copy() for r in result.stage_refs],
            stage_confs=[c.copy() for c in result.stage_confs],
        )
        return FrozenStructure(fwd, enc_assign, labels, stage_assigns)

    def scene_loss(self, scene: Scene, frozen: FrozenStructure | None = None) -> DiffTensor:
        """Total supervision for one scene, recorded on the active tape.

        ``frozen`` holds assignments, labels, and forward constants at a
        base point for gradient checks; training always passes none and
        recomputes them from the live predictions.
        """
        enc_term, dec_term = self.scene_loss_terms(scene, frozen)
        return T.add(enc_term, dec_term)

    def scene_loss_terms(
        self, scene: Scene, frozen: FrozenStructure | None = None
    ) -> tuple[DiffTensor, DiffTensor]:
        """(encoder supervision, summed per-stage decoder supervision)."""
        cfg = self.config
        result = self.forward(
            scene.features,
            image_id=scene.image_id,
            freeze=None if frozen is None else frozen.forward,
        )
        gts = list(scene.gt_boxes)

        if frozen is None:
            enc_pred = [Box.from_list(r.tolist()) for r in result.encoder_boxes.data]
            enc_assign = hungarian(
                match_cost(enc_pred, result.encoder_scores.data.tolist(), gts, cfg.cost_weights)
            )
        else:
            enc_assign = frozen.enc_assignment
        if cfg.encoder_cls == "giou_aware":
            enc_total = encoder_joint_loss(
                result.encoder_boxes,
                result.encoder_scores,
                gts,
                enc_assign,
                gamma=cfg.gamma,
                box_weights=cfg.box_loss_weights,
                cls_weight=cfg.encoder_cls_weight,
                mode=cfg.weight_mode,
                quality_labels=None if frozen is None else frozen.quality_labels,
            )
        else:
            enc_total = encoder_bce_loss(
                result.encoder_boxes,
                result.encoder_scores,
                gts,
                enc_assign,
                box_weights=cfg.box_loss_weights,
                cls_weight=cfg.encoder_cls_weight,
            )

        dec_total: DiffTensor | None = None
        for i, (scores, boxes) in enumerate(zip(result.stage_scores, result.stage_boxes)):
            if frozen is None:
                pred = [Box.from_list(row.tolist()) for row in boxes.data]
                assign = hungarian(match_cost(pred, scores.data.tolist(), gts, cfg.cost_weights))
            else:
                assign = frozen.stage_assignments[i]
            pos_mask = np.zeros(cfg.queries, dtype=bool)
            matched_rows: list[int] = []
            matched_gts: list[Box] = []
            for r, c in assign.pairs:
                pos_mask[r] = True
                matched_rows.append(r)
                matched_gts.append(gts[c])
            stage = T.reduce_sum(focal_cls_terms(scores, pos_mask, gamma=cfg.gamma))
            if matched_rows:
                matched = T.gather_rows(boxes, matched_rows)
                stage = T.add(stage, box_loss_sum(matched, matched_gts, cfg.box_loss_weights))
            stage = T.scale(stage, 1.0 / max(1, len(gts)))
            dec_total = stage if dec_total is None else T.add(dec_total, stage)
        assert dec_total is not None  # config guarantees >= 1 decoder stage
        return enc_total, dec_total


# --- optimizer --------------------------------------------------------------

class AdamW:
    """Adaptive moments with decoupled weight decay, kept deliberately plain."""

    def __init__(
        self,
        named_params: Params,
        lr: float,
        weight_decay: float = 0.0,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ) -> None:
        self.named = list(named_params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.named}
        self.v = {name: np.zeros_like(p.data) for name, p in self.named}

    def step(self, grad_scale: float = 1.0) -> None:
        self.t += 1
        b1c = 1.0 - self.b1**self.t
        b2c = 1.0 - self.b2**self.t
        for name, p in self.named:
            g = p.gradient() * grad_scale
            if not np.isfinite(g).all():
                raise TrainingError(f"non-finite gradient in '{name}' at step {self.t}")
            p.data *= 1.0 - self.lr * self.weight_decay
            m = self.m[name]
            v = self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)
            p.zero_grad()


# --- training ---------------------------------------------------------------

@dataclass(frozen=True)
class EpochLog:
    epoch: int
    loss: float
    loss_encoder: float
    loss_decoder: float
    ap: float | None = None
    mr2: float | None = None
    ji: float | None = None


def evaluate_model(
    model: Model, scenes: Sequence[Scene], iou_thresh: float = 0.5
):
    """MetricsReport of final-stage detections over the given scenes."""
    dets = []
    gts = []
    for scene in scenes:
        result = model.forward(scene.features, image_id=scene.image_id)
        dets.append(result.final_detections())
        gts.append(list(scene.gt_boxes))
    return compute_report(dets, gts, iou_thresh)


def train(
    model: Model,
    scenes: Sequence[Scene],
    epochs: int,
    batch_size: int = 8,
    val_scenes: Sequence[Scene] | None = None,
    progress: Callable[[EpochLog], None] | None = None,
) -> list[EpochLog]:
    """Optimize in place; returns one log row per epoch.

    Deterministic at a fixed config seed: batch order comes from its own
    seeded stream, and every forward runs single-threaded math.
    """
    if not scenes:
        raise ValueError("training needs at least one scene")
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    cfg = model.config
    opt = AdamW(model.trainable_params(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    logs: list[EpochLog] = []
    for epoch in range(epochs):
        order = np.random.default_rng([cfg.seed, 31, epoch]).permutation(len(scenes))
        enc_sum = dec_sum = 0.0
        for start in range(0, len(order), batch_size):
            batch = [scenes[i] for i in order[start : start + batch_size]]
            for scene in batch:
                try:
                    with T.Tape() as tape:
                        enc_term, dec_term = model.scene_loss_terms(scene)
                        loss = T.add(enc_term, dec_term)
                        tape.backward(loss)
                except T.NonFiniteError as err:
                    raise TrainingError(
                        f"non-finite loss at epoch {epoch}, scene {scene.image_id}: {err}"
                    ) from err
                enc_sum += enc_term.item()
                dec_sum += dec_term.item()
            opt.step(grad_scale=1.0 / len(batch))
        n = len(scenes)
        ap = mr2_val = ji = None
        if val_scenes:
            report = evaluate_model(model, val_scenes)
            ap, mr2_val, ji = report.ap, report.mr2, report.ji
        row = EpochLog(
            epoch=epoch,
            loss=(enc_sum + dec_sum) / n,
            loss_encoder=enc_sum / n,
            loss_decoder=dec_sum / n,
            ap=ap,
            mr2=mr2_val,
            ji=ji,
        )
        logs.append(row)
        if progress is not None:
            progress(row)
    return logs


# --- accounting, truncation, snapshots ---------------------------------------

def param_count(model: Model) -> dict[str, int]:
    """Exact parameter counts per named block; inactive modules count zero."""
    blocks: dict[str, int] = {
        "embed": count_params(model.embed.params()),
        "encoder": sum(count_params(b.params()) for b in model.enc_blocks),
        "encoder_head": count_params(model.enc_head.params()),
        "projections": count_params(model.query_proj.params())
        + count_params(model.ref_proj.params()),
        "decoder": sum(count_params(l.params()) for l in model.dec_layers),
        "decoder_heads": sum(count_params(h.params()) for h in model.dec_heads),
        "dcg": count_params(model.dcg.params()) if model.config.dcg_enabled else 0,
    }
    blocks["total"] = sum(blocks.values())
    return blocks


def truncate_decoder(model: Model, keep_stages: int) -> Model:
    """Inference-time model keeping only the first post-split decoder layers.

    Shares weights with the original; nothing is copied or retrained.
    """
    cfg = model.config
    if not 1 <= keep_stages <= cfg.decoder_after:
        raise ValueError(
            f"keep_stages must be in [1, {cfg.decoder_after}], got {keep_stages}"
        )
    clone = copy.copy(model)
    keep = cfg.decoder_before + keep_stages
    clone.dec_layers = model.dec_layers[:keep]
    clone.dec_heads = model.dec_heads[:keep]
    clone.config = replace(cfg, decoder_after=keep_stages)
    return clone


def save_model(model: Model, path) -> None:
    records = [
        {"name": name, "shape": list(p.data.shape), "values": p.data.reshape(-1).tolist()}
        for name, p in model.params()
    ]
    payload = {
        "schema_version": MODEL_SCHEMA_VERSION,
        "config": model.config.to_dict(),
        "weights": records,
    }
    files.atomic_write_text(path, json.dumps(payload, sort_keys=True))


def load_model(path) -> Model:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("schema_version") != MODEL_SCHEMA_VERSION:
        raise ValueError(f"unsupported model schema: {payload.get('schema_version')!r}")
    model = Model(ModelConfig.from_dict(payload["config"]))
    stored = {rec["name"]: rec for rec in payload["weights"]}
    expected = model.params()
    expected_names = {name for name, _ in expected}
    if set(stored) != expected_names:
        missing = sorted(expected_names - set(stored))
        extra = sorted(set(stored) - expected_names)
        raise ValueError(f"weight names mismatch: missing {missing}, extra {extra}")
    for name, p in expected:
        rec = stored[name]
        arr = np.array(rec["values"], dtype=np.float64).reshape(rec["shape"])
        if arr.shape != p.data.shape:
            raise ValueError(
                f"weight '{name}' has shape {arr.shape}, expected {p.data.shape}"
            )
        p.data = arr
    return model
