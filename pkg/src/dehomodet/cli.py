"""Experiment runner and file-format boundary.

Subcommands: gen-data, train, eval, ablate, suppress, diagnose. Every
option in the key = value config file is overridable by a command-line
flag of the same name, artifacts are written atomically, and identical
invocations produce byte-identical outputs.

File formats (all JSON-lines files start with a header line):
  dataset      header {"kind": "dataset", "schema_version", "grid_size"},
               then one scene per line: image_id, gt_boxes, features,
               density_label
  predictions  header {"kind": "predictions", "schema_version"}, then one
               detection per line: image_id, box [cx, cy, w, h], score,
               optional stage
"""

from __future__ import annotations

import argparse
import configparser
import io
import itertools
import json
import os
import sys
from dataclasses import dataclass, fields, replace
from typing import Any, Callable, Sequence

import numpy as np

from . import files
from .boxes import Box
from .losses import equilibrium_sim
from .metrics import (
    MetricsReport,
    compute_report,
    homogeneity_scatter,
    pearson,
    pooled_score_iou,
    tp_fp_by_confidence,
    tp_fp_by_density,
)
from .model import (
    EpochLog,
    Model,
    ModelConfig,
    TrainingError,
    evaluate_model,
    load_model,
    param_count,
    save_model,
    train,
    truncate_decoder,
)
from .scenes import DENSITY_TIERS, FEATURE_CHANNELS, Scene, SceneGenParams, generate
from .suppression import (
    Detection,
    adaptive_nms,
    max_overlap_density,
    nms,
    soft_nms,
)

DATASET_SCHEMA_VERSION = 1
PREDICTIONS_SCHEMA_VERSION = 1
REPORT_SCHEMA_VERSION = 1
OUT_DIR_ENV = "DEHOMODET_OUT"
SUPPRESS_METHODS = ("nms", "soft", "adaptive")


class CliError(Exception):
    """User-facing failure; main() prints it and exits nonzero."""


# --- run configuration --------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    """Flat merged view of model, scene, training, and evaluation settings.

    One seed and one grid size are shared by the model and the scene
    generator; a saved config re-executes identically.
    """

    # model
    grid_size: int = 16
    hidden: int = 32
    encoder_layers: int = 2
    decoder_before: int = 1
    decoder_after: int = 2
    queries: int = 32
    dcg_enabled: bool = True
    aligned: bool = True
    encoder_cls: str = "giou_aware"
    weight_mode: str = "gap"
    gamma: float = 2.0
    c_low: float = 0.1
    gate_threshold: float = 0.5
    gate_direction: str = "below"
    cost_weights: tuple[float, ...] = (2.0, 5.0, 2.0)
    box_loss_weights: tuple[float, ...] = (5.0, 2.0)
    encoder_cls_weight: float = 1.0
    lr: float = 1e-3
    weight_decay: float = 1e-4
    seed: int = 0
    # scenes
    mean_objects: float = 8.0
    cluster_count: int = 3
    cluster_spread: float = 0.08
    size_range: tuple[float, ...] = (0.06, 0.18)
    noise: float = 0.0
    n_scenes: int = 200
    density: str = ""
    # training
    epochs: int = 200
    batch_size: int = 8
    # evaluation
    iou_thresh: float = 0.5
    bins: int = 10

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            grid_size=self.grid_size,
            hidden=self.hidden,
            encoder_layers=self.encoder_layers,
            decoder_before=self.decoder_before,
            decoder_after=self.decoder_after,
            queries=self.queries,
            dcg_enabled=self.dcg_enabled,
            aligned=self.aligned,
            encoder_cls=self.encoder_cls,
            weight_mode=self.weight_mode,
            gamma=self.gamma,
            c_low=self.c_low,
            gate_threshold=self.gate_threshold,
            gate_direction=self.gate_direction,
            cost_weights=tuple(self.cost_weights),
            box_loss_weights=tuple(self.box_loss_weights),
            encoder_cls_weight=self.encoder_cls_weight,
            lr=self.lr,
            weight_decay=self.weight_decay,
            seed=self.seed,
        )

    def scene_params(self, seed: int | None = None) -> SceneGenParams:
        mean = self.mean_objects
        if self.density:
            if self.density not in DENSITY_TIERS:
                raise CliError(
                    f"unknown density tier {self.density!r}; "
                    f"choose from {sorted(DENSITY_TIERS)}"
                )
            mean = DENSITY_TIERS[self.density]
        return SceneGenParams(
            mean_objects=mean,
            cluster_count=self.cluster_count,
            cluster_spread=self.cluster_spread,
            size_range=tuple(self.size_range),
            noise=self.noise,
            grid_size=self.grid_size,
            seed=self.seed if seed is None else seed,
        )


CONFIG_SECTIONS: dict[str, tuple[str, ...]] = {
    "model": (
        "grid_size",
        "hidden",
        "encoder_layers",
        "decoder_before",
        "decoder_after",
        "queries",
        "dcg_enabled",
        "aligned",
        "encoder_cls",
        "weight_mode",
        "gamma",
        "c_low",
        "gate_threshold",
        "gate_direction",
        "cost_weights",
        "box_loss_weights",
        "encoder_cls_weight",
        "lr",
        "weight_decay",
        "seed",
    ),
    "scenes": (
        "mean_objects",
        "cluster_count",
        "cluster_spread",
        "size_range",
        "noise",
        "n_scenes",
        "density",
    ),
    "train": ("epochs", "batch_size"),
    "eval": ("iou_thresh", "bins"),
}

_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
_SECTION_OF = {key: sec for sec, keys in CONFIG_SECTIONS.items() for key in keys}
assert set(_SECTION_OF) == set(_FIELD_TYPES), "config sections must cover RunConfig exactly"


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def coerce_value(key: str, raw: str) -> Any:
    """Parse a config-file or flag string into the field's type."""
    kind = _FIELD_TYPES[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            return _parse_bool(raw)
        if kind.startswith("tuple"):
            return tuple(float(part) for part in raw.split(",") if part.strip() != "")
        return raw
    except ValueError as err:
        raise CliError(f"bad value for {key!r}: {err}") from err


def read_config_file(path: str) -> dict[str, Any]:
    parser = configparser.ConfigParser()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as err:
        raise CliError(f"cannot read config {path}: {err}") from err
    except configparser.Error as err:
        lineno = getattr(err, "lineno", None)
        where = f"{path}:{lineno}" if lineno else path
        raise CliError(f"{where}: malformed config: {err.message}") from err
    out: dict[str, Any] = {}
    for section in parser.sections():
        if section not in CONFIG_SECTIONS:
            raise CliError(f"{path}: unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in _FIELD_TYPES or _SECTION_OF[key] != section:
                raise CliError(f"{path}: unknown key {key!r} in section [{section}]")
            out[key] = coerce_value(key, raw)
    return out


def write_config_file(path, config: RunConfig) -> None:
    parser = configparser.ConfigParser()
    for section, keys in CONFIG_SECTIONS.items():
        parser[section] = {}
        for key in keys:
            value = getattr(config, key)
            if isinstance(value, tuple):
                rendered = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                rendered = "true" if value else "false"
            else:
                rendered = str(value)
            parser[section][key] = rendered
    buf = io.StringIO()
    parser.write(buf)
    files.atomic_write_text(path, buf.getvalue())


def build_run_config(args: argparse.Namespace, skip: tuple[str, ...] = ()) -> RunConfig:
    """Defaults, then config file, then same-name command-line flags.

    ``skip`` names keys whose flag belongs to the subcommand itself
    rather than the config override group.
    """
    merged: dict[str, Any] = {}
    if getattr(args, "config", None):
        merged.update(read_config_file(args.config))
    for key in _FIELD_TYPES:
        if key in skip:
            continue
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            merged[key] = coerce_value(key, flag_value)
    try:
        return RunConfig(**merged)
    except (TypeError, ValueError) as err:
        raise CliError(f"invalid configuration: {err}") from err


# --- dataset and prediction files ----------------------------------------------

def _read_jsonl_with_header(path: str, kind: str, schema: int) -> list[tuple[int, dict]]:
    """Parse a header-led JSON-lines file into (line number, record) pairs."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw_lines = fh.read().splitlines()
    except OSError as err:
        raise CliError(f"cannot read {path}: {err}") from err
    rows: list[tuple[int, dict]] = []
    for lineno, line in enumerate(raw_lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as err:
            raise CliError(f"{path}:{lineno}: invalid JSON: {err.msg}") from err
        if not isinstance(record, dict):
            raise CliError(f"{path}:{lineno}: expected a JSON object")
        rows.append((lineno, record))
    if not rows:
        raise CliError(f"{path}: empty file, expected a {kind} header line")
    head_line, header = rows[0]
    if header.get("kind") != kind:
        raise CliError(f"{path}:{head_line}: expected kind {kind!r}, got {header.get('kind')!r}")
    if header.get("schema_version") != schema:
        raise CliError(
            f"{path}:{head_line}: unsupported schema_version "
            f"{header.get('schema_version')!r} (expected {schema})"
        )
    rows[0] = (head_line, header)
    return rows


def write_dataset(path, scenes: Sequence[Scene], grid_size: int) -> None:
    header = {
        "kind": "dataset",
        "schema_version": DATASET_SCHEMA_VERSION,
        "grid_size": grid_size,
    }
    lines = [json.dumps(header, sort_keys=True)]
    for scene in scenes:
        lines.append(
            json.dumps(
                {
                    "image_id": scene.image_id,
                    "gt_boxes": [b.to_list() for b in scene.gt_boxes],
                    "features": scene.features.tolist(),
                    "density_label": scene.density_label,
                },
                sort_keys=True,
            )
        )
    files.atomic_write_text(path, "\n".join(lines) + "\n")


def read_dataset(path: str) -> tuple[int, list[Scene]]:
    """(grid size, scenes); malformed lines raise with their line number."""
    rows = _read_jsonl_with_header(path, "dataset", DATASET_SCHEMA_VERSION)
    head_line, header = rows[0]
    grid_size = header.get("grid_size")
    if not isinstance(grid_size, int) or grid_size < 1:
        raise CliError(f"{path}:{head_line}: header grid_size must be a positive integer")
    scenes: list[Scene] = []
    for lineno, record in rows[1:]:
        try:
            boxes = tuple(Box.from_list(b) for b in record["gt_boxes"])
            features = np.asarray(record["features"], dtype=np.float64)
            scene = Scene(
                image_id=str(record["image_id"]),
                gt_boxes=boxes,
                features=features,
                density_label=int(record["density_label"]),
            )
        except KeyError as err:
            raise CliError(f"{path}:{lineno}: missing field {err.args[0]!r}") from err
        except (TypeError, ValueError) as err:
            raise CliError(f"{path}:{lineno}: bad scene record: {err}") from err
        if features.shape != (grid_size, grid_size, FEATURE_CHANNELS):
            raise CliError(
                f"{path}:{lineno}: features shape {features.shape} does not match "
                f"header grid_size {grid_size}"
            )
        scenes.append(scene)
    return grid_size, scenes


def write_predictions(path, dets: Sequence[Detection]) -> None:
    header = {"kind": "predictions", "schema_version": PREDICTIONS_SCHEMA_VERSION}
    lines = [json.dumps(header, sort_keys=True)]
    for d in dets:
        record: dict[str, Any] = {
            "image_id": d.image_id,
            "box": d.box.to_list(),
            "score": d.score,
        }
        if d.stage is not None:
            record["stage"] = d.stage
        lines.append(json.dumps(record, sort_keys=True))
    files.atomic_write_text(path, "\n".join(lines) + "\n")


def read_predictions(path: str) -> list[tuple[int, Detection]]:
    """(line number, detection) pairs in file order."""
    rows = _read_jsonl_with_header(path, "predictions", PREDICTIONS_SCHEMA_VERSION)
    out: list[tuple[int, Detection]] = []
    for lineno, record in rows[1:]:
        try:
            det = Detection(
                box=Box.from_list(record["box"]),
                score=float(record["score"]),
                image_id=record["image_id"],
                stage=int(record["stage"]) if "stage" in record else None,
            )
        except KeyError as err:
            raise CliError(f"{path}:{lineno}: missing field {err.args[0]!r}") from err
        except (TypeError, ValueError) as err:
            raise CliError(f"{path}:{lineno}: bad detection record: {err}") from err
        out.append((lineno, det))
    return out


def group_by_image(
    entries: Sequence[tuple[int, Detection]],
    known_ids: Sequence[str],
    path: str,
) -> dict[str, list[Detection]]:
    grouped: dict[str, list[Detection]] = {iid: [] for iid in known_ids}
    for lineno, det in entries:
        if det.image_id not in grouped:
            raise CliError(f"{path}:{lineno}: unknown image_id {det.image_id!r}")
        grouped[det.image_id].append(det)
    return grouped


# --- shared output helpers -------------------------------------------------------

def _default_out_dir(args: argparse.Namespace) -> str:
    if getattr(args, "out", None):
        return args.out
    return os.environ.get(OUT_DIR_ENV, ".")


def _ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_histograms(
    out_dir: str,
    tag: str,
    dets_per_image: Sequence[Sequence[Detection]],
    gts_per_image: Sequence[Sequence[Box]],
    iou_thresh: float,
    bins: int,
) -> list[str]:
    """Confidence and density TP/FP histogram CSVs; returns written paths."""
    conf_tp, conf_fp = tp_fp_by_confidence(dets_per_image, gts_per_image, iou_thresh, bins)
    conf_path = os.path.join(out_dir, f"hist_confidence_{tag}.csv")
    files.write_csv(
        conf_path,
        ["bin_low", "bin_high", "tp", "fp"],
        [
            [_fmt(i / bins), _fmt((i + 1) / bins), int(conf_tp[i]), int(conf_fp[i])]
            for i in range(bins)
        ],
    )
    edges = (1, 6, 11, 10**9)
    dens_tp, dens_fp = tp_fp_by_density(dets_per_image, gts_per_image, iou_thresh, edges)
    dens_path = os.path.join(out_dir, f"hist_density_{tag}.csv")
    files.write_csv(
        dens_path,
        ["gt_count_low", "gt_count_high", "tp", "fp"],
        [
            [edges[i], edges[i + 1], int(dens_tp[i]), int(dens_fp[i])]
            for i in range(len(edges) - 1)
        ],
    )
    return [conf_path, dens_path]


def _report_payload(report: MetricsReport) -> dict[str, float]:
    return report.to_dict()


# --- subcommands -------------------------------------------------------------------

def cmd_gen_data(args: argparse.Namespace) -> int:
    config = build_run_config(args)
    out = args.out or os.path.join(os.environ.get(OUT_DIR_ENV, "."), "dataset.jsonl")
    scenes = generate(config.scene_params(), config.n_scenes)
    parent = os.path.dirname(os.path.abspath(out))
    os.makedirs(parent, exist_ok=True)
    write_dataset(out, scenes, config.grid_size)
    print(f"wrote {len(scenes)} scenes to {out}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config = build_run_config(args)
    grid_size, scenes = read_dataset(args.data)
    if grid_size != config.grid_size:
        raise CliError(
            f"dataset grid_size {grid_size} does not match configured "
            f"grid_size {config.grid_size}"
        )
    val_scenes = None
    if args.val_data:
        val_grid, val_scenes = read_dataset(args.val_data)
        if val_grid != grid_size:
            raise CliError(
                f"validation grid_size {val_grid} does not match dataset {grid_size}"
            )
    out_dir = _ensure_dir(_default_out_dir(args))
    model = Model(config.model_config())
    try:
        logs = train(
            model,
            scenes,
            epochs=config.epochs,
            batch_size=config.batch_size,
            val_scenes=val_scenes,
            progress=None if args.quiet else _print_epoch,
        )
    except TrainingError as err:
        raise CliError(str(err)) from err
    model_path = os.path.join(out_dir, "model.json")
    save_model(model, model_path)
    log_path = os.path.join(out_dir, "train_log.csv")
    files.write_csv(
        log_path,
        ["epoch", "loss", "loss_encoder", "loss_decoder", "ap", "mr2", "ji"],
        [
            [
                row.epoch,
                _fmt(row.loss),
                _fmt(row.loss_encoder),
                _fmt(row.loss_decoder),
                _fmt(row.ap),
                _fmt(row.mr2),
                _fmt(row.ji),
            ]
            for row in logs
        ],
    )
    write_config_file(os.path.join(out_dir, "run_config.ini"), config)
    print(f"wrote {model_path} and {log_path}")
    return 0


def _print_epoch(row: EpochLog) -> None:
    msg = f"epoch {row.epoch}: loss {row.loss:.4f}"
    if row.ap is not None:
        msg += f" ap {row.ap:.4f} mr2 {row.mr2:.4f} ji {row.ji:.4f}"
    print(msg)


def cmd_eval(args: argparse.Namespace) -> int:
    if bool(args.model) == bool(args.predictions):
        raise CliError("pass exactly one of --model or --predictions")
    config = build_run_config(args)
    grid_size, scenes = read_dataset(args.data)
    gts_per_image = [list(s.gt_boxes) for s in scenes]
    out_dir = _ensure_dir(_default_out_dir(args))
    payload: dict[str, Any] = {
        "kind": "eval_report",
        "schema_version": REPORT_SCHEMA_VERSION,
        "iou_thresh": config.iou_thresh,
        "data": os.path.basename(args.data),
    }

    if args.model:
        model = _load_model_checked(args.model, grid_size)
        if args.stages is not None:
            try:
                model = truncate_decoder(model, args.stages)
            except ValueError as err:
                raise CliError(str(err)) from err
        per_stage_dets = _collect_stage_detections(model, scenes)
        stage_reports: dict[str, dict[str, float]] = {}
        for tag, dets in per_stage_dets.items():
            report = compute_report(dets, gts_per_image, config.iou_thresh)
            stage_reports[tag] = _report_payload(report)
            write_histograms(out_dir, tag, dets, gts_per_image, config.iou_thresh, config.bins)
        final_tag = max(
            (t for t in stage_reports if t.startswith("stage")),
            key=lambda t: int(t.removeprefix("stage")),
        )
        payload["stages"] = stage_reports
        payload["final"] = stage_reports[final_tag]
        if args.export_predictions:
            flat = [d for dets in per_stage_dets[final_tag] for d in dets]
            write_predictions(args.export_predictions, flat)
    else:
        entries = read_predictions(args.predictions)
        grouped = group_by_image(entries, [s.image_id for s in scenes], args.predictions)
        dets_per_image = [grouped[s.image_id] for s in scenes]
        report = compute_report(dets_per_image, gts_per_image, config.iou_thresh)
        payload["final"] = _report_payload(report)
        write_histograms(
            out_dir, "pred", dets_per_image, gts_per_image, config.iou_thresh, config.bins
        )

    report_path = os.path.join(out_dir, "report.json")
    files.write_json(report_path, payload)
    print(f"wrote {report_path}")
    return 0


def _load_model_checked(path: str, grid_size: int) -> Model:
    try:
        model = load_model(path)
    except OSError as err:
        raise CliError(f"cannot read model {path}: {err}") from err
    except (ValueError, KeyError) as err:
        raise CliError(f"bad model snapshot {path}: {err}") from err
    if model.config.grid_size != grid_size:
        raise CliError(
            f"model grid_size {model.config.grid_size} does not match dataset {grid_size}"
        )
    return model


def _collect_stage_detections(
    model: Model, scenes: Sequence[Scene]
) -> dict[str, list[list[Detection]]]:
    """Per-stage detections for every scene: encoder plus each decoder stage."""
    n_stages = 1 + len(model.dec_layers)
    per_stage: dict[str, list[list[Detection]]] = {
        ("encoder" if s == 0 else f"stage{s}"): [] for s in range(n_stages)
    }
    for scene in scenes:
        result = model.forward(scene.features, image_id=scene.image_id)
        for s, dets in enumerate(result.all_stage_detections()):
            tag = "encoder" if s == 0 else f"stage{s}"
            per_stage[tag].append(dets)
    return per_stage


def cmd_suppress(args: argparse.Namespace) -> int:
    if args.method not in SUPPRESS_METHODS:
        raise CliError(f"method must be one of {SUPPRESS_METHODS}")
    entries = read_predictions(args.predictions)
    order: list[str] = []
    grouped: dict[str, list[Detection]] = {}
    for _, det in entries:
        if det.image_id not in grouped:
            grouped[det.image_id] = []
            order.append(det.image_id)
        grouped[det.image_id].append(det)
    survivors: list[Detection] = []
    for iid in order:
        dets = grouped[iid]
        if args.method == "nms":
            kept = nms(dets, args.iou_thresh)
        elif args.method == "soft":
            kept = soft_nms(dets, sigma=args.sigma, score_floor=args.score_floor)
        else:
            density = max_overlap_density([d.box for d in dets])
            kept = adaptive_nms(dets, args.iou_thresh, density)
        survivors.extend(kept)
    out = args.out or os.path.join(os.environ.get(OUT_DIR_ENV, "."), "suppressed.jsonl")
    write_predictions(out, survivors)
    print(f"kept {len(survivors)} of {len(entries)} detections -> {out}")
    return 0


def run_ablation(
    base: RunConfig,
    dcg_values: Sequence[bool],
    gate_values: Sequence[str],
    gqs_values: Sequence[bool],
    aligned_values: Sequence[bool],
    splits: Sequence[tuple[int, int]],
    query_counts: Sequence[int],
    seeds: Sequence[int],
    n_train: int,
    n_val: int,
    progress: Callable[[str], None] | None = None,
    collect: Callable[[RunConfig, int, Model, list[Scene], MetricsReport], None]
    | None = None,
) -> tuple[list[str], list[list[Any]]]:
    """Train and evaluate every switch combination; returns CSV header and rows.

    All variants at one seed share the same generated train and
    validation scenes, so rows differing only by a switch are paired
    comparisons. Each combination also gets a mean row over seeds.
    ``collect`` receives every trained model before it is discarded.
    """
    header = [
        "dcg",
        "gate_direction",
        "gqs",
        "aligned",
        "decoder_before",
        "decoder_after",
        "queries",
        "seed",
        "ap",
        "mr2",
        "ji",
        "params",
    ]
    rows: list[list[Any]] = []
    combos = []
    for dcg, gqs, aligned, split, k in itertools.product(
        dcg_values, gqs_values, aligned_values, splits, query_counts
    ):
        gates = gate_values if dcg else ["-"]
        for gate in gates:
            combos.append((dcg, gate, gqs, aligned, split, k))

    data_cache: dict[int, tuple[list[Scene], list[Scene]]] = {}

    def data_for(seed: int) -> tuple[list[Scene], list[Scene]]:
        if seed not in data_cache:
            train_scenes = generate(
                replace(base.scene_params(), seed=1000 + seed), n_train
            )
            val_scenes = generate(replace(base.scene_params(), seed=2000 + seed), n_val)
            data_cache[seed] = (train_scenes, val_scenes)
        return data_cache[seed]

    for dcg, gate, gqs, aligned, (before, after), k in combos:
        per_seed: list[tuple[float, float, float]] = []
        params_total = 0
        for seed in seeds:
            overrides = dict(
                dcg_enabled=dcg,
                encoder_cls="giou_aware" if gqs else "bce",
                aligned=aligned,
                decoder_before=before,
                decoder_after=after,
                queries=k,
                seed=seed,
            )
            if gate != "-":
                overrides["gate_direction"] = gate
            run_cfg = replace(base, **overrides)
            if progress is not None:
                progress(
                    f"dcg={'on' if dcg else 'off'} gate={gate} "
                    f"gqs={'on' if gqs else 'off'} aligned={'on' if aligned else 'off'} "
                    f"split={before}:{after} queries={k} seed={seed}"
                )
            model = Model(run_cfg.model_config())
            train_scenes, val_scenes = data_for(seed)
            train(model, train_scenes, epochs=base.epochs, batch_size=base.batch_size)
            report = evaluate_model(model, val_scenes, base.iou_thresh)
            if collect is not None:
                collect(run_cfg, seed, model, val_scenes, report)
            params_total = param_count(model)["total"]
            per_seed.append((report.ap, report.mr2, report.ji))
            rows.append(
                [
                    "on" if dcg else "off",
                    gate,
                    "on" if gqs else "off",
                    "on" if aligned else "off",
                    before,
                    after,
                    k,
                    seed,
                    _fmt(report.ap),
                    _fmt(report.mr2),
                    _fmt(report.ji),
                    params_total,
                ]
            )
        mean = [sum(vals) / len(vals) for vals in zip(*per_seed)]
        rows.append(
            [
                "on" if dcg else "off",
                gate,
                "on" if gqs else "off",
                "on" if aligned else "off",
                before,
                after,
                k,
                "mean",
                _fmt(mean[0]),
                _fmt(mean[1]),
                _fmt(mean[2]),
                params_total,
            ]
        )
    return header, rows


def _parse_switch(raw: str, name: str) -> list[bool]:
    mapping = {"on": [True], "off": [False], "both": [False, True]}
    if raw not in mapping:
        raise CliError(f"--{name} must be on, off, or both (got {raw!r})")
    return mapping[raw]


def _parse_splits(raw: str) -> list[tuple[int, int]]:
    out = []
    for part in raw.split(","):
        try:
            before, after = part.split(":")
            out.append((int(before), int(after)))
        except ValueError as err:
            raise CliError(
                f"bad --splits entry {part!r}, expected before:after"
            ) from err
    return out


def cmd_ablate(args: argparse.Namespace) -> int:
    config = build_run_config(args, skip=("aligned",))
    if args.gate not in ("below", "above", "both"):
        raise CliError(f"--gate must be below, above, or both (got {args.gate!r})")
    gate_values = ["below", "above"] if args.gate == "both" else [args.gate]
    splits = (
        _parse_splits(args.splits)
        if args.splits
        else [(config.decoder_before, config.decoder_after)]
    )
    query_counts = (
        [int(part) for part in args.query_counts.split(",")]
        if args.query_counts
        else [config.queries]
    )
    try:
        seeds = [int(part) for part in args.seeds.split(",")]
    except ValueError as err:
        raise CliError(f"bad --seeds {args.seeds!r}: {err}") from err
    header, rows = run_ablation(
        config,
        dcg_values=_parse_switch(args.dcg, "dcg"),
        gate_values=gate_values,
        gqs_values=_parse_switch(args.gqs, "gqs"),
        aligned_values=_parse_switch(args.aligned, "aligned"),
        splits=splits,
        query_counts=query_counts,
        seeds=seeds,
        n_train=args.n_train,
        n_val=args.n_val,
        progress=None if args.quiet else lambda msg: print(f"[ablate] {msg}"),
    )
    out = args.out or os.path.join(os.environ.get(OUT_DIR_ENV, "."), "ablation.csv")
    parent = os.path.dirname(os.path.abspath(out))
    os.makedirs(parent, exist_ok=True)
    files.write_csv(out, header, rows)
    print(f"wrote {out}")
    return 0


def cmd_diagnose(args: argparse.Namespace) -> int:
    config = build_run_config(args)
    grid_size, scenes = read_dataset(args.data)
    model = _load_model_checked(args.model, grid_size)
    out_dir = _ensure_dir(_default_out_dir(args))

    scatter_rows: list[list[Any]] = []
    pooled: dict[str, list[tuple[float, float]]] = {"before": [], "after": []}
    per_stage_dets = _collect_stage_detections(model, scenes)
    gts_per_image = [list(s.gt_boxes) for s in scenes]
    split = model.config.decoder_before
    for scene in scenes:
        result = model.forward(scene.features, image_id=scene.image_id)
        if result.dcg_input is None:
            continue
        refs = result.stage_refs[split]
        confs = result.stage_confs[split]
        boxes = [Box.from_list(r.tolist()) for r in refs]
        for phase, contents in (("before", result.dcg_input), ("after", result.dcg_output)):
            points, _ = homogeneity_scatter(
                contents, boxes, confs, positive_floor=args.positive_floor
            )
            pooled[phase].extend(points)
            for dist, cos in points:
                scatter_rows.append([phase, scene.image_id, _fmt(dist), _fmt(cos)])
    files.write_csv(
        os.path.join(out_dir, "homogeneity.csv"),
        ["phase", "image_id", "iou_distance", "cosine"],
        scatter_rows,
    )

    def pooled_corr(points: list[tuple[float, float]]) -> float | None:
        if len(points) < 2:
            return None
        return pearson([1.0 - d for d, _ in points], [c for _, c in points])

    score_iou = {
        tag: pooled_score_iou(dets, gts_per_image)
        for tag, dets in per_stage_dets.items()
    }

    trace_rows: list[list[Any]] = []
    for mode, differentiated in (("tied", False), ("differentiated", True)):
        trace = equilibrium_sim(
            args.equilibrium_init, differentiated, lr=args.equilibrium_lr,
            steps=args.equilibrium_steps,
        )
        for step, (p1, p2, g1, g2) in enumerate(trace.steps):
            trace_rows.append([mode, step, _fmt(p1), _fmt(p2), _fmt(g1), _fmt(g2)])
    files.write_csv(
        os.path.join(out_dir, "equilibrium.csv"),
        ["mode", "step", "p1", "p2", "grad_p1", "grad_p2"],
        trace_rows,
    )

    summary = {
        "kind": "diagnose_summary",
        "schema_version": REPORT_SCHEMA_VERSION,
        "homogeneity_correlation": {
            "before": pooled_corr(pooled["before"]),
            "after": pooled_corr(pooled["after"]),
            "points_per_phase": len(pooled["before"]),
        },
        "score_iou_correlation": score_iou,
        "positive_floor": args.positive_floor,
    }
    summary_path = os.path.join(out_dir, "diagnose_summary.json")
    files.write_json(summary_path, summary)
    print(f"wrote {summary_path}")
    return 0


# --- argument parsing ----------------------------------------------------------

def _add_config_flags(
    parser: argparse.ArgumentParser, exclude: tuple[str, ...] = ()
) -> None:
    parser.add_argument("--config", help="key = value config file (INI sections)")
    group = parser.add_argument_group("config overrides (same names as config keys)")
    for key in _FIELD_TYPES:
        if key in exclude:
            continue
        group.add_argument(
            f"--{key.replace('_', '-')}",
            dest=key,
            default=None,
            metavar="V",
            help=argparse.SUPPRESS,
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dehomodet",
        description="Toy crowded-scene detection lab: data, training, "
        "evaluation, ablations, suppression, diagnostics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset file")
    _add_config_flags(p)
    p.add_argument("--out", help="output dataset path (.jsonl)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a dataset")
    _add_config_flags(p)
    p.add_argument("--data", required=True, help="training dataset (.jsonl)")
    p.add_argument("--val-data", help="validation dataset for per-epoch metrics")
    p.add_argument("--out", help="output directory")
    p.add_argument("--quiet", action="store_true", help="suppress per-epoch lines")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model or a predictions file")
    _add_config_flags(p)
    p.add_argument("--model", help="model snapshot (model.json)")
    p.add_argument("--predictions", help="predictions file (.jsonl)")
    p.add_argument("--data", required=True, help="dataset with ground truth (.jsonl)")
    p.add_argument(
        "--stages",
        type=int,
        help="keep only this many post-split decoder stages (model eval)",
    )
    p.add_argument("--export-predictions", help="also write final-stage predictions here")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and evaluate a switch grid")
    # the grid switches supersede the single-value config flag for this key
    _add_config_flags(p, exclude=("aligned",))
    p.add_argument("--dcg", default="both", help="on, off, or both")
    p.add_argument("--gate", default="both", help="below, above, or both")
    p.add_argument("--gqs", default="on", help="on, off, or both")
    p.add_argument("--aligned", default="on", help="on, off, or both")
    p.add_argument("--splits", help="comma list of before:after decoder splits")
    p.add_argument("--query-counts", dest="query_counts", help="comma list of query counts")
    p.add_argument("--seeds", default="0,1,2", help="comma list of seeds")
    p.add_argument("--n-train", type=int, default=200, help="training scenes per seed")
    p.add_argument("--n-val", type=int, default=100, help="validation scenes per seed")
    p.add_argument("--out", help="output CSV path")
    p.add_argument("--quiet", action="store_true", help="suppress progress lines")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("suppress", help="filter a predictions file")
    p.add_argument("--predictions", required=True, help="input predictions (.jsonl)")
    p.add_argument("--method", required=True, help="nms, soft, or adaptive")
    p.add_argument("--iou-thresh", type=float, default=0.5, help="base IoU threshold")
    p.add_argument("--sigma", type=float, default=0.5, help="soft-NMS decay width")
    p.add_argument("--score-floor", type=float, default=1e-3, help="soft-NMS drop floor")
    p.add_argument("--out", help="output predictions path")
    p.set_defaults(func=cmd_suppress)

    p = sub.add_parser("diagnose", help="homogeneity, correlation, equilibrium traces")
    _add_config_flags(p)
    p.add_argument("--model", required=True, help="model snapshot (model.json)")
    p.add_argument("--data", required=True, help="dataset (.jsonl)")
    p.add_argument("--positive-floor", type=float, default=0.5, help="confidence floor")
    p.add_argument("--equilibrium-init", type=float, default=0.3)
    p.add_argument("--equilibrium-lr", type=float, default=0.1)
    p.add_argument("--equilibrium-steps", type=int, default=500)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_diagnose)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
