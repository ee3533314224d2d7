"""Train the toy query detector end to end on synthetic scenes.

Generates a small crowd dataset, trains for a few epochs, prints the
loss trace and validation metrics, and shows how detection quality
moves across the decoder stages. Defaults are sized for a coffee-break
run; raise --epochs and --train-scenes for a real fit.

Run:
    python demos/train_toy_detector.py
    python demos/train_toy_detector.py --epochs 60 --train-scenes 100 --dcg
"""

from __future__ import annotations

import argparse
from dataclasses import replace

from dehomodet.cli import _collect_stage_detections
from dehomodet.metrics import compute_report
from dehomodet.model import Model, ModelConfig, param_count, train
from dehomodet.scenes import SceneGenParams, generate


def parse_args() -> argparse.Namespace:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--train-scenes", type=int, default=40)
    ap.add_argument("--val-scenes", type=int, default=20)
    ap.add_argument("--mean-objects", type=float, default=6.0)
    ap.add_argument("--dcg", action="store_true", help="enable the composition module")
    ap.add_argument("--seed", type=int, default=0)
    return ap.parse_args()


def main() -> None:
    args = parse_args()
    scene_params = SceneGenParams(
        mean_objects=args.mean_objects,
        cluster_count=2,
        cluster_spread=0.1,
        size_range=(0.08, 0.2),
        grid_size=8,
        seed=1000 + args.seed,
    )
    train_scenes = generate(scene_params, args.train_scenes)
    val_scenes = generate(replace(scene_params, seed=2000 + args.seed), args.val_scenes)

    config = ModelConfig(
        grid_size=8,
        hidden=16,
        encoder_layers=1,
        decoder_before=1,
        decoder_after=2,
        queries=16,
        dcg_enabled=args.dcg,
        lr=5e-3,
        seed=args.seed,
    )
    model = Model(config)
    counts = param_count(model)
    print(f"parameters: {counts['total']} total, dcg {counts['dcg']}")

    logs = train(
        model,
        train_scenes,
        epochs=args.epochs,
        batch_size=8,
        val_scenes=val_scenes,
    )
    step = max(1, len(logs) // 8)
    for log in logs[::step] + ([logs[-1]] if (len(logs) - 1) % step else []):
        print(
            f"epoch {log.epoch:3d}  loss {log.loss:8.4f}"
            f"  enc {log.loss_encoder:8.4f}  dec {log.loss_decoder:8.4f}"
            f"  val AP {log.ap:.3f} JI {log.ji:.3f}"
        )

    print("\nper-stage validation metrics:")
    staged = _collect_stage_detections(model, val_scenes)
    gts = [s.gt_boxes for s in val_scenes]
    for tag, dets in staged.items():
        r = compute_report(dets, gts)
        print(f"  {tag:8s} AP {r.ap:.4f}  MR2 {r.mr2:.4f}  JI {r.ji:.4f}")


if __name__ == "__main__":
    main()
