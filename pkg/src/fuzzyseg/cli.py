"""Command line entry points.

    fuzzyseg train   --config run.cfg --out runs/a
    fuzzyseg ablate  --config run.cfg --seeds 0,1,2 --out runs/ablate
    fuzzyseg eval    --checkpoint runs/a/student.ckpt --out runs/a/eval
    fuzzyseg verify
    fuzzyseg report  --run runs/a

Output directories come from --out, or the FUZZYSEG_OUT environment
variable when --out is omitted. Exit codes: 0 success, 2 bad config,
3 numerical failure during training, 4 verification failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .data import default_palette, generate_scene, image_to_ppm, labels_to_ppm
from .harness import (
    ConfigError,
    NumericsError,
    TrainConfig,
    _seed_from,
    config_to_text,
    parse_config_text,
    run_ablation,
    run_training,
)
from .metrics import ConfusionMatrix, iou_per_class, mean_iou
from .model import forward, load_checkpoint
from .report import write_report
from .tensorkit import softmax
from .verify import run_all


def _resolve_out(args: argparse.Namespace, default: str) -> Path:
    if args.out is not None:
        return Path(args.out)
    env = os.environ.get("FUZZYSEG_OUT")
    if env:
        return Path(env) / default
    return Path(default)


def _load_config(path: str | None, overrides: list[str]) -> TrainConfig:
    if path is not None:
        config = parse_config_text(Path(path).read_text())
    else:
        config = TrainConfig()
    if overrides:
        base = config_to_text(config)
        lines = [ln for ln in base.splitlines() if ln.strip()]
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not key=value")
            key = item.split("=", 1)[0].strip()
            lines = [ln for ln in lines if ln.split("=", 1)[0].strip() != key]
            lines.append(item)
        config = parse_config_text("\n".join(lines))
    return config


def _cmd_train(args: argparse.Namespace) -> int:
    config = _load_config(args.config, args.set or [])
    out = _resolve_out(args, "run")
    result = run_training(config, out)
    print(f"done: {result.iterations} iterations, "
          f"final student mIoU {result.final_student.miou:.4f}, "
          f"teacher mIoU {result.final_teacher.miou:.4f}")
    print(f"outputs in {out}")
    return 0


def _cmd_ablate(args: argparse.Namespace) -> int:
    config = _load_config(args.config, args.set or [])
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    if not seeds:
        raise ConfigError("--seeds must list at least one integer")
    out = _resolve_out(args, "ablation")
    result = run_ablation(config, seeds, out)
    print((out / "ablation_table.txt").read_text(), end="")
    print(f"outputs in {out}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    params, _, manifest = load_checkpoint(args.checkpoint)
    stored = {k: v for k, v in manifest.items() if k not in ("step", "role")}
    config = parse_config_text(
        "\n".join(f"{k} = {v}" for k, v in stored.items()))
    net_cfg = config.net_config()
    scene_cfg = config.scene_config()
    out = _resolve_out(args, "eval")
    out.mkdir(parents=True, exist_ok=True)

    cm = ConfusionMatrix(config.n_classes)
    palette = default_palette(config.n_classes)
    dtype = config.np_dtype()
    for i in range(config.n_eval):
        # same derivation as the training harness: identical eval split
        scene = generate_scene(scene_cfg, _seed_from(config.seed, 1, i))
        image = scene.image.transpose(2, 0, 1)[None].astype(dtype)
        logits, _ = forward(params, image, net_cfg)
        probs = softmax(logits, axis=1).data[0]
        pred = probs.argmax(axis=0)
        cm.update(scene.labels, pred)
        if args.dump_predictions:
            (out / f"eval{i:03d}.pred.ppm").write_bytes(labels_to_ppm(pred, palette))
            (out / f"eval{i:03d}.truth.ppm").write_bytes(
                labels_to_ppm(scene.labels, palette))
            (out / f"eval{i:03d}.image.ppm").write_bytes(image_to_ppm(scene.image))

    iou, present = iou_per_class(cm)
    lines = [f"mean_iou = {mean_iou(cm):.6f}",
             f"pixel_accuracy = {cm.counts.trace() / cm.counts.sum():.6f}"]
    for c in range(config.n_classes):
        value = f"{iou[c]:.6f}" if present[c] else "absent"
        lines.append(f"iou_class_{c} = {value}")
    text = "\n".join(lines) + "\n"
    (out / "metrics.txt").write_text(text)
    print(text, end="")
    return 0


def _cmd_verify(args: argparse.Namespace) -> int:
    return 0 if run_all(verbose=True) else 4


def _cmd_report(args: argparse.Namespace) -> int:
    write_report(Path(args.run))
    print(f"report written to {Path(args.run) / 'report'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fuzzyseg",
        description="semi-supervised segmentation on synthetic scenes")
    parser.add_argument("--verbose", action="store_true",
                        help="debug-level logging")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run one training configuration")
    train.add_argument("--config", help="flat key = value config file")
    train.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
    train.add_argument("--out", help="output directory")
    train.set_defaults(fn=_cmd_train)

    ablate = sub.add_parser("ablate", help="run the ablation grid")
    ablate.add_argument("--config", help="base config file")
    ablate.add_argument("--set", action="append", metavar="KEY=VALUE")
    ablate.add_argument("--seeds", default="0,1,2",
                        help="comma separated seeds (default 0,1,2)")
    ablate.add_argument("--out", help="output directory")
    ablate.set_defaults(fn=_cmd_ablate)

    evalp = sub.add_parser("eval", help="evaluate a checkpoint")
    evalp.add_argument("--checkpoint", required=True)
    evalp.add_argument("--dump-predictions", action="store_true",
                       help="write prediction images next to the metrics")
    evalp.add_argument("--out", help="output directory")
    evalp.set_defaults(fn=_cmd_eval)

    verify = sub.add_parser("verify", help="run the invariant checks")
    verify.set_defaults(fn=_cmd_verify)

    report = sub.add_parser("report", help="summarize a finished run")
    report.add_argument("--run", required=True, help="training output directory")
    report.set_defaults(fn=_cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericsError as exc:
        print(f"numerics error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
