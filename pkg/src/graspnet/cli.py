"""Command-line interface: train, eval, predict, corrupt, synth.

Datasets follow the root/split/{rgb,mask,grasps} layout described in
:mod:`graspnet.data.samples`. ``synth`` writes one split directory that
can be used directly as a train or test split.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from graspnet.data import (
    SyntheticSceneConfig,
    add_gaussian_noise,
    add_salt_pepper,
    blur,
    derive_seed,
    generate_synthetic_dataset,
    load_dataset,
    save_sample,
)
from graspnet.evaluation import dump_predictions, evaluate, render_overlay
from graspnet.training import TrainConfig, load_checkpoint, parse_config_file, train

__all__ = ["main", "build_parser"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graspnet",
                                     description="Grasp detection from RGB images")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model on a dataset root")
    p_train.add_argument("--config", type=Path, default=None,
                         help="flat key=value config file (all keys optional)")
    p_train.add_argument("--data", type=Path, required=True, help="dataset root")
    p_train.add_argument("--split", default="train")
    p_train.add_argument("--out", type=Path, required=True, help="checkpoint directory")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--ckpt", type=Path, required=True)
    p_eval.add_argument("--data", type=Path, required=True)
    p_eval.add_argument("--split", default="test")
    p_eval.add_argument("--report", type=Path, required=True, help="output JSON path")
    p_eval.add_argument("--dump", type=Path, default=None,
                        help="optional per-candidate prediction dump")

    p_pred = sub.add_parser("predict", help="run one image through a checkpoint")
    p_pred.add_argument("--ckpt", type=Path, required=True)
    p_pred.add_argument("--image", type=Path, required=True)
    p_pred.add_argument("--overlay", type=Path, required=True, help="output PNG path")
    p_pred.add_argument("--dump", type=Path, default=None)

    p_cor = sub.add_parser("corrupt", help="corrupt the rgb images of a split")
    p_cor.add_argument("--in", dest="src", type=Path, required=True,
                       help="split directory (or plain directory of PNGs)")
    p_cor.add_argument("--out", type=Path, required=True)
    p_cor.add_argument("--mode", choices=("gaussian", "sp", "blur"), required=True)
    p_cor.add_argument("--level", type=float, required=True,
                       help="sigma for gaussian/blur, density for sp")
    p_cor.add_argument("--seed", type=int, default=0)

    p_synth = sub.add_parser("synth", help="generate a synthetic split")
    p_synth.add_argument("--out", type=Path, required=True, help="split directory to create")
    p_synth.add_argument("--count", type=int, required=True)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--size", type=int, default=128, help="square image size")
    p_synth.add_argument("--support-prob", type=float, default=0.25)
    return parser


def _cmd_train(args) -> int:
    config = parse_config_file(args.config) if args.config else TrainConfig()
    dataset = load_dataset(args.data, args.split)
    if not dataset:
        print(f"no samples under {args.data}/{args.split}", file=sys.stderr)
        return 1
    result = train(config, dataset, out_dir=args.out, log=print)
    print(f"final loss {result.loss_curve[-1]:.4f}; checkpoint {result.checkpoint_path}")
    return 0


def _cmd_eval(args) -> int:
    model, _ = load_checkpoint(args.ckpt)
    dataset = load_dataset(args.data, args.split)
    if not dataset:
        print(f"no samples under {args.data}/{args.split}", file=sys.stderr)
        return 1
    report = evaluate(model, dataset)
    report.to_json(args.report)
    if args.dump:
        records = []
        for entry in report.per_image:
            for cx, cy, w, h, theta, score, _ in entry["candidates"]:
                from graspnet.geometry import GraspCandidate

                records.append((entry["name"] or str(entry["index"]),
                                GraspCandidate(cx, cy, w, h, theta), score))
        dump_predictions(records, args.dump)
    print(f"grasp_accuracy {report.grasp_accuracy:.4f}  seg_iou {report.seg_iou:.4f}  "
          f"images_per_sec {report.images_per_sec:.2f}")
    return 0


def _cmd_predict(args) -> int:
    model, _ = load_checkpoint(args.ckpt)
    image = np.asarray(Image.open(args.image).convert("RGB"))
    pred = model.predict(image)
    render_overlay(image, [g for g, _ in pred.candidates], None, args.overlay)
    if args.dump:
        dump_predictions(
            [(args.image.stem, g, s) for g, s in pred.candidates], args.dump
        )
    print(f"{len(pred.candidates)} candidates -> {args.overlay}")
    return 0


def _corrupt_one(image: np.ndarray, mode: str, level: float, seed: int) -> np.ndarray:
    if mode == "gaussian":
        return add_gaussian_noise(image, level, seed)
    if mode == "sp":
        return add_salt_pepper(image, level, seed)
    return blur(image, level)


def _cmd_corrupt(args) -> int:
    rgb_dir = args.src / "rgb" if (args.src / "rgb").is_dir() else args.src
    out_rgb = args.out / "rgb" if (args.src / "rgb").is_dir() else args.out
    out_rgb.mkdir(parents=True, exist_ok=True)
    names = sorted(rgb_dir.glob("*.png"))
    if not names:
        print(f"no PNG images under {rgb_dir}", file=sys.stderr)
        return 1
    for png in names:
        image = np.asarray(Image.open(png).convert("RGB"))
        out = _corrupt_one(image, args.mode, args.level, derive_seed(args.seed, png.stem))
        Image.fromarray(out).save(out_rgb / png.name)
    # annotations carry over unchanged
    for sub in ("mask", "grasps"):
        src_sub = args.src / sub
        if src_sub.is_dir():
            dst = args.out / sub
            dst.mkdir(parents=True, exist_ok=True)
            for f in src_sub.iterdir():
                (dst / f.name).write_bytes(f.read_bytes())
    print(f"corrupted {len(names)} images -> {out_rgb}")
    return 0


def _cmd_synth(args) -> int:
    cfg = SyntheticSceneConfig(
        image_size=(args.size, args.size), support_prob=args.support_prob
    )
    samples = generate_synthetic_dataset(cfg, args.count, base_seed=args.seed)
    for sample in samples:
        save_sample(sample, args.out)
    print(f"wrote {len(samples)} scenes -> {args.out}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "train": _cmd_train,
        "eval": _cmd_eval,
        "predict": _cmd_predict,
        "corrupt": _cmd_corrupt,
        "synth": _cmd_synth,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
