"""Command line: gen-data, train, render, eval, ablate."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .checkpoint import Checkpoint
from .config import ABLATIONS, TrainConfig, load_config, save_config
from .evaluate import evaluate
from .io import load_dataset, save_dataset, save_png
from .protocol import simulate_occlusion
from .synthetic import generate_synthetic_dataset, with_frames
from .train import train


def occluded_synthetic(seed: int, frames: int, resolution: int, occlusion: float, frame_fraction: float):
    ds = generate_synthetic_dataset(seed, frames, resolution)
    occ, _ = simulate_occlusion(ds.train, occlusion, frame_fraction)
    return with_frames(ds, occ)


def _dataset(args, cfg: TrainConfig):
    if args.dataset:
        return load_dataset(args.dataset)
    return occluded_synthetic(cfg.seed, args.frames, args.resolution, args.occlusion, args.occluded_frames)


def _config(args) -> TrainConfig:
    cfg = load_config(args.config) if args.config else TrainConfig()
    if getattr(args, "iterations", None) is not None:
        cfg.iterations = args.iterations
    return cfg


def _report(rep, path) -> None:
    for k, m in zip(rep.keys, rep.per_frame):
        print(f"{k}  psnr {m.psnr:7.3f}  ssim {m.ssim:.4f}")
    print(f"mean  psnr {rep.mean.psnr:7.3f}  ssim {rep.mean.ssim:.4f}")
    if path:
        rep.write_csv(path)


def cmd_gen_data(args) -> None:
    ds = occluded_synthetic(args.seed, args.frames, args.resolution, args.occlusion, args.occluded_frames)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds.train)} training and {len(ds.test)} test frames to {args.out}")


def cmd_train(args) -> None:
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.txt")
    ds = _dataset(args, cfg)
    res = train(cfg, ds, out)
    print(f"trained {cfg.iterations} iterations, {len(res.model)} gaussians -> {out / 'checkpoint.ocgs'}")
    if ds.test:
        _report(evaluate(res.checkpoint, ds.test), out / "eval.csv")


def cmd_render(args) -> None:
    ckpt = Checkpoint.load(args.checkpoint)
    color, _ = ckpt.render_view(args.view)
    save_png(args.out, color)
    print(f"view {ckpt.views[args.view].key} -> {args.out}")


def cmd_eval(args) -> None:
    ckpt = Checkpoint.load(args.checkpoint)
    ds = load_dataset(args.dataset)
    _report(evaluate(ckpt, ds.test), args.report)


def cmd_ablate(args) -> None:
    cfg = _config(args)
    for name in args.disable:
        cfg = cfg.with_ablation(name)
    ds = _dataset(args, cfg)
    out = Path(args.out) if args.out else None
    res = train(cfg, ds, out)
    print(f"ablation without {', '.join(args.disable)}")
    _report(evaluate(res.checkpoint, ds.test), out / "eval.csv" if out else None)


def _data_args(p) -> None:
    p.add_argument("--dataset", help="dataset directory (default: generate the synthetic scene)")
    p.add_argument("--frames", type=int, default=30)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--occlusion", type=float, default=0.5, help="fraction of valid pixels to cover")
    p.add_argument("--occluded-frames", type=float, default=0.8, help="fraction of frames carrying the occluder")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="occgs", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render the synthetic dataset to a directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=30)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--occlusion", type=float, default=0.5)
    p.add_argument("--occluded-frames", type=float, default=0.8)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train and write checkpoint, loss and densify logs")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--iterations", type=int)
    _data_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render", help="render one cached view of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--view", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="PSNR / SSIM on a dataset's test frames")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train with components switched off and evaluate")
    p.add_argument("--disable", action="append", choices=ABLATIONS, required=True)
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--iterations", type=int)
    _data_args(p)
    p.set_defaults(func=cmd_ablate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
