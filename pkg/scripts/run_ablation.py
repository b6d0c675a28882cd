"""Train the full model and each ablation on the synthetic scene, then compare held-out PSNR.

    python3 scripts/run_ablation.py --iterations 2000 --out runs/ablation
"""

import argparse
import logging
import time
from pathlib import Path

from occgs.pipeline import (
    ABLATIONS,
    TrainConfig,
    evaluate,
    generate_synthetic_dataset,
    simulate_occlusion,
    train,
    with_frames,
)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--iterations", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path)
    ap.add_argument("--only", nargs="*", choices=("full",) + ABLATIONS, help="subset of runs")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    ds = generate_synthetic_dataset(args.seed)
    frames, _ = simulate_occlusion(ds.train)
    ds = with_frames(ds, frames)
    base = TrainConfig(iterations=args.iterations, seed=args.seed)
    runs = {"full": base} | {name: base.with_ablation(name) for name in ABLATIONS}
    if args.only:
        runs = {k: v for k, v in runs.items() if k in args.only}

    rows = []
    for name, cfg in runs.items():
        t0 = time.perf_counter()
        out = args.out / name if args.out else None
        res = train(cfg, ds, out)
        rep = evaluate(res.checkpoint, ds.test)
        rows.append((name, rep.mean.psnr, rep.mean.ssim, len(res.model), time.perf_counter() - t0))
        logging.info("%s done: psnr %.2f", name, rep.mean.psnr)

    print(f"{'run':12s} {'psnr':>7s} {'ssim':>7s} {'points':>7s} {'seconds':>8s}")
    for name, p, s, n, dt in rows:
        print(f"{name:12s} {p:7.2f} {s:7.4f} {n:7d} {dt:8.1f}")


if __name__ == "__main__":
    main()
