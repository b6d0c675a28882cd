"""Held-out PSNR of the full model as the neighbour count K varies."""

import argparse

from occgs.pipeline import TrainConfig, evaluate, generate_synthetic_dataset, simulate_occlusion, train, with_frames


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--iterations", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--k", type=int, nargs="+", default=[1, 3, 5, 8, 10])
    args = ap.parse_args()

    ds = generate_synthetic_dataset(args.seed)
    frames, _ = simulate_occlusion(ds.train)
    ds = with_frames(ds, frames)
    print(f"{'K':>3s} {'psnr':>7s} {'ssim':>7s}")
    for k in args.k:
        res = train(TrainConfig(iterations=args.iterations, seed=args.seed, k=k), ds)
        rep = evaluate(res.checkpoint, ds.test)
        print(f"{k:3d} {rep.mean.psnr:7.2f} {rep.mean.ssim:7.4f}", flush=True)


if __name__ == "__main__":
    main()
