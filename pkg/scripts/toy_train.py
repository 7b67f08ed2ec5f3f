"""Overfit the learned fusion stage on five moving-square triplets, then
compare its PSNR with plain blending on the same set."""

import argparse
import logging

import numpy as np

from fastrife.fusion import FusionConfig
from fastrife.metrics import psnr
from fastrife.nn import save_weights
from fastrife.pipeline import PipelineConfig, interpolate
from fastrife.synthetic import moving_square_triplet
from fastrife.train import TrainParams, train_fusion, write_history_csv

MOTIONS = [(8, 4), (-6, 2), (4, -6), (6, 6), (-4, -8)]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--base-channels", type=int, default=8)
    ap.add_argument("--resblocks", type=int, default=1)
    ap.add_argument("--out", help="checkpoint path; the loss history goes next to it")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    data = [moving_square_triplet(48, 48, 14, (8 + 3 * i, 10 + 2 * i), v, seed=i)
            for i, v in enumerate(MOTIONS)]
    cfg = FusionConfig("learned", args.base_channels, args.resblocks)
    weights, hist = train_fusion(data, cfg, TrainParams(steps=args.steps, lr=args.lr, seed=args.seed))
    print(f"l_rec {hist[0].l_rec:.4f} -> {hist[-1].l_rec:.4f}")

    learned = PipelineConfig("gf", fusion=cfg)
    blend = PipelineConfig("gf")
    p_learned = np.mean([psnr(interpolate(t.frame0, t.frame1, 0.5, learned, weights), t.gt) for t in data])
    p_blend = np.mean([psnr(interpolate(t.frame0, t.frame1, 0.5, blend), t.gt) for t in data])
    print(f"mean PSNR learned {p_learned:.2f} dB, blend {p_blend:.2f} dB")
    if args.out:
        save_weights(weights, args.out)
        write_history_csv(args.out.rsplit(".", 1)[0] + "_loss.csv", hist)


if __name__ == "__main__":
    main()
