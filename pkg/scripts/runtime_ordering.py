"""Time the flow phase of both estimators on textured translations at a
given resolution (serial, warm-up excluded) and print the medians."""

import argparse
import statistics
import time

from fastrife.pipeline import PipelineConfig, bidirectional_flow
from fastrife.synthetic import translation_triplet


def time_flow(method, frames, runs):
    cfg = PipelineConfig(method)
    bidirectional_flow(frames[0], frames[1], cfg)  # warm-up
    samples = []
    for _ in range(runs):
        start = time.perf_counter()
        bidirectional_flow(frames[0], frames[1], cfg)
        samples.append(1e3 * (time.perf_counter() - start))
    return samples


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--width", type=int, default=448)
    ap.add_argument("--height", type=int, default=256)
    ap.add_argument("--runs", type=int, default=9)
    args = ap.parse_args()

    tri = translation_triplet(args.width, args.height, 4, -2, seed=0)
    frames = (tri.frame0, tri.frame1)
    for method in ("gf", "lk"):
        s = time_flow(method, frames, args.runs)
        print(f"{method}: median {statistics.median(s):7.2f} ms  "
              f"min {min(s):7.2f}  max {max(s):7.2f}  ({args.runs} runs, both directions)")


if __name__ == "__main__":
    main()
