"""Score the GF pipeline, the LK pipeline and the overlay baseline on the
synthetic motion suite and print one table per method."""

import argparse
import logging

from fastrife.bench import run_benchmark
from fastrife.pipeline import PipelineConfig
from fastrife.synthetic import motion_suite


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--width", type=int, default=96)
    ap.add_argument("--height", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--csv-prefix", help="write <prefix>_<method>.csv reports")
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    suite = motion_suite(args.width, args.height, args.seed)
    runs = {
        "gf": dict(config=PipelineConfig("gf")),
        "lk": dict(config=PipelineConfig("lk")),
        "overlay": dict(baseline="overlay"),
    }
    for name, kw in runs.items():
        report = run_benchmark(suite, repeat=args.repeat, **kw)
        print(f"\n== {name}")
        print(report.table())
        if args.csv_prefix:
            report.write_csv(f"{args.csv_prefix}_{name}.csv")


if __name__ == "__main__":
    main()
