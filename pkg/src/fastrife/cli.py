"""``fastrife`` command line: interpolate, sequence, flow, benchmark, train.

Exit codes: 0 success, 1 usage or configuration error, 2 data error
(unreadable or inconsistent inputs), 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

from . import config as cfgmod
from .bench import METRIC_NOTES, run_benchmark
from .config import ConfigError, RunConfig
from .datasets import LAYOUTS, load_dataset
from .flowfield import flow_to_color, write_flo
from .image import Image, load_image, save_image
from .nn import CheckpointError, load_weights, save_weights
from .pipeline import PipelineConfig, bidirectional_flow, estimate_flow, interpolate
from .pipeline import interpolate_many, load_flows
from .synthetic import Triplet
from .train import TrainingDiverged, train_fusion, write_history_csv

log = logging.getLogger("fastrife")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
IMAGE_EXTS = (".png", ".ppm", ".pgm", ".pnm")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class NumericError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------
# configuration from flags


def _add_common(p: argparse.ArgumentParser, flow=True, fusion=True):
    p.add_argument("--config", help="key=value config file; flags override it")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override any parameter, e.g. --set gf.levels=4")
    p.add_argument("--threads", type=int, help="worker threads (default: logical cores)")
    p.add_argument("--seed", type=int)
    p.add_argument("-v", "--verbose", action="count", default=0)
    if flow:
        p.add_argument("--flow", dest="flow_method", choices=("gf", "lk", "file"))
    if fusion:
        p.add_argument("--fusion", choices=("blend", "learned"))
        p.add_argument("--weights", help="FRWT checkpoint for learned fusion")


def _resolve(args, extra: dict | None = None) -> RunConfig:
    values = {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = v.strip()
    for key in ("flow_method", "threads", "seed", "weights", "repeat", "layout"):
        if getattr(args, key, None) is not None:
            values[key] = getattr(args, key)
    if getattr(args, "fusion", None) is not None:
        values["fusion.mode"] = args.fusion
    if getattr(args, "t", None):
        values["timesteps"] = tuple(args.t)
    values.update(extra or {})
    try:
        return cfgmod.resolve(args.config, values)
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc


def _weights_for(cfg: RunConfig):
    if cfg.fusion.mode != "learned":
        return None
    if not cfg.weights:
        raise UsageError("learned fusion needs --weights")
    try:
        return load_weights(cfg.weights)
    except (OSError, CheckpointError) as exc:
        raise DataError(f"{cfg.weights}: {exc}") from exc


def _load(path) -> Image:
    try:
        return load_image(path)
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from exc


def _timestep_path(out: str, t: float) -> str:
    stem, ext = os.path.splitext(out)
    return f"{stem}_t{t:.3f}{ext or '.png'}"


# --------------------------------------------------------------------------
# commands


def cmd_interpolate(args) -> int:
    cfg = _resolve(args)
    if cfg.flow_method == "file" and not args.flow_files:
        raise UsageError("--flow file needs --flow-files F01.flo F10.flo")
    f0, f1 = _load(args.frame0), _load(args.frame1)
    if f0.shape != f1.shape:
        raise DataError(f"{args.frame1}: size {f1.width}x{f1.height} differs from "
                        f"{args.frame0} ({f0.width}x{f0.height})")
    weights = _weights_for(cfg)
    pipe = cfg.pipeline()
    start = time.perf_counter()
    if args.flow_files:
        try:
            flows = load_flows(args.flow_files[0], args.flow_files[1], f0.width, f0.height)
        except (OSError, ValueError) as exc:
            raise DataError(str(exc)) from exc
    else:
        flows = bidirectional_flow(f0, f1, pipe)
    flow_ms = 1e3 * (time.perf_counter() - start)
    outs = interpolate_many(f0, f1, cfg.timesteps, pipe, weights, flows)
    total_ms = 1e3 * (time.perf_counter() - start)
    single = len(cfg.timesteps) == 1 and not args.t
    for t, img in zip(cfg.timesteps, outs):
        path = args.out if single else _timestep_path(args.out, t)
        save_image(img, path)
        print(f"wrote {path} (t={t:.3f})")
    print(f"flow {flow_ms:.1f} ms, total {total_ms:.1f} ms")
    return EXIT_OK


def _list_frames(in_dir: str) -> list:
    if not os.path.isdir(in_dir):
        raise DataError(f"{in_dir}: not a directory")
    names = sorted(n for n in os.listdir(in_dir) if n.lower().endswith(IMAGE_EXTS))
    if len(names) < 2:
        raise DataError(f"{in_dir}: need at least 2 frames, found {len(names)}")
    return [os.path.join(in_dir, n) for n in names]


def _between(a: Image, b: Image, factor: int, pipe: PipelineConfig, weights) -> list:
    """Frames strictly between ``a`` and ``b``, halving recursively."""
    mid = interpolate(a, b, 0.5, pipe, weights)
    if factor == 2:
        return [mid]
    half = factor // 2
    return _between(a, mid, half, pipe, weights) + [mid] + _between(mid, b, half, pipe, weights)


def cmd_sequence(args) -> int:
    cfg = _resolve(args)
    if cfg.flow_method == "file":
        raise UsageError("sequence needs an estimator, not --flow file")
    paths = _list_frames(args.in_dir)
    frames = [_load(p) for p in paths]
    for p, f in zip(paths[1:], frames[1:]):
        if f.shape != frames[0].shape:
            raise DataError(f"{p}: size {f.width}x{f.height} ({f.channels} ch) differs from "
                            f"{paths[0]} ({frames[0].width}x{frames[0].height}, "
                            f"{frames[0].channels} ch)")
    weights = _weights_for(cfg)
    pipe = cfg.pipeline()
    pairs = list(zip(frames, frames[1:]))
    job = lambda ab: _between(ab[0], ab[1], args.factor, pipe, weights)  # noqa: E731
    if cfg.threads > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            inner = list(pool.map(job, pairs))
    else:
        inner = [job(ab) for ab in pairs]
    seq = []
    for k, frame in enumerate(frames):
        seq.append(frame)
        if k < len(inner):
            seq.extend(inner[k])
    os.makedirs(args.out_dir, exist_ok=True)
    digits = max(4, len(str(len(seq) - 1)))
    for i, img in enumerate(seq):
        save_image(img, os.path.join(args.out_dir, f"frame_{i:0{digits}d}.png"))
    print(f"wrote {len(seq)} frames to {args.out_dir} ({len(frames)} in, factor {args.factor})")
    return EXIT_OK


def _write_flow_pair(flow, out_flo: str):
    write_flo(flow, out_flo)
    png = os.path.splitext(out_flo)[0] + ".png"
    save_image(flow_to_color(flow), png)
    print(f"wrote {out_flo} and {png}")


def cmd_flow(args) -> int:
    cfg = _resolve(args)
    if cfg.flow_method == "file":
        raise UsageError("flow needs an estimator (gf or lk)")
    f0, f1 = _load(args.frame0), _load(args.frame1)
    if f0.shape != f1.shape:
        raise DataError(f"{args.frame1}: size differs from {args.frame0}")
    pipe = cfg.pipeline()
    start = time.perf_counter()
    if args.bidirectional:
        f01, f10 = bidirectional_flow(f0, f1, pipe)
    else:
        f01, f10 = estimate_flow(f0, f1, pipe), None
    elapsed = 1e3 * (time.perf_counter() - start)
    if not f01.is_finite() or (f10 is not None and not f10.is_finite()):
        raise NumericError("flow estimate contains non-finite values")
    out = args.out if args.out.endswith(".flo") else args.out + ".flo"
    _write_flow_pair(f01, out)
    if f10 is not None:
        _write_flow_pair(f10, os.path.splitext(out)[0] + "_backward.flo")
    print(f"flow {elapsed:.1f} ms ({cfg.flow_method})")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    cfg = _resolve(args)
    if cfg.flow_method == "file":
        raise UsageError("benchmark needs an estimator (gf or lk)")
    try:
        dataset = load_dataset(args.root, cfg.layout)
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from exc
    if not dataset:
        raise DataError(f"{args.root}: no triplets found (layout {cfg.layout})")
    weights = _weights_for(cfg) if not args.baseline else None
    report = run_benchmark(dataset, cfg.pipeline(), cfg.repeat, weights,
                           baseline=args.baseline, threads=cfg.threads)
    report.config = {**cfg.to_dict(), "metrics": METRIC_NOTES, "baseline": args.baseline}
    if args.out:
        report.write_csv(args.out)
        print(f"wrote {args.out}")
    print(report.table())
    return EXIT_OK


def cmd_train(args) -> int:
    extra = {"fusion.mode": "learned"}
    for key in ("steps", "lr", "weight_decay"):
        if getattr(args, key) is not None:
            extra[f"train.{key}"] = getattr(args, key)
    if args.seed is not None:
        extra["train.seed"] = args.seed
    if args.base_channels is not None:
        extra["fusion.base_channels"] = args.base_channels
    if args.resblocks is not None:
        extra["fusion.resblocks_per_stage"] = args.resblocks
    cfg = _resolve(args, extra)
    if cfg.flow_method == "file":
        raise UsageError("train estimates flows; use --flow gf or lk")
    try:
        records = load_dataset(args.root, cfg.layout)
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from exc
    if not records:
        raise DataError(f"{args.root}: no triplets found (layout {cfg.layout})")
    triplets = []
    for r in records:
        f0, gt, f1 = _load(r.frame0), _load(r.gt), _load(r.frame1)
        if not (f0.shape == gt.shape == f1.shape):
            raise DataError(f"triplet {r.id}: frames differ in size")
        triplets.append(Triplet(f0, gt, f1, r.id))
    try:
        weights, history = train_fusion(triplets, cfg.fusion, cfg.train, cfg.pipeline())
    except TrainingDiverged as exc:
        raise NumericError(str(exc)) from exc
    save_weights(weights, args.out)
    stem = os.path.splitext(args.out)[0]
    write_history_csv(stem + "_loss.csv", history)
    with open(args.out + ".json", "w", encoding="utf-8") as fh:
        fh.write(cfg.to_json() + "\n")
    first, last = history[0], history[-1]
    print(f"trained {cfg.train.steps} steps on {len(triplets)} triplets: "
          f"l_rec {first.l_rec:.5f} -> {last.l_rec:.5f}")
    print(f"wrote {args.out}, {stem}_loss.csv, {args.out}.json")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fastrife", description="Optical-flow frame interpolation toolkit.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("interpolate", help="synthesize frames between two images")
    p.add_argument("frame0")
    p.add_argument("frame1")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--t", type=float, action="append",
                   help="timestep in (0,1); repeat for several (outputs get a _t0.500 suffix)")
    p.add_argument("--flow-files", nargs=2, metavar=("F01", "F10"),
                   help="precomputed .flo flows frame0->frame1 and frame1->frame0")
    _add_common(p)
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("sequence", help="upsample a directory of frames")
    p.add_argument("in_dir")
    p.add_argument("out_dir")
    p.add_argument("--factor", type=int, choices=(2, 4), default=2)
    _add_common(p)
    p.set_defaults(func=cmd_sequence)

    p = sub.add_parser("flow", help="estimate and visualize optical flow")
    p.add_argument("frame0")
    p.add_argument("frame1")
    p.add_argument("-o", "--out", required=True, help="output .flo path; a .png is written alongside")
    p.add_argument("--bidirectional", action="store_true")
    _add_common(p, fusion=False)
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("benchmark", help="score the pipeline on a triplet dataset")
    p.add_argument("root")
    p.add_argument("--layout", choices=LAYOUTS)
    p.add_argument("-o", "--out", help="CSV report path")
    p.add_argument("--repeat", type=int)
    p.add_argument("--baseline", choices=("overlay",), help="score a baseline instead")
    _add_common(p)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("train", help="fit the learned fusion stage on a triplet dataset")
    p.add_argument("root")
    p.add_argument("-o", "--out", required=True, help="FRWT checkpoint path")
    p.add_argument("--layout", choices=LAYOUTS)
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--base-channels", type=int)
    p.add_argument("--resblocks", type=int)
    _add_common(p, fusion=False)
    p.set_defaults(func=cmd_train)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FloatingPointError, OverflowError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
