"""Benchmark harness: interpolate every triplet at t = 0.5, score it against
the ground-truth middle frame and time the flow phase and the whole call."""

from __future__ import annotations

import csv
import json
import logging
import math
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

from .datasets import TripletRecord
from .image import load_image
from .metrics import interpolation_error, psnr, ssim
from .pipeline import PipelineConfig, bidirectional_flow, overlay, synthesize
from .synthetic import Triplet

log = logging.getLogger(__name__)

METRICS = ("psnr", "ssim", "ie", "flow_ms", "total_ms")
METRIC_NOTES = "psnr and ie over all channels on the 0-255 scale; ssim on luma"


@dataclass
class Row:
    id: str
    psnr: float
    ssim: float
    ie: float
    flow_ms: float
    total_ms: float
    flow_runs: list = field(default_factory=list)
    total_runs: list = field(default_factory=list)


@dataclass
class BenchmarkReport:
    rows: list
    failures: list
    config: dict

    def column(self, name: str) -> list:
        return [getattr(r, name) for r in self.rows]

    def aggregates(self) -> dict:
        out = {}
        for m in METRICS:
            col = self.column(m)
            if not col:
                out[m] = {"mean": math.nan, "median": math.nan}
                continue
            mean = math.inf if any(math.isinf(v) for v in col) else math.fsum(col) / len(col)
            out[m] = {"mean": mean, "median": statistics.median(col)}
        return out

    def write_csv(self, path) -> None:
        agg = self.aggregates()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(f"# config: {json.dumps(self.config, sort_keys=True)}\n")
            fh.write(f"# metrics: {METRIC_NOTES}\n")
            w = csv.writer(fh)
            w.writerow(["id", *METRICS])
            for r in self.rows:
                w.writerow([r.id, *(repr(float(getattr(r, m))) for m in METRICS)])
            w.writerow([])
            w.writerow(["aggregate", *METRICS])
            for stat in ("mean", "median"):
                w.writerow([stat, *(repr(float(agg[m][stat])) for m in METRICS)])
            if self.failures:
                w.writerow([])
                w.writerow(["failed", "error"])
                for fid, err in self.failures:
                    w.writerow([fid, err])

    def table(self) -> str:
        head = f"{'id':<28}{'PSNR':>10}{'SSIM':>9}{'IE':>9}{'flow ms':>10}{'total ms':>10}"
        lines = [head, "-" * len(head)]

        def fmt(r_id, p, s, e, f, t):
            ps = "inf" if math.isinf(p) else f"{p:.3f}"
            return f"{r_id:<28}{ps:>10}{s:>9.4f}{e:>9.3f}{f:>10.2f}{t:>10.2f}"

        for r in self.rows:
            lines.append(fmt(r.id[:27], r.psnr, r.ssim, r.ie, r.flow_ms, r.total_ms))
        lines.append("-" * len(head))
        agg = self.aggregates()
        for stat in ("mean", "median"):
            lines.append(fmt(stat, *(agg[m][stat] for m in METRICS)))
        for fid, err in self.failures:
            lines.append(f"FAILED {fid}: {err}")
        return "\n".join(lines)


def read_report_csv(path) -> dict:
    """Parse a report written by :meth:`BenchmarkReport.write_csv`."""
    rows, aggregates, failures = [], {}, []
    section = None
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.reader(fh):
            if not rec or rec[0].startswith("#"):
                continue
            if rec[0] in ("id", "aggregate", "failed"):
                section = rec[0]
                continue
            if section == "id":
                rows.append({"id": rec[0], **{m: float(v) for m, v in zip(METRICS, rec[1:])}})
            elif section == "aggregate":
                aggregates[rec[0]] = {m: float(v) for m, v in zip(METRICS, rec[1:])}
            elif section == "failed":
                failures.append((rec[0], rec[1]))
    return {"rows": rows, "aggregates": aggregates, "failures": failures}


def _materialize(item):
    if isinstance(item, Triplet):
        return item.name, item.frame0, item.gt, item.frame1
    if isinstance(item, TripletRecord):
        f0, gt, f1 = (load_image(p) for p in (item.frame0, item.gt, item.frame1))
        if not (f0.shape == gt.shape == f1.shape):
            raise ValueError(f"triplet {item.id}: frames differ in size")
        return item.id, f0, gt, f1
    raise TypeError(f"unsupported dataset item {type(item).__name__}")


def _run_once(f0, f1, config, weights, baseline):
    start = time.perf_counter()
    if baseline == "overlay":
        flow_done = time.perf_counter()
        out = overlay(f0, f1)
    else:
        f01, f10 = bidirectional_flow(f0, f1, config)
        flow_done = time.perf_counter()
        out = synthesize(f0, f1, f01, f10, 0.5, config.fusion, weights)
    end = time.perf_counter()
    return out, 1e3 * (flow_done - start), 1e3 * (end - start)


def evaluate_triplet(item, config: PipelineConfig, repeat: int = 1, weights=None,
                     baseline: str | None = None) -> Row:
    tid, f0, gt, f1 = _materialize(item)
    flows, totals = [], []
    out = None
    for _ in range(max(1, repeat)):
        out, fms, tms = _run_once(f0, f1, config, weights, baseline)
        flows.append(fms)
        totals.append(tms)
    row = Row(tid, psnr(out, gt), ssim(out, gt), interpolation_error(out, gt),
              statistics.median(flows), statistics.median(totals), flows, totals)
    log.info("%s flow runs %s total runs %s", tid, flows, totals)
    return row


def run_benchmark(dataset, config: PipelineConfig | None = None, repeat: int = 1,
                  weights=None, baseline: str | None = None, warmup: bool = True,
                  threads: int = 1) -> BenchmarkReport:
    """Score every triplet of ``dataset`` (records or in-memory triplets).

    Timings are medians over ``repeat`` runs after one untimed warm-up call.
    Per-sample failures are recorded and the run continues. ``baseline='overlay'``
    scores the plain average of the two inputs instead of the pipeline.
    """
    config = config or PipelineConfig()
    dataset = list(dataset)
    if not dataset:
        raise ValueError("empty dataset")
    if baseline not in (None, "overlay"):
        raise ValueError(f"unknown baseline {baseline!r}")
    if warmup:
        try:
            _, f0, _, f1 = _materialize(dataset[0])
            _run_once(f0, f1, config, weights, baseline)
        except Exception as exc:  # reported per sample below
            log.debug("warm-up failed: %s", exc)

    def job(item):
        try:
            return evaluate_triplet(item, config, repeat, weights, baseline)
        except Exception as exc:
            name = getattr(item, "id", None) or getattr(item, "name", "?")
            log.warning("triplet %s failed: %s", name, exc)
            return (name, f"{type(exc).__name__}: {exc}")

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(job, dataset))
    else:
        results = [job(item) for item in dataset]
    rows = [r for r in results if isinstance(r, Row)]
    failures = [r for r in results if not isinstance(r, Row)]
    echo = {
        "flow_method": "overlay" if baseline else config.flow_method,
        "fusion": asdict(config.fusion),
        "gf": asdict(config.gf),
        "shi_tomasi": asdict(config.shi_tomasi),
        "lk": asdict(config.lk),
        "repeat": repeat,
        "metrics": METRIC_NOTES,
    }
    return BenchmarkReport(rows, failures, echo)
