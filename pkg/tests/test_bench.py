import logging
import math

import pytest

from fastrife.bench import METRICS, read_report_csv, run_benchmark
from fastrife.datasets import load_dataset
from fastrife.pipeline import PipelineConfig
from fastrife.synthetic import motion_suite, static_triplet, write_triplet_tree, translation_triplet


def test_static_triplet_perfect():
    rep = run_benchmark([static_triplet(48, 32)], PipelineConfig("gf"))
    row = rep.rows[0]
    assert row.psnr == math.inf and row.ie == 0.0 and row.ssim == pytest.approx(1.0)
    assert rep.aggregates()["psnr"]["mean"] == math.inf


def test_quality_deterministic():
    data = [translation_triplet(48, 32, 2, 0, seed=s) for s in range(2)]
    a = run_benchmark(data, PipelineConfig("lk"), warmup=False)
    b = run_benchmark(data, PipelineConfig("lk"), warmup=False)
    for col in ("psnr", "ssim", "ie"):
        assert a.column(col) == b.column(col)


def test_csv_aggregates_recompute(tmp_path):
    rep = run_benchmark(motion_suite(64, 48), PipelineConfig("gf"), repeat=2)
    path = tmp_path / "r.csv"
    rep.write_csv(path)
    parsed = read_report_csv(path)
    assert len(parsed["rows"]) == 6
    for m in METRICS:
        col = [r[m] for r in parsed["rows"]]
        assert math.fsum(col) / len(col) == parsed["aggregates"]["mean"][m]
        assert sorted(col)[2:4] and parsed["aggregates"]["median"][m] == pytest.approx(
            (sorted(col)[2] + sorted(col)[3]) / 2, abs=1e-9)
    text = path.read_text()
    assert text.startswith("# config: ") and '"flow_method": "gf"' in text


def test_repeat_timings(caplog):
    with caplog.at_level(logging.INFO, logger="fastrife.bench"):
        rep = run_benchmark([translation_triplet(32, 32, 2, 2)], repeat=3)
    assert len(rep.rows[0].flow_runs) == 3 and len(rep.rows[0].total_runs) == 3
    assert all(f <= t for f, t in zip(rep.rows[0].flow_runs, rep.rows[0].total_runs))
    assert any("flow runs" in m for m in caplog.messages)


def test_failures_recorded(tmp_path):
    write_triplet_tree(tmp_path, [translation_triplet(32, 24, 2, 0, seed=0),
                                  translation_triplet(32, 24, 2, 0, seed=1)])
    bad = tmp_path / "translate_2_0_s1" / "gt.png"
    bad.write_bytes(b"not a png")
    rep = run_benchmark(load_dataset(tmp_path))
    assert [r.id for r in rep.rows] == ["translate_2_0_s0"]
    assert rep.failures[0][0] == "translate_2_0_s1"
    rep.write_csv(tmp_path / "r.csv")
    assert read_report_csv(tmp_path / "r.csv")["failures"][0][0] == "translate_2_0_s1"


def test_overlay_beaten():
    suite = motion_suite()
    gf = run_benchmark(suite, PipelineConfig("gf"))
    ov = run_benchmark(suite, baseline="overlay")
    assert gf.aggregates()["psnr"]["mean"] > ov.aggregates()["psnr"]["mean"]
    assert ov.config["flow_method"] == "overlay"


def test_threads_match_serial():
    suite = motion_suite(64, 48)
    a = run_benchmark(suite, threads=1, warmup=False)
    b = run_benchmark(suite, threads=3, warmup=False)
    assert a.column("psnr") == b.column("psnr")


def test_errors():
    with pytest.raises(ValueError):
        run_benchmark([])
    with pytest.raises(ValueError):
        run_benchmark([static_triplet(16, 16)], baseline="median")


def test_table_lists_rows():
    rep = run_benchmark([static_triplet(32, 32)])
    table = rep.table()
    assert "static_s0" in table and "inf" in table and "median" in table
