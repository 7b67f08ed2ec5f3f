"""End-to-end acceptance checks. Each test prints one PASS/FAIL line with the
measured quantity before asserting."""

import dataclasses
import itertools
import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fastrife import cli
from fastrife.bench import METRICS, read_report_csv, run_benchmark
from fastrife.flowfield import DenseFlow, read_flo, write_flo
from fastrife.fusion import FusionConfig
from fastrife.gf import estimate_flow_gf
from fastrife.image import Image, load_image, quantize, save_image
from fastrife.losses import census_loss, combine
from fastrife.lk import ShiTomasiParams, detect_corners, lk_track
from fastrife.metrics import interpolation_error, psnr, ssim
from fastrife.nn import (
    Conv2d, FusionWeights, PReLU, ResBlock, Sequential, conv2d_backward, conv2d_forward,
    load_weights, prelu_backward, prelu_forward, save_weights, upsample2x_backward,
    upsample2x_forward,
)
from fastrife.pipeline import PipelineConfig, interpolate
from fastrife.synthetic import (
    checkerboard, motion_suite, moving_square_triplet, shift_image, smooth_texture, static_triplet,
    translation_triplet, write_triplet_tree,
)
from fastrife.train import TrainParams, train_fusion

from gradcheck import away_from_zero, numeric_grad, rel_error
from metric_oracles import ie_ref, psnr_ref, ssim_ref


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title}: {detail}")
        assert ok, detail
    return emit


def _interior_epe(flow, u, v, frac=0.8):
    h, w = flow.shape
    my, mx = int(h * (1 - frac) / 2), int(w * (1 - frac) / 2)
    e = np.hypot(flow.u - u, flow.v - v)[my:h - my, mx:w - mx]
    return float(e.mean())


def test_c01_gf_flow(report):
    start = time.perf_counter()
    results = {}
    for k, (dx, dy) in enumerate([(1.0, 0.0), (5.0, -3.0), (0.5, 0.5)]):
        tex = smooth_texture(448, 256, sigma=2.0, seed=20 + k)
        results[(dx, dy)] = _interior_epe(estimate_flow_gf(tex, shift_image(tex, dx, dy)), dx, dy)
    elapsed = time.perf_counter() - start
    ok = (results[(1.0, 0.0)] < 0.25 and results[(5.0, -3.0)] < 0.25
          and results[(0.5, 0.5)] < 0.3 and elapsed < 60)
    detail = ", ".join(f"EPE{s}={e:.4f}" for s, e in results.items()) + f", {elapsed:.1f} s"
    report(1, "GF flow on translated textures", ok, detail)


def test_c02_lk_flow(report):
    cb = checkerboard(160, 128, 16, 2.0)
    params = ShiTomasiParams()
    corners = detect_corners(cb, params)
    sparse = lk_track(cb, shift_image(cb, 3.0, 1.5), corners)
    good = [m for m in sparse.matches if m.valid and math.hypot(m.u - 3.0, m.v - 1.5) < 0.5]
    frac = len(good) / len(corners)
    min_sep = min(math.hypot(a.x - b.x, a.y - b.y) for a, b in itertools.combinations(corners, 2))
    tex_corners = detect_corners(smooth_texture(448, 256, sigma=2.0, seed=4), params)
    tex_sep = min(math.hypot(a.x - b.x, a.y - b.y) for a, b in itertools.combinations(tex_corners, 2))
    ok = (frac >= 0.9 and len(corners) <= params.max_corners and min_sep >= params.min_distance
          and len(tex_corners) == params.max_corners and tex_sep >= params.min_distance)
    report(2, "LK tracking and detector constraints", ok,
           f"{len(good)}/{len(corners)} corners within 0.5 px ({frac:.1%}); min separation "
           f"{min_sep:.2f}/{tex_sep:.2f} >= {params.min_distance}; texture corners {len(tex_corners)}")


def test_c03_runtime_ordering(report, tmp_path):
    tris = [dataclasses.replace(translation_triplet(448, 256, 4, -2, seed=s), name=f"t{s}")
            for s in range(2)]
    write_triplet_tree(tmp_path / "data", tris)
    medians = {}
    for method in ("gf", "lk"):
        out = tmp_path / f"{method}.csv"
        code = cli.main(["benchmark", str(tmp_path / "data"), "--flow", method, "--repeat", "5",
                         "--threads", "1", "-o", str(out)])
        assert code == 0
        medians[method] = read_report_csv(out)["aggregates"]["median"]["flow_ms"]
    report(3, "LK flow phase faster than GF (448x256, median of 5 serial runs)",
           medians["lk"] < medians["gf"], f"LK {medians['lk']:.2f} ms vs GF {medians['gf']:.2f} ms")


def test_c04_dense_vs_sparse_quality(report):
    suite = motion_suite()
    gf = run_benchmark(suite, PipelineConfig("gf")).aggregates()["psnr"]["mean"]
    lk = run_benchmark(suite, PipelineConfig("lk")).aggregates()["psnr"]["mean"]
    report(4, "GF pipeline PSNR >= LK pipeline PSNR - 0.2 dB", gf >= lk - 0.2,
           f"GF {gf:.3f} dB, LK {lk:.3f} dB")


def test_c05_pipeline_sanity(report):
    st_ = static_triplet(96, 64, seed=3)
    out = interpolate(st_.frame0, st_.frame1, 0.5, PipelineConfig("gf"))
    mae = float(np.abs(out.data - st_.gt.data).mean())

    # bright textured square moving (12, 6) over black; centroid of the output
    tri = moving_square_triplet(96, 64, 16, (20, 20), (12, 6), seed=1)
    frames = []
    for x0, y0 in ((20, 20), (26, 23), (32, 26)):
        arr = np.zeros((3, 64, 96))
        arr[:, y0:y0 + 16, x0:x0 + 16] = tri.frame0.data[:, 20:36, 20:36]
        frames.append(Image(arr))
    mid = interpolate(frames[0], frames[2], 0.5, PipelineConfig("gf"))

    def centroid(img):
        m = img.data.mean(axis=0).astype(np.float64)
        ys, xs = np.mgrid[0:m.shape[0], 0:m.shape[1]]
        return float((xs * m).sum() / m.sum()), float((ys * m).sum() / m.sum())

    (cx, cy), (gx, gy) = centroid(mid), centroid(frames[1])
    shift = math.hypot(cx - gx, cy - gy)

    suite = motion_suite()
    gf = run_benchmark(suite, PipelineConfig("gf")).aggregates()["psnr"]["mean"]
    ov = run_benchmark(suite, baseline="overlay").aggregates()["psnr"]["mean"]
    ok = mae < 1 / 255 and shift <= 1.0 and gf > ov
    report(5, "pipeline sanity", ok,
           f"static MAE {mae * 255:.4f}/255; object centroid off by {shift:.3f} px; "
           f"GF {gf:.2f} dB vs overlay {ov:.2f} dB")


def test_c06_metric_oracles(report):
    r = np.random.default_rng(6)
    worst = {"psnr": 0.0, "ssim": 0.0, "ie": 0.0}
    for _ in range(100):
        c = int(r.choice([1, 3]))
        a, b = Image(r.random((c, 8, 8))), Image(r.random((c, 8, 8)))
        la, lb = a.data.astype(np.float64).tolist(), b.data.astype(np.float64).tolist()
        worst["psnr"] = max(worst["psnr"], abs(psnr(a, b) - psnr_ref(la, lb)))
        worst["ie"] = max(worst["ie"], abs(interpolation_error(a, b) - ie_ref(la, lb)))
        worst["ssim"] = max(worst["ssim"], abs(ssim(a, b, win_size=7) - ssim_ref(la, lb, win=7)))
    for _ in range(5):
        a, b = Image(r.random((3, 16, 16))), Image(r.random((3, 16, 16)))
        worst["ssim"] = max(worst["ssim"], abs(ssim(a, b) - ssim_ref(a.data.astype(np.float64).tolist(),
                                                                     b.data.astype(np.float64).tolist())))
    img = Image(r.random((3, 16, 16)))
    base = np.round(r.random((3, 8, 8)) * 200) / 255
    ie5 = interpolation_error(Image(base + 5 / 255), Image(base))
    ok = (max(worst.values()) < 1e-6 and psnr(img, img) == math.inf and ssim(img, img) == 1.0
          and abs(ie5 - 5.0) < 1e-4)
    report(6, "metric oracles", ok,
           ", ".join(f"max |{k} - oracle| {v:.2e}" for k, v in worst.items())
           + f"; psnr(i,i)={psnr(img, img)}, ssim(i,i)={ssim(img, img)}, IE offset {ie5:.6f}")


def test_c07_loss_contract(report):
    worst = [0.0]

    @settings(max_examples=200)
    @given(st.floats(0, 1e3), st.floats(0, 1e3), st.floats(0, 1e3))
    def identity(a, b, c):
        lb = combine(a, b, c)
        worst[0] = max(worst[0], abs(lb.total - (lb.l_rec + lb.l_cen + 0.1 * lb.l_dis)))

    identity()
    r = np.random.default_rng(7)
    inv = max(census_loss(Image(g + 0.05), Image(g))
              for g in (r.random((3, 20, 20)) * 0.9 for _ in range(10)))
    ex = combine(1.0, 0.5, 2.0).total
    ok = worst[0] <= 1e-6 and inv <= 1e-6 and abs(ex - 1.7) <= 1e-12
    report(7, "loss contract", ok,
           f"max identity error {worst[0]:.2e}; census offset loss {inv:.2e}; example total {ex}")


SHAPES = [(1, 1, 1, 4, 4, 1), (1, 2, 3, 5, 6, 1), (2, 3, 2, 6, 5, 2), (1, 4, 4, 7, 7, 2),
          (2, 2, 5, 4, 8, 1), (1, 3, 3, 9, 4, 1), (1, 1, 6, 5, 5, 2), (2, 5, 1, 6, 6, 1),
          (1, 2, 2, 3, 3, 1), (1, 6, 3, 8, 6, 2)]


def _layer_error(layer, x, r):
    """float32 analytic gradients vs float64 central differences."""
    store = FusionWeights()
    layer.init(store, r, np.float32)
    for k in store.params:
        store.params[k] += (0.1 * r.normal(size=store.params[k].shape)).astype(np.float32)
    out, cache = layer.forward(store, x.astype(np.float32))
    proj = r.normal(size=out.shape)
    store.zero_grad()
    dx = layer.backward(store, proj.astype(np.float32), cache)
    ref = FusionWeights()
    for k, p in store.params.items():
        ref.add(k, p.astype(np.float64))
    x64 = x.astype(np.float32).astype(np.float64)

    def loss():
        return float((layer.forward(ref, x64)[0] * proj).sum())

    errs = [rel_error(dx, numeric_grad(loss, x64, 1e-6))]
    errs += [rel_error(store.grads[k], numeric_grad(loss, p, 1e-6)) for k, p in ref.params.items()]
    return max(errs)


def test_c08_gradients_and_checkpoint(report, tmp_path):
    r = np.random.default_rng(8)
    worst = {}
    for n, ci, co, h, w, stride in SHAPES:
        x = r.normal(size=(n, ci, h, w)).astype(np.float32)
        wt = (0.5 * r.normal(size=(co, ci, 3, 3))).astype(np.float32)
        b = r.normal(size=co).astype(np.float32)
        out, cache = conv2d_forward(x, wt, b, stride, 1)
        proj = r.normal(size=out.shape)
        dx, dw, db = conv2d_backward(proj.astype(np.float32), wt, cache, stride, 1)

        def loss():
            return float((conv2d_forward(x, wt, b, stride, 1)[0].astype(np.float64) * proj).sum())

        e = max(rel_error(dx, numeric_grad(loss, x, 1e-3)), rel_error(dw, numeric_grad(loss, wt, 1e-3)),
                rel_error(db, numeric_grad(loss, b, 1e-3)))
        worst["conv2d"] = max(worst.get("conv2d", 0.0), e)

        xa = away_from_zero(r.normal(size=(n, ci, h, w)), 0.05).astype(np.float32)
        alpha = r.uniform(0.05, 0.5, size=ci).astype(np.float32)
        proj = r.normal(size=xa.shape)
        dxa, da = prelu_backward(proj.astype(np.float32), alpha, xa)

        def ploss():
            return float((prelu_forward(xa, alpha)[0].astype(np.float64) * proj).sum())

        e = max(rel_error(dxa, numeric_grad(ploss, xa, 1e-3)), rel_error(da, numeric_grad(ploss, alpha, 1e-3)))
        worst["prelu"] = max(worst.get("prelu", 0.0), e)

        size = (2 * h - (h % 2), 2 * w)
        proj = r.normal(size=(n, ci) + size)
        dxu = upsample2x_backward(proj.astype(np.float32), x.shape)

        def uloss():
            return float((upsample2x_forward(x, size).astype(np.float64) * proj).sum())

        worst["upsample"] = max(worst.get("upsample", 0.0), rel_error(dxu, numeric_grad(uloss, x, 1e-3)))
        worst["resblock"] = max(worst.get("resblock", 0.0),
                                _layer_error(ResBlock("rb", ci), r.normal(size=(n, ci, h, w)), r))
        worst["stage"] = max(worst.get("stage", 0.0), _layer_error(
            Sequential([Conv2d("c", ci, co, 3, stride=stride), PReLU("a", co), ResBlock("r", co)]),
            r.normal(size=(n, ci, h, w)), r))

    fw = FusionWeights()
    net = Sequential([Conv2d("a", 3, 4), PReLU("p", 4), ResBlock("r", 4)])
    net.init(fw, r)
    save_weights(fw, tmp_path / "w.frwt")
    back = load_weights(tmp_path / "w.frwt")
    x = r.random((1, 3, 9, 9)).astype(np.float32)
    exact = (all(back.params[k].tobytes() == fw.params[k].tobytes() for k in fw.params)
             and net.forward(fw, x)[0].tobytes() == net.forward(back, x)[0].tobytes())
    ok = max(worst.values()) < 1e-2 and exact
    report(8, f"gradient checks on {len(SHAPES)} shapes per layer; checkpoint roundtrip", ok,
           ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f"; bit-exact reload {exact}")


TOY_MOTIONS = [(8, 4), (-6, 2), (4, -6), (6, 6), (-4, -8)]


def toy_set():
    return [moving_square_triplet(48, 48, 14, (8 + 3 * i, 10 + 2 * i), v, seed=i)
            for i, v in enumerate(TOY_MOTIONS)]


@pytest.mark.slow
def test_c09_toy_training(report):
    data = toy_set()
    cfg = FusionConfig("learned", 8, 1)
    params = TrainParams(steps=500, lr=1e-3, seed=0)
    weights, hist = train_fusion(data, cfg, params)
    _, hist_short = train_fusion(data, cfg, dataclasses.replace(params, steps=20))
    _, hist_short2 = train_fusion(data, cfg, dataclasses.replace(params, steps=20))
    deterministic = [h.row() for h in hist_short] == [h.row() for h in hist_short2] \
        and [h.row() for h in hist[:21]] == [h.row() for h in hist_short]
    ratio = hist[-1].l_rec / hist[0].l_rec
    pipe = PipelineConfig("gf")
    learned = np.mean([psnr(interpolate(t.frame0, t.frame1, 0.5, dataclasses.replace(pipe, fusion=cfg), weights), t.gt)
                       for t in data])
    blend = np.mean([psnr(interpolate(t.frame0, t.frame1, 0.5, pipe), t.gt) for t in data])
    ok = ratio < 0.5 and deterministic and learned > blend
    report(9, "toy training overfit", ok,
           f"l_rec {hist[0].l_rec:.4f} -> {hist[-1].l_rec:.4f} (x{ratio:.3f}); deterministic {deterministic}; "
           f"learned {learned:.2f} dB vs blend {blend:.2f} dB")


def test_c10_formats(report, tmp_path):
    r = np.random.default_rng(10)
    flo_ok = True
    for k in range(25):
        w, h = int(r.integers(1, 65)), int(r.integers(1, 65))
        f = DenseFlow(r.normal(size=(h, w)) * 10, r.normal(size=(h, w)) * 10)
        write_flo(f, tmp_path / "f.flo")
        g = read_flo(tmp_path / "f.flo")
        flo_ok &= g.u.tobytes() == f.u.tobytes() and g.v.tobytes() == f.v.tobytes()
    png_err = 0.0
    for c in (1, 3):
        img = Image(r.random((c, 17, 23)))
        save_image(img, tmp_path / "i.png")
        back = load_image(tmp_path / "i.png")
        png_err = max(png_err, float(np.abs(back.data - img.data).max()))
        assert np.array_equal(quantize(back), quantize(img))
    rep = run_benchmark(motion_suite(64, 48), PipelineConfig("lk"), warmup=False)
    rep.write_csv(tmp_path / "r.csv")
    parsed = read_report_csv(tmp_path / "r.csv")
    agg_err = max(abs(math.fsum(row[m] for row in parsed["rows"]) / len(parsed["rows"])
                      - parsed["aggregates"]["mean"][m]) for m in METRICS)
    ok = flo_ok and png_err <= 0.5 / 255 + 1e-7 and agg_err <= 1e-9
    report(10, "file formats and report aggregates", ok,
           f".flo bit-exact over 25 sizes {flo_ok}; PNG max error {png_err * 255:.4f}/255; "
           f"CSV mean recompute error {agg_err:.1e}")
