import numpy as np
import pytest

from fastrife.flowfield import DenseFlow
from fastrife.fusion import (
    FusionConfig, FusionNet, WarpOp, config_from_weights, context_extract, fuse_learned,
    fuse_learned_full, init_fusion_weights,
)
from fastrife.image import Image
from fastrife.synthetic import smooth_texture
from fastrife.warp import backward_warp, fuse_blend, warp_pair

from gradcheck import numeric_grad, rel_error

SMALL = FusionConfig("learned", 4, 1)


def _pair(rng, w, h, flow_scale=2.0):
    f0, f1 = smooth_texture(w, h, seed=1, channels=3), smooth_texture(w, h, seed=2, channels=3)
    f01 = DenseFlow(rng.normal(size=(h, w)) * flow_scale, rng.normal(size=(h, w)) * flow_scale)
    f10 = DenseFlow(rng.normal(size=(h, w)) * flow_scale, rng.normal(size=(h, w)) * flow_scale)
    return f0, f1, warp_pair(f0, f1, f01, f10, 0.5)


class TestWarpOp:
    def test_matches_image_warp(self, rng):
        img = smooth_texture(13, 9, seed=4)
        flow = DenseFlow(rng.normal(size=(9, 13)) * 3, rng.normal(size=(9, 13)) * 3)
        op = WarpOp(flow.u[None], flow.v[None])
        out = op.forward(img.data[None].astype(np.float64))[0]
        np.testing.assert_allclose(out, backward_warp(img, flow).data, atol=1e-5)

    @pytest.mark.parametrize("shape", [(1, 1, 4, 4), (2, 3, 5, 7), (1, 2, 9, 3), (3, 1, 6, 6)])
    def test_adjoint(self, shape):
        r = np.random.default_rng(sum(shape))
        n, c, h, w = shape
        op = WarpOp(r.normal(size=(n, h, w)) * 2, r.normal(size=(n, h, w)) * 2)
        x, y = r.normal(size=shape), r.normal(size=shape)
        assert np.vdot(op.forward(x), y) == pytest.approx(np.vdot(x, op.backward(y)), rel=1e-12)

    def test_resampled_flow_scales(self):
        op = WarpOp.from_flows([DenseFlow.constant(8, 8, 4.0, 0.0)], 4, 4)
        x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
        np.testing.assert_allclose(op.forward(x)[0, 0, :, 0], x[0, 0, :, 2])


class TestNetwork:
    def test_context_dimensions(self, rng):
        img = smooth_texture(64, 64, seed=0)
        feats = context_extract(img, DenseFlow.zeros(64, 64), init_fusion_weights(SMALL))
        assert [f.shape[1:] for f in feats] == [(32, 32), (16, 16), (8, 8), (4, 4)]
        assert [f.shape[0] for f in feats] == FusionNet(SMALL).ctx_ch

    def test_zero_flow_warp_is_identity(self, rng):
        img = smooth_texture(32, 24, seed=0, channels=3)
        wts = init_fusion_weights(SMALL, seed=3)
        net = FusionNet(SMALL)
        x = img.data[None].astype(np.float32)
        plain, _ = net.context_forward(wts, x, None)
        warped = context_extract(img, DenseFlow.zeros(32, 24), wts)
        for p, q in zip(plain, warped):
            np.testing.assert_array_equal(p[0], q)

    def test_zero_weights_zero_features(self):
        wts = init_fusion_weights(SMALL)
        for p in wts.params.values():
            p[...] = 0
        feats = context_extract(smooth_texture(32, 32), DenseFlow.zeros(32, 32), wts)
        assert all(not f.any() for f in feats)

    @pytest.mark.parametrize("size", [(64, 64), (48, 40)])
    def test_zero_head_equals_blend(self, rng, size):
        f0, f1, pair = _pair(rng, *size)
        wts = init_fusion_weights(SMALL, seed=5)
        for k, p in wts.params.items():
            if k.startswith("fuse.head"):
                p[...] = 0
        out = fuse_learned_full(f0, f1, pair, wts)
        np.testing.assert_allclose(out.data, fuse_blend(pair, 0.5).data, atol=1e-6)

    @pytest.mark.parametrize("size", [(448, 256), (64, 64), (37, 21)])
    def test_output_shape_and_range(self, rng, size):
        f0, f1, pair = _pair(rng, *size)
        wts = init_fusion_weights(FusionConfig("learned", 4, 1), seed=1)
        for p in wts.params.values():
            p *= 8  # drive the head into saturation
        out = fuse_learned_full(f0, f1, pair, wts)
        assert out.shape == (3, size[1], size[0])
        assert out.data.min() >= 0.0 and out.data.max() <= 1.0

    def test_grayscale_in_grayscale_out(self, rng):
        f0, f1 = Image(rng.random((1, 32, 32))), Image(rng.random((1, 32, 32)))
        pair = warp_pair(f0, f1, DenseFlow.zeros(32, 32), DenseFlow.zeros(32, 32))
        assert fuse_learned_full(f0, f1, pair, init_fusion_weights(SMALL)).channels == 1

    def test_missing_parameter(self, rng):
        f0, f1, pair = _pair(rng, 32, 32)
        wts = init_fusion_weights(SMALL)
        ctx = context_extract(f0, pair.flow_t0, wts)
        del wts.params["fuse.head.w"]
        with pytest.raises(ValueError):
            fuse_learned(pair, ctx, ctx, wts, SMALL)

    @pytest.mark.parametrize("cfg", [FusionConfig("learned", 4, 1), FusionConfig("learned", 8, 2),
                                     FusionConfig("learned", 16, 4)])
    def test_config_from_weights(self, cfg):
        back = config_from_weights(init_fusion_weights(cfg))
        assert (back.base_channels, back.resblocks_per_stage) == (cfg.base_channels, cfg.resblocks_per_stage)

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            FusionConfig("magic")
        with pytest.raises(ValueError):
            FusionConfig("learned", 2)


def test_full_network_gradient():
    """Parameter and input gradients of the whole stage against float64
    central differences on a random projection of the output."""
    r = np.random.default_rng(0)
    net = FusionNet(SMALL)
    wts = net.init(2, np.float64)
    h = w = 16
    f0, f1, pair = _pair(r, w, h, 1.5)
    stack = lambda im: im.data[None].astype(np.float64)  # noqa: E731
    args = (stack(f0), stack(f1), stack(pair.warped0), stack(pair.warped1),
            pair.flow_t0.stacked()[None].astype(np.float64), pair.flow_t1.stacked()[None].astype(np.float64))
    warps0 = net.stage_warps([pair.flow_t0], h, w)
    warps1 = net.stage_warps([pair.flow_t1], h, w)
    out, cache = net.forward(wts, *args, warps0, warps1)
    assert 0.0 < out.min() or out.max() < 1.0
    proj = r.normal(size=out.shape)
    wts.zero_grad()
    net.backward(wts, proj, cache, warps0, warps1)

    def loss():
        return float((net.forward(wts, *args, warps0, warps1)[0] * proj).sum())

    names = list(wts.params)
    checked = 0
    for name in names[:: max(1, len(names) // 12)]:
        p = wts.params[name]
        coords = list(r.choice(p.size, size=min(6, p.size), replace=False))
        num = numeric_grad(loss, p, 1e-6, coords)
        ana = wts.grads[name].reshape(-1)[coords]
        assert rel_error(ana, num) < 1e-5, name
        checked += 1
    assert checked >= 10
