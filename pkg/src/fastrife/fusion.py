"""Learned fusion stage: a context extractor and a small U-Net-like fusion
head, both built from the layers in :mod:`fastrife.nn`.

Network layout (``c`` = ``base_channels``, ``R`` = ``resblocks_per_stage``)::

    context (shared by both frames), stage k = 0..3:
        conv3x3/2 -> PReLU -> R x ResBlock -> backward-warp by flow_t at 1/2^(k+1)
    fusion encoder, stage k:
        input  = [warped0, warped1, flow_t0, flow_t1]            (k = 0)
               = [enc_{k-1}, ctx0_{k-1}, ctx1_{k-1}]              (k > 0)
        conv3x3/2 -> PReLU -> R x ResBlock
    decoder: nearest x2 upsample -> conv3x3 -> PReLU, with encoder skips
    head:    conv3x3 -> mask m (sigmoid), residual r (0.5 tanh)
    out = clamp(m * warped0 + (1 - m) * warped1 + r, 0, 1)
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .flowfield import DenseFlow
from .image import Image, to_grayscale
from .nn import Conv2d, FusionWeights, PReLU, ResBlock, Sequential, sigmoid
from .nn import upsample2x_backward, upsample2x_forward
from .warp import WarpPair

STAGES = 4
FLOW_INPUT_SCALE = 0.1
NET_CHANNELS = 3


@dataclass(frozen=True)
class FusionConfig:
    mode: str = "blend"
    base_channels: int = 16
    resblocks_per_stage: int = 4

    def __post_init__(self):
        if self.mode not in ("blend", "learned"):
            raise ValueError(f"fusion mode must be 'blend' or 'learned', got {self.mode!r}")
        if self.base_channels < 4:
            raise ValueError("base_channels must be >= 4")
        if self.resblocks_per_stage < 1:
            raise ValueError("resblocks_per_stage must be >= 1")


# --------------------------------------------------------------------------
# warping as a linear operator (flow is fixed, features are not)


class WarpOp:
    """Bilinear backward warp with replicate borders for a batch of flows,
    stored as gather indices so the transpose (scatter) is cheap."""

    def __init__(self, u: np.ndarray, v: np.ndarray):
        u = np.asarray(u, np.float64)
        v = np.asarray(v, np.float64)
        n, h, w = u.shape
        ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
        x = xs[None] + u
        y = ys[None] + v
        x0 = np.floor(x)
        y0 = np.floor(y)
        fx = x - x0
        fy = y - y0
        x0 = x0.astype(np.int64)
        y0 = y0.astype(np.int64)
        xa = np.clip(x0, 0, w - 1)
        xb = np.clip(x0 + 1, 0, w - 1)
        ya = np.clip(y0, 0, h - 1)
        yb = np.clip(y0 + 1, 0, h - 1)
        self.shape = (n, h, w)
        self.idx = np.stack([ya * w + xa, ya * w + xb, yb * w + xa, yb * w + xb]).reshape(4, n, h * w)
        self.wts = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy]).reshape(4, n, h * w)

    @classmethod
    def from_flows(cls, flows, width: int, height: int) -> "WarpOp":
        rs = [f.resized(width, height) for f in flows]
        return cls(np.stack([f.u for f in rs]), np.stack([f.v for f in rs]))

    def forward(self, x: np.ndarray) -> np.ndarray:
        n, c, h, w = x.shape
        flat = x.reshape(n, c, h * w)
        out = np.zeros_like(flat)
        for k in range(4):
            idx = self.idx[k][:, None, :]
            out += self.wts[k][:, None, :].astype(x.dtype) * np.take_along_axis(flat, np.broadcast_to(idx, flat.shape), axis=2)
        return out.reshape(x.shape)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        n, c, h, w = dout.shape
        hw = h * w
        flat = dout.reshape(n, c, hw)
        base = (np.arange(n * c) * hw).reshape(n, c, 1)
        dx = np.zeros(n * c * hw, dtype=np.float64)
        for k in range(4):
            target = (base + self.idx[k][:, None, :]).ravel()
            dx += np.bincount(target, weights=(flat * self.wts[k][:, None, :]).ravel(),
                              minlength=n * c * hw)
        return dx.reshape(dout.shape).astype(dout.dtype)


# --------------------------------------------------------------------------
# network


def _stage(name, cin, cout, blocks):
    return Sequential([Conv2d(name + ".conv", cin, cout, 3, stride=2),
                       PReLU(name + ".act", cout)]
                      + [ResBlock(f"{name}.res{i}", cout) for i in range(blocks)])


class _Up:
    def __init__(self, name, cin, cout):
        self.body = Sequential([Conv2d(name + ".conv", cin, cout), PReLU(name + ".act", cout)])

    def init(self, store, rng, dtype):
        self.body.init(store, rng, dtype)

    def forward(self, store, x, size):
        up = upsample2x_forward(x, size)
        out, cache = self.body.forward(store, up)
        return out, (x.shape, cache)

    def backward(self, store, dout, cache):
        in_shape, c = cache
        d = self.body.backward(store, dout, c)
        return upsample2x_backward(d, in_shape)


class FusionNet:
    def __init__(self, config: FusionConfig):
        self.config = config
        c = config.base_channels
        r = config.resblocks_per_stage
        self.ctx_ch = [max(2, c // 2) * 2 ** k for k in range(STAGES)]
        self.enc_ch = [c * 2 ** k for k in range(STAGES)]
        self.in_ch = 2 * NET_CHANNELS + 4
        self.context = [
            _stage(f"ctx.down{k}", NET_CHANNELS if k == 0 else self.ctx_ch[k - 1], self.ctx_ch[k], r)
            for k in range(STAGES)
        ]
        self.encoder = [
            _stage(f"fuse.down{k}",
                   self.in_ch if k == 0 else self.enc_ch[k - 1] + 2 * self.ctx_ch[k - 1],
                   self.enc_ch[k], r)
            for k in range(STAGES)
        ]
        e, x = self.enc_ch, self.ctx_ch
        self.ups = [
            _Up("fuse.up0", 2 * e[0], max(2, c // 2)),
            _Up("fuse.up1", 2 * e[1], e[0]),
            _Up("fuse.up2", 2 * e[2], e[1]),
            _Up("fuse.up3", e[3] + 2 * x[3], e[2]),
        ]
        self.head = Conv2d("fuse.head", max(2, c // 2) + self.in_ch, 1 + NET_CHANNELS)

    def init(self, seed: int = 0, dtype=np.float32) -> FusionWeights:
        rng = np.random.default_rng(seed)
        store = FusionWeights()
        for block in (*self.context, *self.encoder, *self.ups):
            block.init(store, rng, dtype)
        self.head.init(store, rng, dtype)
        return store

    # context ---------------------------------------------------------------

    def context_forward(self, store, img: np.ndarray, warps):
        feats, caches = [], []
        x = img
        for k, stage in enumerate(self.context):
            x, c = stage.forward(store, x)
            caches.append(c)
            feats.append(warps[k].forward(x) if warps is not None else x)
        return feats, caches

    def context_backward(self, store, dfeats, caches, warps):
        d = None
        for k in range(STAGES - 1, -1, -1):
            g = warps[k].backward(dfeats[k]) if warps is not None else dfeats[k]
            d = g if d is None else d + g
            d = self.context[k].backward(store, d, caches[k])

    # fusion ----------------------------------------------------------------

    def fuse_forward(self, store, w0, w1, ft0, ft1, ctx0, ctx1):
        x = np.concatenate([w0, w1, ft0 * FLOW_INPUT_SCALE, ft1 * FLOW_INPUT_SCALE], axis=1).astype(w0.dtype)
        enc, enc_caches, enc_in = [], [], x
        for k, stage in enumerate(self.encoder):
            if k > 0:
                enc_in = np.concatenate([enc[-1], ctx0[k - 1], ctx1[k - 1]], axis=1)
            e, c = stage.forward(store, enc_in)
            enc.append(e)
            enc_caches.append(c)
        bottom = np.concatenate([enc[3], ctx0[3], ctx1[3]], axis=1)
        d3, u3 = self.ups[3].forward(store, bottom, enc[2].shape[2:])
        d2, u2 = self.ups[2].forward(store, np.concatenate([d3, enc[2]], 1), enc[1].shape[2:])
        d1, u1 = self.ups[1].forward(store, np.concatenate([d2, enc[1]], 1), enc[0].shape[2:])
        d0, u0 = self.ups[0].forward(store, np.concatenate([d1, enc[0]], 1), x.shape[2:])
        hd, hc = self.head.forward(store, np.concatenate([d0, x], 1))
        mask = sigmoid(hd[:, :1])
        tr = np.tanh(hd[:, 1:])
        pre = mask * w0 + (1 - mask) * w1 + 0.5 * tr
        out = np.clip(pre, 0.0, 1.0)
        cache = (w0, w1, enc_caches, (u0, u1, u2, u3), hc, mask, tr, pre, d0.shape[1])
        return out, cache

    def fuse_backward(self, store, dout, cache):
        """Returns context-feature gradients ``(dctx0, dctx1)``."""
        w0, w1, enc_caches, (u0, u1, u2, u3), hc, mask, tr, pre, d0ch = cache
        dpre = dout * ((pre > 0) & (pre < 1))
        dmask = (dpre * (w0 - w1)).sum(axis=1, keepdims=True)
        dhd = np.concatenate([dmask * mask * (1 - mask), dpre * 0.5 * (1 - tr * tr)], axis=1)
        dcat = self.head.backward(store, dhd.astype(w0.dtype), hc)
        dd0 = dcat[:, :d0ch]

        e = self.enc_ch
        dcat = self.ups[0].backward(store, dd0, u0)
        dd1, de0 = dcat[:, :e[0]], dcat[:, e[0]:]
        dcat = self.ups[1].backward(store, dd1, u1)
        dd2, de1 = dcat[:, :e[1]], dcat[:, e[1]:]
        dcat = self.ups[2].backward(store, dd2, u2)
        dd3, de2 = dcat[:, :e[2]], dcat[:, e[2]:]
        dbottom = self.ups[3].backward(store, dd3, u3)
        cx = self.ctx_ch
        de3 = dbottom[:, :e[3]]
        dctx0 = [None] * STAGES
        dctx1 = [None] * STAGES
        dctx0[3] = dbottom[:, e[3]:e[3] + cx[3]]
        dctx1[3] = dbottom[:, e[3] + cx[3]:]

        denc = [de0, de1, de2, de3]
        carry = None
        for k in range(STAGES - 1, -1, -1):
            d = denc[k] if carry is None else denc[k] + carry
            din = self.encoder[k].backward(store, d, enc_caches[k])
            if k > 0:
                carry = din[:, :e[k - 1]]
                dctx0[k - 1] = din[:, e[k - 1]:e[k - 1] + cx[k - 1]]
                dctx1[k - 1] = din[:, e[k - 1] + cx[k - 1]:]
        return dctx0, dctx1

    # whole stage -------------------------------------------------------------

    def stage_warps(self, flows, height: int, width: int):
        """One WarpOp per context stage for a list of full-resolution flows."""
        ops = []
        h, w = height, width
        for _ in range(STAGES):
            h, w = (h + 1) // 2, (w + 1) // 2
            ops.append(WarpOp.from_flows(flows, w, h))
        return ops

    def forward(self, store, frame0, frame1, w0, w1, ft0, ft1, warps0, warps1):
        c0, cc0 = self.context_forward(store, frame0, warps0)
        c1, cc1 = self.context_forward(store, frame1, warps1)
        out, fc = self.fuse_forward(store, w0, w1, ft0, ft1, c0, c1)
        return out, (cc0, cc1, fc)

    def backward(self, store, dout, cache, warps0, warps1):
        cc0, cc1, fc = cache
        d0, d1 = self.fuse_backward(store, dout, fc)
        self.context_backward(store, d0, cc0, warps0)
        self.context_backward(store, d1, cc1, warps1)


def config_from_weights(weights: FusionWeights) -> FusionConfig:
    """Recover the architecture hyper-parameters from parameter names/shapes."""
    try:
        base = weights.params["fuse.down0.conv.w"].shape[0]
    except KeyError as exc:
        raise ValueError("weights do not describe a fusion network") from exc
    blocks = {int(m.group(1)) for k in weights.params
              if (m := re.match(r"fuse\.down0\.res(\d+)\.", k))}
    return FusionConfig("learned", base, len(blocks))


def init_fusion_weights(config: FusionConfig, seed: int = 0, dtype=np.float32) -> FusionWeights:
    return FusionNet(config).init(seed, dtype)


def _net_input(img: Image) -> np.ndarray:
    data = img.data
    if img.channels == 1:
        data = np.repeat(data, NET_CHANNELS, axis=0)
    return data[None]


def context_extract(img: Image, flow_t: DenseFlow, weights: FusionWeights,
                    config: FusionConfig | None = None) -> list:
    """Context features at 1/2 .. 1/16 resolution, each warped by ``flow_t``
    resampled to that resolution. Returns ``(C_k, H_k, W_k)`` arrays."""
    net = FusionNet(config or config_from_weights(weights))
    if img.shape[1:] != flow_t.shape:
        raise ValueError("image and flow sizes differ")
    warps = net.stage_warps([flow_t], img.height, img.width)
    x = _net_input(img).astype(next(iter(weights.params.values())).dtype)
    try:
        feats, _ = net.context_forward(weights, x, warps)
    except KeyError as exc:
        raise ValueError(f"weights missing parameter {exc}") from exc
    return [f[0] for f in feats]


def fuse_learned(pair: WarpPair, ctx0, ctx1, weights: FusionWeights,
                 config: FusionConfig | None = None) -> Image:
    net = FusionNet(config or config_from_weights(weights))
    dtype = next(iter(weights.params.values())).dtype
    w0 = _net_input(pair.warped0).astype(dtype)
    w1 = _net_input(pair.warped1).astype(dtype)
    ft0 = pair.flow_t0.stacked()[None].astype(dtype)
    ft1 = pair.flow_t1.stacked()[None].astype(dtype)
    c0 = [np.asarray(f)[None] if np.ndim(f) == 3 else np.asarray(f) for f in ctx0]
    c1 = [np.asarray(f)[None] if np.ndim(f) == 3 else np.asarray(f) for f in ctx1]
    try:
        out, _ = net.fuse_forward(weights, w0, w1, ft0, ft1, c0, c1)
    except KeyError as exc:
        raise ValueError(f"weights missing parameter {exc}") from exc
    out = out[0]
    if pair.warped0.channels == 1:
        return to_grayscale(Image(out))
    return Image(out)


def fuse_learned_full(frame0: Image, frame1: Image, pair: WarpPair, weights: FusionWeights,
                      config: FusionConfig | None = None) -> Image:
    ctx0 = context_extract(frame0, pair.flow_t0, weights, config)
    ctx1 = context_extract(frame1, pair.flow_t1, weights, config)
    return fuse_learned(pair, ctx0, ctx1, weights, config)
