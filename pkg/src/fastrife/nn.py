"""Minimal layer library with hand-written backward passes, AdamW and the
FRWT checkpoint format.

Tensors are plain ``(N, C, H, W)`` numpy arrays. Layers are small objects
that own parameter *names*; the values live in a :class:`FusionWeights`
store so that the whole network state can be checkpointed and updated in
one place. ``forward`` returns ``(out, cache)`` and ``backward`` consumes the
cache, accumulates parameter gradients into the store and returns the input
gradient.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

CHECKPOINT_MAGIC = b"FRWT"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class FusionWeights:
    """Named parameters plus gradient buffers and AdamW state."""

    params: dict = field(default_factory=dict)
    grads: dict = field(default_factory=dict)
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name}")
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        self.m[name] = np.zeros_like(value)
        self.v[name] = np.zeros_like(value)

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g[...] = 0

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "FusionWeights":
        return FusionWeights(
            {k: p.copy() for k, p in self.params.items()},
            {k: p.copy() for k, p in self.grads.items()},
            {k: p.copy() for k, p in self.m.items()},
            {k: p.copy() for k, p in self.v.items()},
            self.step,
        )

    def astype(self, dtype) -> "FusionWeights":
        out = FusionWeights()
        for k, p in self.params.items():
            out.add(k, p.astype(dtype))
        return out


# --------------------------------------------------------------------------
# functional kernels


def conv2d_forward(x, w, b, stride=1, padding=0):
    """Cross-correlation. ``x``: (N, C, H, W), ``w``: (O, C, kh, kw)."""
    n, c, h, wd = x.shape
    o, c2, kh, kw = w.shape
    if c != c2:
        raise ValueError(f"conv2d channel mismatch: input {c}, weight {c2}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d output would be empty for input {h}x{wd}")
    cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    out = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b.reshape(1, -1, 1, 1)
    return np.ascontiguousarray(out), (x.shape, xp, cols)


def conv2d_backward(dout, w, cache, stride=1, padding=0):
    """Returns ``(dx, dw, db)``."""
    xshape, xp, cols = cache
    o, c, kh, kw = w.shape
    _, _, ho, wo = dout.shape
    dw = np.tensordot(dout, cols, axes=([0, 2, 3], [0, 2, 3]))
    db = dout.sum(axis=(0, 2, 3))
    dxp = np.zeros_like(xp)
    for i in range(kh):
        for j in range(kw):
            contrib = np.tensordot(w[:, :, i, j], dout, axes=([0], [1]))  # (C, N, ho, wo)
            dxp[:, :, i:i + stride * (ho - 1) + 1:stride,
                j:j + stride * (wo - 1) + 1:stride] += contrib.transpose(1, 0, 2, 3)
    if padding:
        dxp = dxp[:, :, padding:padding + xshape[2], padding:padding + xshape[3]]
    return dxp, dw, db


def prelu_forward(x, alpha):
    a = alpha.reshape(1, -1, 1, 1)
    return np.where(x > 0, x, a * x), x


def prelu_backward(dout, alpha, x):
    a = alpha.reshape(1, -1, 1, 1)
    neg = x <= 0
    dx = np.where(neg, a * dout, dout)
    dalpha = (dout * x * neg).sum(axis=(0, 2, 3))
    return dx, dalpha


def upsample2x_forward(x, size):
    """Nearest-neighbor x2 upsampling cropped to ``size = (H, W)``."""
    h, w = size
    up = x.repeat(2, axis=2).repeat(2, axis=3)
    if up.shape[2] < h or up.shape[3] < w:
        raise ValueError(f"cannot upsample {x.shape[2:]} to {size}")
    return np.ascontiguousarray(up[:, :, :h, :w])


def upsample2x_backward(dout, in_shape):
    n, c, h, w = in_shape
    full = np.zeros((n, c, 2 * h, 2 * w), dtype=dout.dtype)
    full[:, :, :dout.shape[2], :dout.shape[3]] = dout
    return full.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# --------------------------------------------------------------------------
# layers


class Conv2d:
    def __init__(self, name, cin, cout, kernel=3, stride=1, padding=None, bias=True):
        self.name = name
        self.cin, self.cout = cin, cout
        self.kernel, self.stride = kernel, stride
        self.padding = kernel // 2 if padding is None else padding
        self.bias = bias

    def init(self, store: FusionWeights, rng, dtype=np.float32, scale=1.0):
        fan_in = self.cin * self.kernel * self.kernel
        std = scale * np.sqrt(2.0 / fan_in)
        store.add(self.name + ".w",
                  (rng.standard_normal((self.cout, self.cin, self.kernel, self.kernel)) * std).astype(dtype))
        if self.bias:
            store.add(self.name + ".b", np.zeros(self.cout, dtype=dtype))

    def forward(self, store, x):
        w = store.params[self.name + ".w"]
        b = store.params[self.name + ".b"] if self.bias else None
        return conv2d_forward(x, w, b, self.stride, self.padding)

    def backward(self, store, dout, cache):
        w = store.params[self.name + ".w"]
        dx, dw, db = conv2d_backward(dout, w, cache, self.stride, self.padding)
        store.grads[self.name + ".w"] += dw
        if self.bias:
            store.grads[self.name + ".b"] += db
        return dx


class PReLU:
    def __init__(self, name, channels, init_slope=0.25):
        self.name = name
        self.channels = channels
        self.init_slope = init_slope

    def init(self, store, rng, dtype=np.float32):
        store.add(self.name + ".a", np.full(self.channels, self.init_slope, dtype=dtype))

    def forward(self, store, x):
        return prelu_forward(x, store.params[self.name + ".a"])

    def backward(self, store, dout, cache):
        dx, da = prelu_backward(dout, store.params[self.name + ".a"], cache)
        store.grads[self.name + ".a"] += da
        return dx


class ResBlock:
    """``out = x + conv2(prelu(conv1(x)))``, channels and size preserved."""

    def __init__(self, name, channels):
        self.name = name
        self.conv1 = Conv2d(name + ".conv1", channels, channels)
        self.act = PReLU(name + ".act", channels)
        self.conv2 = Conv2d(name + ".conv2", channels, channels)

    def init(self, store, rng, dtype=np.float32):
        self.conv1.init(store, rng, dtype)
        self.act.init(store, rng, dtype)
        # small residual branch keeps the stacked blocks near identity at init
        self.conv2.init(store, rng, dtype, scale=0.1)

    def forward(self, store, x):
        h1, c1 = self.conv1.forward(store, x)
        h2, c2 = self.act.forward(store, h1)
        h3, c3 = self.conv2.forward(store, h2)
        return x + h3, (c1, c2, c3)

    def backward(self, store, dout, cache):
        c1, c2, c3 = cache
        d = self.conv2.backward(store, dout, c3)
        d = self.act.backward(store, d, c2)
        d = self.conv1.backward(store, d, c1)
        return dout + d


class Sequential:
    def __init__(self, layers):
        self.layers = list(layers)

    def init(self, store, rng, dtype=np.float32):
        for layer in self.layers:
            layer.init(store, rng, dtype)

    def forward(self, store, x):
        caches = []
        for layer in self.layers:
            x, c = layer.forward(store, x)
            caches.append(c)
        return x, caches

    def backward(self, store, dout, caches):
        for layer, c in zip(reversed(self.layers), reversed(caches)):
            dout = layer.backward(store, dout, c)
        return dout


# --------------------------------------------------------------------------
# optimizer


def adamw_step(weights: FusionWeights, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8,
               weight_decay=1e-4) -> None:
    """One AdamW update (decoupled weight decay, bias-corrected moments).

    Gradients are read but not cleared.
    """
    for name in weights.params:
        if weights.grads.get(name) is None:
            raise ValueError(f"missing gradient for {name}")
    weights.step += 1
    t = weights.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in weights.params.items():
        g = weights.grads[name]
        m = weights.m[name]
        v = weights.v[name]
        if weight_decay:
            p *= p.dtype.type(1.0 - lr * weight_decay)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype)


# --------------------------------------------------------------------------
# checkpoints


def checkpoint_tensors(weights: FusionWeights, include_optimizer: bool = True) -> dict:
    tensors = dict(weights.params)
    if include_optimizer:
        for k in weights.params:
            tensors["opt.m." + k] = weights.m[k]
            tensors["opt.v." + k] = weights.v[k]
        tensors["opt.step"] = np.array(weights.step, dtype=np.float32)
    return tensors


def write_checkpoint(path, tensors: dict) -> None:
    """Little-endian: ``FRWT``, u32 version, u32 count, then per tensor
    u32 name length, utf-8 name, u32 rank, u32 dims, float32 data."""
    with open(os.fspath(path), "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(tensors)))
        for name, arr in tensors.items():
            raw = name.encode("utf-8")
            arr = np.asarray(arr)
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            if arr.ndim:
                fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_checkpoint(path) -> dict:
    with open(os.fspath(path), "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}")
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(raw):
            raise CheckpointError(f"{path}: truncated checkpoint")
        vals = struct.unpack_from(fmt, raw, pos)
        pos += size
        return vals

    version, count = take("<II")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    tensors = {}
    for _ in range(count):
        (nlen,) = take("<I")
        if pos + nlen > len(raw):
            raise CheckpointError(f"{path}: truncated checkpoint")
        name = raw[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = take("<I")
        dims = take(f"<{rank}I") if rank else ()
        size = int(np.prod(dims)) if rank else 1
        if pos + 4 * size > len(raw):
            raise CheckpointError(f"{path}: truncated tensor {name}")
        data = np.frombuffer(raw, dtype="<f4", count=size, offset=pos).astype(np.float32)
        pos += 4 * size
        tensors[name] = data.reshape(dims)
    return tensors


def save_weights(weights: FusionWeights, path, include_optimizer: bool = True) -> None:
    write_checkpoint(path, checkpoint_tensors(weights, include_optimizer))


def load_weights(path) -> FusionWeights:
    tensors = read_checkpoint(path)
    out = FusionWeights()
    for name, arr in tensors.items():
        if not name.startswith("opt."):
            out.add(name, arr.copy())
    for name in out.params:
        if "opt.m." + name in tensors:
            out.m[name] = tensors["opt.m." + name].copy()
            out.v[name] = tensors["opt.v." + name].copy()
    if "opt.step" in tensors:
        out.step = int(tensors["opt.step"])
    return out
