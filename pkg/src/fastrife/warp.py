"""Intermediate flows, backward warping and the non-learned blend."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .flowfield import DenseFlow
from .image import BorderPolicy, Image, sample_plane


def check_timestep(t: float) -> float:
    t = float(t)
    if not 0.0 < t < 1.0:
        raise ValueError(f"timestep must lie strictly between 0 and 1, got {t}")
    return t


@dataclass(frozen=True)
class WarpPair:
    warped0: Image
    warped1: Image
    flow_t0: DenseFlow
    flow_t1: DenseFlow

    def __post_init__(self):
        shape = self.warped0.shape[1:]
        if (self.warped1.shape[1:] != shape or self.flow_t0.shape != shape
                or self.flow_t1.shape != shape):
            raise ValueError("warp pair members must share dimensions")


def intermediate_flows(f01: DenseFlow, f10: DenseFlow, t: float = 0.5):
    """Flows from time ``t`` back to frame 0 and frame 1, assuming linear
    motion and reading both bidirectional flows at the target pixel:
    ``flow_t0 = -t * f01``, ``flow_t1 = -(1 - t) * f10``."""
    if f01.shape != f10.shape:
        raise ValueError(f"flow shape mismatch {f01.shape} vs {f10.shape}")
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"timestep out of range: {t}")
    return f01.scaled(-t), f10.scaled(-(1.0 - t))


def backward_warp(img: Image, flow: DenseFlow) -> Image:
    """``out(p) = img(p + flow(p))``, bilinear with replicate borders."""
    if img.shape[1:] != flow.shape:
        raise ValueError(f"image {img.shape[1:]} and flow {flow.shape} differ in size")
    ys, xs = np.mgrid[0:img.height, 0:img.width].astype(np.float64)
    return Image(sample_plane(img.data, xs + flow.u, ys + flow.v, BorderPolicy.REPLICATE))


def warp_pair(frame0: Image, frame1: Image, f01: DenseFlow, f10: DenseFlow,
              t: float = 0.5) -> WarpPair:
    ft0, ft1 = intermediate_flows(f01, f10, t)
    return WarpPair(backward_warp(frame0, ft0), backward_warp(frame1, ft1), ft0, ft1)


def fuse_blend(pair: WarpPair, t: float = 0.5) -> Image:
    """``(1 - t) * warped0 + t * warped1``, clamped to [0, 1]."""
    t = float(t)
    w0 = pair.warped0.data
    w1 = pair.warped1.data
    return Image(np.clip((1.0 - t) * w0 + t * w1, 0.0, 1.0))
