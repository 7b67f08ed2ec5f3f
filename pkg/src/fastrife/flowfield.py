"""Dense flow container, Middlebury ``.flo`` files and color-wheel rendering."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .image import Image, resize_plane

FLO_MAGIC = 202021.25


class FlowFormatError(ValueError):
    pass


@dataclass(frozen=True)
class DenseFlow:
    """Per-pixel displacement: pixel ``(x, y)`` of frame A sits at
    ``(x + u, y + v)`` in frame B."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.array(self.u, dtype=np.float32, copy=True)
        v = np.array(self.v, dtype=np.float32, copy=True)
        if u.ndim != 2 or u.shape != v.shape:
            raise ValueError(f"flow planes must be equal 2-D arrays, got {u.shape} and {v.shape}")
        if u.size == 0:
            raise ValueError("empty flow field")
        u.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape

    @classmethod
    def zeros(cls, width: int, height: int) -> "DenseFlow":
        z = np.zeros((height, width), np.float32)
        return cls(z, z)

    @classmethod
    def constant(cls, width: int, height: int, u: float, v: float) -> "DenseFlow":
        return cls(np.full((height, width), u, np.float32), np.full((height, width), v, np.float32))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v)))

    def scaled(self, factor: float) -> "DenseFlow":
        return DenseFlow(self.u * np.float32(factor), self.v * np.float32(factor))

    def stacked(self) -> np.ndarray:
        """(2, H, W) float32 array."""
        return np.stack([self.u, self.v])

    def resized(self, width: int, height: int) -> "DenseFlow":
        """Bilinear resample; magnitudes rescaled by the per-axis size ratio."""
        if (width, height) == (self.width, self.height):
            return self
        u = resize_plane(self.u.astype(np.float64), width, height) * (width / self.width)
        v = resize_plane(self.v.astype(np.float64), width, height) * (height / self.height)
        return DenseFlow(u, v)


def endpoint_error(a: DenseFlow, b: DenseFlow) -> np.ndarray:
    return np.hypot(a.u.astype(np.float64) - b.u, a.v.astype(np.float64) - b.v)


# --------------------------------------------------------------------------
# .flo


def write_flo(flow: DenseFlow, path: str | os.PathLike, allow_nonfinite: bool = False) -> None:
    """Middlebury layout: float32 magic, int32 width, int32 height, then
    interleaved little-endian float32 (u, v) pairs in row-major order."""
    if not allow_nonfinite and not flow.is_finite():
        raise FlowFormatError("refusing to write non-finite flow (pass allow_nonfinite=True)")
    payload = np.empty((flow.height, flow.width, 2), dtype="<f4")
    payload[..., 0] = flow.u
    payload[..., 1] = flow.v
    with open(os.fspath(path), "wb") as fh:
        fh.write(struct.pack("<fii", FLO_MAGIC, flow.width, flow.height))
        fh.write(payload.tobytes())


def read_flo(path: str | os.PathLike) -> DenseFlow:
    with open(os.fspath(path), "rb") as fh:
        raw = fh.read()
    if len(raw) < 12:
        raise FlowFormatError(f"{path}: truncated header")
    magic, width, height = struct.unpack("<fii", raw[:12])
    if magic != FLO_MAGIC:
        raise FlowFormatError(f"{path}: bad magic {magic!r}")
    if width < 1 or height < 1:
        raise FlowFormatError(f"{path}: invalid dimensions {width}x{height}")
    expected = 12 + 8 * width * height
    if len(raw) < expected:
        raise FlowFormatError(f"{path}: truncated payload ({len(raw)} < {expected} bytes)")
    data = np.frombuffer(raw, dtype="<f4", count=2 * width * height, offset=12)
    data = data.reshape(height, width, 2)
    return DenseFlow(data[..., 0], data[..., 1])


# --------------------------------------------------------------------------
# visualization


def _hsv_to_rgb(h: np.ndarray, s: np.ndarray, v: np.ndarray) -> np.ndarray:
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(np.int64) % 6
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b])


def flow_to_color(flow: DenseFlow, max_magnitude: float | None = None) -> Image:
    """Render flow on a color wheel: hue from direction, saturation from
    magnitude (normalized by ``max_magnitude``, default the 99th percentile).
    Zero flow is white."""
    u = flow.u.astype(np.float64)
    v = flow.v.astype(np.float64)
    mag = np.hypot(u, v)
    if max_magnitude is None:
        max_magnitude = float(np.percentile(mag, 99))
    if not max_magnitude > 0:
        max_magnitude = 1.0
    hue = np.mod(np.arctan2(v, u) / (2 * np.pi), 1.0)
    sat = np.clip(mag / max_magnitude, 0.0, 1.0)
    return Image(_hsv_to_rgb(hue, sat, np.ones_like(sat)))
