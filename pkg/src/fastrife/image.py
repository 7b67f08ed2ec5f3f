"""Image container, I/O and the filtering/sampling primitives shared by
the flow estimators and the warping stage.

Images are planar ``(channels, height, width)`` float32 arrays with
intensities normalized to ``[0, 1]``. 8-bit values only exist at the I/O
boundary.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
MIN_PYRAMID_SIZE = 8


class ImageError(ValueError):
    """Raised for malformed images or unreadable image files."""


class BorderPolicy(str, Enum):
    REPLICATE = "replicate"
    REFLECT = "reflect"
    ZERO = "zero"


# scipy.ndimage names for the same border rules
_NDIMAGE_MODE = {
    BorderPolicy.REPLICATE: "nearest",
    BorderPolicy.REFLECT: "reflect",
    BorderPolicy.ZERO: "constant",
}


@dataclass(frozen=True)
class Image:
    """Planar multi-channel raster, ``data.shape == (channels, height, width)``."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3:
            raise ImageError(f"expected (C, H, W) data, got shape {arr.shape}")
        c, h, w = arr.shape
        if c not in (1, 3):
            raise ImageError(f"unsupported channel count {c}")
        if h < 1 or w < 1:
            raise ImageError(f"empty image {w}x{h}")
        arr = np.array(arr, dtype=np.float32, copy=True)
        if not np.all(np.isfinite(arr)):
            raise ImageError("image contains non-finite values")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @classmethod
    def from_hwc(cls, arr: np.ndarray) -> "Image":
        arr = np.asarray(arr)
        if arr.ndim == 2:
            return cls(arr)
        return cls(np.moveaxis(arr, -1, 0))

    def to_hwc(self) -> np.ndarray:
        if self.channels == 1:
            return np.array(self.data[0])
        return np.moveaxis(self.data, 0, -1).copy()


@dataclass(frozen=True)
class Pyramid:
    levels: list = field(default_factory=list)
    scale: float = 0.5

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, k) -> Image:
        return self.levels[k]


# --------------------------------------------------------------------------
# I/O


def _read_pnm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens: list[bytes] = []
    pos = 0
    # header: magic, width, height, maxval separated by whitespace/comments
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(raw):
            raise ImageError(f"{path}: truncated PNM header")
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace byte before the raster
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise ImageError(f"{path}: unsupported PNM type {magic!r} (binary P5/P6 only)")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise ImageError(f"{path}: malformed PNM header") from exc
    if width < 1 or height < 1:
        raise ImageError(f"{path}: zero dimension")
    if maxval == 255:
        dtype, scale = np.uint8, 255.0
    elif maxval == 65535:
        dtype, scale = np.dtype(">u2"), 65535.0
    else:
        raise ImageError(f"{path}: unsupported maxval {maxval}")
    channels = 3 if magic == b"P6" else 1
    count = width * height * channels
    data = np.frombuffer(raw, dtype=dtype, count=-1, offset=pos)
    if data.size < count:
        raise ImageError(f"{path}: truncated PNM raster")
    arr = data[:count].astype(np.float32) / np.float32(scale)
    return arr.reshape(height, width, channels).transpose(2, 0, 1)


def _read_png(path: str) -> np.ndarray:
    try:
        with PILImage.open(path) as im:
            if im.format != "PNG":
                raise ImageError(f"{path}: not a PNG file")
            im.load()
            mode = im.mode
            if mode in ("I;16", "I;16B", "I"):
                arr = np.asarray(im, dtype=np.float64) / 65535.0
                return arr[None].astype(np.float32)
            if mode == "L":
                arr = np.asarray(im)[None]
            elif mode == "RGB":
                arr = np.asarray(im).transpose(2, 0, 1)
            elif mode in ("P", "1"):
                arr = np.asarray(im.convert("L"))[None]
            elif mode in ("RGBA", "LA"):
                # alpha is dropped, not composited
                im2 = im.convert("RGB" if mode == "RGBA" else "L")
                arr = np.asarray(im2)
                arr = arr.transpose(2, 0, 1) if arr.ndim == 3 else arr[None]
            else:
                raise ImageError(f"{path}: unsupported PNG color type {mode}")
    except (OSError, SyntaxError) as exc:
        raise ImageError(f"{path}: cannot decode PNG ({exc})") from exc
    return arr.astype(np.float32) / np.float32(255.0)


def load_image(path: str | os.PathLike) -> Image:
    """Read a PNG or binary PPM/PGM file into an :class:`Image`.

    8-bit samples are divided by 255, 16-bit samples by 65535.
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise ImageError(f"{path}: no such file")
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head[:2] in (b"P5", b"P6"):
        data = _read_pnm(path)
    elif head.startswith(b"\x89PNG"):
        data = _read_png(path)
    else:
        raise ImageError(f"{path}: unrecognized image format")
    if data.shape[1] == 0 or data.shape[2] == 0:
        raise ImageError(f"{path}: zero dimension")
    return Image(data)


def quantize(img: Image) -> np.ndarray:
    """8-bit (C, H, W) array: clamp to [0, 1], scale, round half up."""
    scaled = np.clip(img.data.astype(np.float64), 0.0, 1.0) * 255.0
    return np.floor(scaled + 0.5).astype(np.uint8)


def save_image(img: Image, path: str | os.PathLike) -> None:
    """Write 8-bit gray or RGB; binary PGM/PPM for ``.pgm``/``.ppm``/``.pnm``
    paths, PNG otherwise."""
    q = quantize(img)
    if img.channels not in (1, 3):
        raise ImageError(f"cannot save {img.channels}-channel image")
    if os.fspath(path).lower().endswith((".pgm", ".ppm", ".pnm")):
        magic = b"P5" if img.channels == 1 else b"P6"
        with open(os.fspath(path), "wb") as fh:
            fh.write(magic + b"\n%d %d\n255\n" % (img.width, img.height))
            fh.write(np.ascontiguousarray(q.transpose(1, 2, 0)).tobytes())
        return
    if img.channels == 1:
        pil = PILImage.fromarray(q[0], mode="L")
    else:
        pil = PILImage.fromarray(np.ascontiguousarray(q.transpose(1, 2, 0)), mode="RGB")
    pil.save(os.fspath(path), format="PNG")


# --------------------------------------------------------------------------
# filtering


def to_grayscale(img: Image) -> Image:
    if img.channels == 1:
        return img
    if img.channels != 3:
        raise ImageError(f"unsupported channel count {img.channels}")
    r, g, b = img.data.astype(np.float64)
    wr, wg, wb = LUMA_WEIGHTS
    return Image((wr * r + wg * g + wb * b)[None])


def gray_array(img: Image) -> np.ndarray:
    """Grayscale plane as a float64 ``(H, W)`` array."""
    return to_grayscale(img).data[0].astype(np.float64)


def gaussian_kernel(sigma: float, radius: int | None = None) -> np.ndarray:
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if radius is None:
        radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _check_kernel(k) -> np.ndarray:
    k = np.asarray(k, dtype=np.float64).ravel()
    if k.size % 2 == 0:
        raise ValueError(f"kernel length must be odd, got {k.size}")
    return k


def correlate_plane(plane: np.ndarray, kx, ky, policy=BorderPolicy.REPLICATE) -> np.ndarray:
    """Separable correlation of a single 2-D plane (float64 in, float64 out)."""
    policy = BorderPolicy(policy)
    mode = _NDIMAGE_MODE[policy]
    kx = _check_kernel(kx)
    ky = _check_kernel(ky)
    out = ndimage.correlate1d(plane, kx, axis=1, mode=mode, cval=0.0)
    return ndimage.correlate1d(out, ky, axis=0, mode=mode, cval=0.0)


def convolve_separable(img: Image, kx, ky, policy=BorderPolicy.REPLICATE) -> Image:
    """Horizontal then vertical pass with 1-D kernels.

    Cross-correlation semantics: ``out[x] = sum_k kx[k] * in[x + k - r]``, so the
    kernel ``[-0.5, 0, 0.5]`` yields the central-difference derivative.
    """
    data = img.data.astype(np.float64)
    out = np.stack([correlate_plane(p, kx, ky, policy) for p in data])
    return Image(out)


def gaussian_blur(img: Image, sigma: float) -> Image:
    k = gaussian_kernel(sigma)
    return convolve_separable(img, k, k, BorderPolicy.REPLICATE)


# --------------------------------------------------------------------------
# sampling


def _resolve_index(idx: np.ndarray, n: int, policy: BorderPolicy):
    """Map integer indices into ``[0, n)``; returns (index, inside-mask)."""
    inside = (idx >= 0) & (idx < n)
    if policy is BorderPolicy.REPLICATE or policy is BorderPolicy.ZERO:
        return np.clip(idx, 0, n - 1), inside
    # reflect with edge duplication: ... c b a | a b c ... c | c b a
    period = 2 * n
    m = np.mod(idx, period)
    return np.where(m < n, m, period - 1 - m), inside


def sample_plane(plane: np.ndarray, x: np.ndarray, y: np.ndarray,
                 policy=BorderPolicy.REPLICATE) -> np.ndarray:
    """Vectorized bilinear sampling of a 2-D (or leading-channel 3-D) array."""
    policy = BorderPolicy(policy)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    h, w = plane.shape[-2:]
    x0f = np.floor(x)
    y0f = np.floor(y)
    fx = x - x0f
    fy = y - y0f
    x0 = x0f.astype(np.int64)
    y0 = y0f.astype(np.int64)
    xs0, inx0 = _resolve_index(x0, w, policy)
    xs1, inx1 = _resolve_index(x0 + 1, w, policy)
    ys0, iny0 = _resolve_index(y0, h, policy)
    ys1, iny1 = _resolve_index(y0 + 1, h, policy)
    w00 = (1 - fx) * (1 - fy)
    w01 = fx * (1 - fy)
    w10 = (1 - fx) * fy
    w11 = fx * fy
    if policy is BorderPolicy.ZERO:
        w00 = w00 * (inx0 & iny0)
        w01 = w01 * (inx1 & iny0)
        w10 = w10 * (inx0 & iny1)
        w11 = w11 * (inx1 & iny1)
    p = plane.astype(np.float64, copy=False)
    return (w00 * p[..., ys0, xs0] + w01 * p[..., ys0, xs1]
            + w10 * p[..., ys1, xs0] + w11 * p[..., ys1, xs1])


def sample_bilinear(img: Image, x: float, y: float,
                    policy=BorderPolicy.REPLICATE) -> np.ndarray:
    """Intensity per channel at subpixel location ``(x, y)``."""
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValueError(f"non-finite sample coordinate ({x}, {y})")
    return sample_plane(img.data, np.array(x), np.array(y), policy)


def resize_plane(plane: np.ndarray, new_w: int, new_h: int) -> np.ndarray:
    """Bilinear resample with pixel-center alignment and replicate borders."""
    h, w = plane.shape[-2:]
    xs = (np.arange(new_w) + 0.5) * (w / new_w) - 0.5
    ys = (np.arange(new_h) + 0.5) * (h / new_h) - 0.5
    gx, gy = np.meshgrid(xs, ys)
    return sample_plane(plane, gx, gy, BorderPolicy.REPLICATE)


# --------------------------------------------------------------------------
# pyramids


def pyramid_level_size(width: int, height: int, scale: float) -> tuple[int, int]:
    # epsilon guards products like 40 * 0.2 = 7.999999...
    return (max(1, int(math.floor(width * scale + 1e-9))),
            max(1, int(math.floor(height * scale + 1e-9))))


def pyramid_sizes(width: int, height: int, levels: int, scale: float) -> list[tuple[int, int]]:
    sizes = [(width, height)]
    while len(sizes) < levels:
        w, h = pyramid_level_size(*sizes[-1], scale)
        if w < MIN_PYRAMID_SIZE or h < MIN_PYRAMID_SIZE:
            break
        sizes.append((w, h))
    return sizes


def build_pyramid(img: Image, levels: int, scale: float) -> Pyramid:
    """Gaussian pyramid, level 0 = ``img``.

    Each level blurs the previous one with ``sigma = 0.5 * (1/scale - 1)`` and
    resamples bilinearly to ``floor(size * scale)``. Levels that would drop
    below 8 pixels in either dimension are not built.
    """
    if levels < 1:
        raise ValueError("levels must be >= 1")
    if not 0.0 < scale < 1.0:
        raise ValueError(f"scale must be in (0, 1), got {scale}")
    sizes = pyramid_sizes(img.width, img.height, levels, scale)
    sigma = 0.5 * (1.0 / scale - 1.0)
    out = [img]
    for w, h in sizes[1:]:
        prev = out[-1]
        blurred = gaussian_blur(prev, sigma).data.astype(np.float64)
        out.append(Image(np.stack([resize_plane(p, w, h) for p in blurred])))
    return Pyramid(out, scale)


def stack_images(images: Sequence[Image]) -> np.ndarray:
    return np.stack([im.data for im in images])
