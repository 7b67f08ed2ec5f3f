"""Synthetic frames with known motion, used by the test suite, the
experiment scripts and ``fastrife benchmark`` fixtures."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .image import BorderPolicy, Image, sample_plane, save_image


def smooth_texture(width: int, height: int, sigma: float = 2.0, seed: int = 0,
                   channels: int = 1, lo: float = 0.05, hi: float = 0.95) -> Image:
    """Gaussian-filtered uniform noise, rescaled to ``[lo, hi]``."""
    rng = np.random.default_rng(seed)
    noise = rng.random((channels, height, width))
    planes = [ndimage.gaussian_filter(p, sigma, mode="wrap") for p in noise]
    arr = np.stack(planes)
    arr = (arr - arr.min()) / max(arr.max() - arr.min(), 1e-12)
    return Image(lo + (hi - lo) * arr)


def shift_image(img: Image, dx: float, dy: float,
                policy=BorderPolicy.REPLICATE) -> Image:
    """Content at ``(x, y)`` moves to ``(x + dx, y + dy)`` (bilinear resampling)."""
    ys, xs = np.mgrid[0:img.height, 0:img.width].astype(np.float64)
    return Image(sample_plane(img.data, xs - dx, ys - dy, policy))


def crop(img: Image, x0: int, y0: int, width: int, height: int) -> Image:
    return Image(img.data[:, y0:y0 + height, x0:x0 + width])


def checkerboard(width: int, height: int, square: int = 16, blur: float = 2.0,
                 lo: float = 0.1, hi: float = 0.9, offset: tuple[int, int] = (0, 0)) -> Image:
    ys, xs = np.mgrid[0:height, 0:width]
    ox, oy = offset
    cells = ((xs + ox) // square + (ys + oy) // square) % 2
    arr = np.where(cells == 1, hi, lo).astype(np.float64)
    if blur > 0:
        arr = ndimage.gaussian_filter(arr, blur, mode="nearest")
    return Image(arr)


def white_square(width: int, height: int, x0: int, y0: int, size: int) -> Image:
    arr = np.zeros((height, width))
    arr[y0:y0 + size, x0:x0 + size] = 1.0
    return Image(arr)


@dataclass(frozen=True)
class Triplet:
    frame0: Image
    gt: Image
    frame1: Image
    name: str = ""


def translation_triplet(width: int, height: int, dx: int, dy: int, seed: int = 0,
                        channels: int = 3, sigma: float = 2.0) -> Triplet:
    """Global translation by ``(dx, dy)`` per frame pair; crops of one larger
    texture so every frame is exact (no resampling). ``dx``, ``dy`` must be even
    for the middle frame to land on the pixel grid."""
    if dx % 2 or dy % 2:
        raise ValueError("translation_triplet needs even displacements")
    pad = max(abs(dx), abs(dy)) + 2
    tex = smooth_texture(width + 2 * pad, height + 2 * pad, sigma=sigma, seed=seed,
                         channels=channels)
    # frame_t content at p equals texture at p - t*d
    f0 = crop(tex, pad, pad, width, height)
    gt = crop(tex, pad - dx // 2, pad - dy // 2, width, height)
    f1 = crop(tex, pad - dx, pad - dy, width, height)
    return Triplet(f0, gt, f1, f"translate_{dx}_{dy}_s{seed}")


def moving_square_triplet(width: int, height: int, size: int, start: tuple[int, int],
                          velocity: tuple[int, int], seed: int = 0, channels: int = 3,
                          background_velocity: tuple[int, int] = (0, 0)) -> Triplet:
    """A textured square moving over a textured background.

    ``velocity`` and ``background_velocity`` are displacements over the full
    frame interval and must be even so the middle frame is exact.
    """
    for comp in (*velocity, *background_velocity):
        if comp % 2:
            raise ValueError("velocities must be even")
    pad = max(map(abs, background_velocity)) + 2
    bg = smooth_texture(width + 2 * pad, height + 2 * pad, sigma=3.0, seed=seed,
                        channels=channels, lo=0.2, hi=0.6)
    fg = smooth_texture(size, size, sigma=1.5, seed=seed + 1000, channels=channels,
                        lo=0.4, hi=1.0)
    frames = []
    for t2 in (0, 1, 2):  # time in half-intervals
        bx = pad - background_velocity[0] * t2 // 2
        by = pad - background_velocity[1] * t2 // 2
        arr = np.array(bg.data[:, by:by + height, bx:bx + width])
        x0 = start[0] + velocity[0] * t2 // 2
        y0 = start[1] + velocity[1] * t2 // 2
        xa, ya = max(x0, 0), max(y0, 0)
        xb, yb = min(x0 + size, width), min(y0 + size, height)
        if xb > xa and yb > ya:
            arr[:, ya:yb, xa:xb] = fg.data[:, ya - y0:yb - y0, xa - x0:xb - x0]
        frames.append(Image(arr))
    return Triplet(frames[0], frames[1], frames[2],
                   f"square_{velocity[0]}_{velocity[1]}_s{seed}")


def motion_suite(width: int = 96, height: int = 64, seed: int = 0) -> list[Triplet]:
    """Small mixed suite: global translations and moving objects."""
    out = [
        translation_triplet(width, height, 4, 0, seed=seed),
        translation_triplet(width, height, 2, -2, seed=seed + 1),
        translation_triplet(width, height, -4, 2, seed=seed + 2),
        moving_square_triplet(width, height, 20, (20, 16), (8, 4), seed=seed + 3),
        moving_square_triplet(width, height, 24, (50, 20), (-6, 2), seed=seed + 4,
                              background_velocity=(2, 0)),
        moving_square_triplet(width, height, 16, (30, 30), (4, -6), seed=seed + 5),
    ]
    return out


def static_triplet(width: int, height: int, seed: int = 0, channels: int = 3) -> Triplet:
    tex = smooth_texture(width, height, seed=seed, channels=channels)
    return Triplet(tex, tex, tex, f"static_s{seed}")


def write_triplet_tree(root: str | os.PathLike, triplets: list[Triplet]) -> list[str]:
    """Write triplets as ``root/<name>/{frame0,gt,frame1}.png``."""
    root = os.fspath(root)
    os.makedirs(root, exist_ok=True)
    dirs = []
    for i, tri in enumerate(triplets):
        d = os.path.join(root, tri.name or f"triplet_{i:04d}")
        os.makedirs(d, exist_ok=True)
        save_image(tri.frame0, os.path.join(d, "frame0.png"))
        save_image(tri.gt, os.path.join(d, "gt.png"))
        save_image(tri.frame1, os.path.join(d, "frame1.png"))
        dirs.append(d)
    return dirs
