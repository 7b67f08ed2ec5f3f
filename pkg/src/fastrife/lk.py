"""Sparse flow: Shi-Tomasi corners, iterative Lucas-Kanade tracking and
inverse-distance densification into a :class:`DenseFlow`."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .flowfield import DenseFlow
from .image import Image, gray_array, resize_plane, sample_plane


@dataclass(frozen=True)
class ShiTomasiParams:
    max_corners: int = 100
    quality_level: float = 0.1
    min_distance: float = 10.0
    block_size: int = 7

    def __post_init__(self):
        if not 0.0 < self.quality_level <= 1.0:
            raise ValueError(f"quality_level must be in (0, 1], got {self.quality_level}")
        if self.min_distance < 0:
            raise ValueError("min_distance must be >= 0")
        if self.block_size < 1 or self.block_size % 2 == 0:
            raise ValueError(f"block_size must be odd, got {self.block_size}")
        if self.max_corners < 1:
            raise ValueError("max_corners must be >= 1")


@dataclass(frozen=True)
class LKParams:
    win_size: int = 15
    levels: int = 1
    max_iterations: int = 30
    epsilon: float = 0.03
    min_eig_threshold: float = 1e-4

    def __post_init__(self):
        if self.win_size < 3 or self.win_size % 2 == 0:
            raise ValueError(f"win_size must be odd and >= 3, got {self.win_size}")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass(frozen=True)
class Corner:
    x: float
    y: float
    score: float


@dataclass(frozen=True)
class Match:
    x: float
    y: float
    u: float
    v: float
    valid: bool
    iterations: int = 0
    last_step: float = 0.0


@dataclass(frozen=True)
class SparseFlow:
    matches: list = field(default_factory=list)

    def __len__(self):
        return len(self.matches)

    @property
    def valid(self) -> list:
        return [m for m in self.matches if m.valid]

    def arrays(self, valid_only: bool = True):
        """``(x, y, u, v)`` float64 arrays."""
        ms = self.valid if valid_only else self.matches
        if not ms:
            e = np.zeros(0)
            return e, e, e, e
        a = np.array([(m.x, m.y, m.u, m.v) for m in ms], dtype=np.float64)
        return a[:, 0], a[:, 1], a[:, 2], a[:, 3]


def central_gradients(f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central differences with replicate borders; returns ``(gx, gy)``."""
    k = np.array([-0.5, 0.0, 0.5])
    gx = ndimage.correlate1d(f, k, axis=1, mode="nearest")
    gy = ndimage.correlate1d(f, k, axis=0, mode="nearest")
    return gx, gy


def min_eigenvalue(p, q, r):
    """Smaller eigenvalue of ``[[p, r], [r, q]]``."""
    return 0.5 * (p + q) - np.sqrt(0.25 * (p - q) ** 2 + r * r)


def corner_response(f: np.ndarray, block_size: int) -> np.ndarray:
    """Minimum-eigenvalue map of the structure tensor summed over
    ``block_size`` windows."""
    gx, gy = central_gradients(f)
    area = float(block_size * block_size)

    def box(a):
        return ndimage.uniform_filter(a, size=block_size, mode="nearest") * area

    resp = min_eigenvalue(box(gx * gx), box(gy * gy), box(gx * gy))
    return np.maximum(resp, 0.0)


def _disk_offsets(radius: float):
    r = int(np.ceil(radius))
    oy, ox = np.mgrid[-r:r + 1, -r:r + 1]
    inside = ox * ox + oy * oy < radius * radius
    return ox[inside], oy[inside]


def detect_corners(img: Image, params: ShiTomasiParams | None = None) -> list:
    """Shi-Tomasi corners, strongest first.

    Candidates above ``quality_level * max_response`` are accepted greedily;
    anything closer than ``min_distance`` to an accepted corner is dropped.
    """
    params = params or ShiTomasiParams()
    if img.width < params.block_size or img.height < params.block_size:
        raise ValueError(f"image {img.width}x{img.height} smaller than block {params.block_size}")
    f = gray_array(img)
    resp = corner_response(f, params.block_size)
    peak = float(resp.max())
    if peak <= 0.0:
        return []
    thresh = params.quality_level * peak
    cand = np.flatnonzero((resp >= thresh) & (resp > 0.0))
    order = cand[np.argsort(-resp.ravel()[cand], kind="stable")]
    h, w = resp.shape
    blocked = np.zeros((h, w), dtype=bool)
    ox, oy = _disk_offsets(params.min_distance)
    corners = []
    for idx in order:
        y, x = divmod(int(idx), w)
        if blocked[y, x]:
            continue
        corners.append(Corner(float(x), float(y), float(resp[y, x])))
        if len(corners) >= params.max_corners:
            break
        bx, by = x + ox, y + oy
        keep = (bx >= 0) & (bx < w) & (by >= 0) & (by < h)
        blocked[by[keep], bx[keep]] = True
    return corners


def _track_level(I, J, gx, gy, px, py, d0, params: LKParams, alive, final: bool = True):
    """Lockstep iterative LK for all points on one pyramid level.

    On coarse levels (``final=False``) a point that is untrackable there keeps
    its incoming estimate instead of being invalidated; only the full
    resolution level decides validity.
    """
    entering = alive
    h, w = I.shape
    half = params.win_size // 2
    oy, ox = np.mgrid[-half:half + 1, -half:half + 1]
    ox = ox.ravel().astype(np.float64)
    oy = oy.ravel().astype(np.float64)
    area = float(params.win_size ** 2)

    wx = px[:, None] + ox[None, :]
    wy = py[:, None] + oy[None, :]
    Iw = sample_plane(I, wx, wy)
    gxw = sample_plane(gx, wx, wy)
    gyw = sample_plane(gy, wx, wy)
    g11 = (gxw * gxw).sum(1)
    g12 = (gxw * gyw).sum(1)
    g22 = (gyw * gyw).sum(1)
    lam = min_eigenvalue(g11, g22, g12) / area
    alive = alive & (lam >= params.min_eig_threshold)
    det = g11 * g22 - g12 * g12
    det = np.where(alive, det, 1.0)

    d = d0.copy()
    n = len(px)
    iters = np.zeros(n, dtype=np.int64)
    last = np.zeros(n)
    active = alive.copy()
    for _ in range(params.max_iterations):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        cx = px[idx] + d[idx, 0]
        cy = py[idx] + d[idx, 1]
        outside = (cx < half) | (cx > w - 1 - half) | (cy < half) | (cy > h - 1 - half)
        if outside.any():
            gone = idx[outside]
            alive[gone] = False
            active[gone] = False
            idx = idx[~outside]
            cx, cy = cx[~outside], cy[~outside]
            if idx.size == 0:
                break
        Jw = sample_plane(J, cx[:, None] + ox[None, :], cy[:, None] + oy[None, :])
        diff = Iw[idx] - Jw
        b1 = (diff * gxw[idx]).sum(1)
        b2 = (diff * gyw[idx]).sum(1)
        su = (g22[idx] * b1 - g12[idx] * b2) / det[idx]
        sv = (g11[idx] * b2 - g12[idx] * b1) / det[idx]
        d[idx, 0] += su
        d[idx, 1] += sv
        iters[idx] += 1
        last[idx] = np.hypot(su, sv)
        done = last[idx] < params.epsilon
        active[idx[done]] = False

    cx = px + d[:, 0]
    cy = py + d[:, 1]
    inside = (cx >= half) & (cx <= w - 1 - half) & (cy >= half) & (cy <= h - 1 - half)
    ok = alive & inside & np.all(np.isfinite(d), axis=1)
    if final:
        return d, ok, iters, last
    d = np.where(ok[:, None], d, d0)
    return d, entering, iters, last


def lk_track(img1: Image, img2: Image, points, params: LKParams | None = None) -> SparseFlow:
    """Track ``points`` from ``img1`` into ``img2``; output order equals input order."""
    params = params or LKParams()
    if img1.shape[1:] != img2.shape[1:]:
        raise ValueError(f"frame size mismatch: {img1.shape} vs {img2.shape}")
    pts = [(p.x, p.y) if hasattr(p, "x") else tuple(p) for p in points]
    if not pts:
        return SparseFlow([])
    xy = np.array(pts, dtype=np.float64)
    I0 = gray_array(img1)
    J0 = gray_array(img2)
    n = len(xy)

    pyr = [(I0, J0)]
    for _ in range(1, params.levels):
        I, J = pyr[-1]
        nw, nh = max(1, I.shape[1] // 2), max(1, I.shape[0] // 2)
        if nw < params.win_size or nh < params.win_size:
            break
        sm = [ndimage.gaussian_filter(a, 1.0, mode="nearest") for a in (I, J)]
        pyr.append(tuple(resize_plane(a, nw, nh) for a in sm))

    d = np.zeros((n, 2))
    alive = np.ones(n, dtype=bool)
    iters = np.zeros(n, dtype=np.int64)
    last = np.zeros(n)
    for level in range(len(pyr) - 1, -1, -1):
        I, J = pyr[level]
        sx = I.shape[1] / I0.shape[1]
        sy = I.shape[0] / I0.shape[0]
        if level < len(pyr) - 1:
            prev = pyr[level + 1][0]
            d[:, 0] *= I.shape[1] / prev.shape[1]
            d[:, 1] *= I.shape[0] / prev.shape[0]
        gx, gy = central_gradients(I)
        d, alive, iters, last = _track_level(
            I, J, gx, gy, xy[:, 0] * sx, xy[:, 1] * sy, d, params, alive, final=level == 0)

    matches = [
        Match(float(xy[i, 0]), float(xy[i, 1]),
              float(d[i, 0]) if alive[i] else 0.0,
              float(d[i, 1]) if alive[i] else 0.0,
              bool(alive[i]), int(iters[i]), float(last[i]))
        for i in range(n)
    ]
    return SparseFlow(matches)


def densify(sparse: SparseFlow, width: int, height: int) -> DenseFlow:
    """Inverse-distance weighting of all valid matches,
    ``w_i = 1 / (|p - p_i|^2 + 1)``. No valid matches gives zero flow."""
    x, y, u, v = sparse.arrays(valid_only=True)
    if x.size == 0:
        return DenseFlow.zeros(width, height)
    dx2 = (np.arange(width, dtype=np.float64)[:, None] - x[None, :]) ** 2
    dy2 = (np.arange(height, dtype=np.float64)[:, None] - y[None, :]) ** 2 + 1.0
    values = np.stack([u, v, np.ones_like(u)], axis=1)
    acc = np.empty((height, width, 3))
    rows = 32
    for r0 in range(0, height, rows):
        wgt = 1.0 / (dy2[r0:r0 + rows, None, :] + dx2[None, :, :])
        acc[r0:r0 + rows] = wgt @ values
    return DenseFlow(acc[..., 0] / acc[..., 2], acc[..., 1] / acc[..., 2])


def estimate_flow_lk(img1: Image, img2: Image, st: ShiTomasiParams | None = None,
                     lk: LKParams | None = None) -> DenseFlow:
    """Corners on ``img1``, tracked into ``img2``, densified to full resolution."""
    if img1.shape[1:] != img2.shape[1:]:
        raise ValueError(f"frame size mismatch: {img1.shape} vs {img2.shape}")
    corners = detect_corners(img1, st)
    sparse = lk_track(img1, img2, corners, lk)
    return densify(sparse, img1.width, img1.height)
