"""Dense optical flow by Farnebäck polynomial expansion.

Every pixel neighborhood is modelled as ``f(x) ~ x^T A x + b^T x + c``. A
translation ``d`` turns the linear term into ``b - 2 A d``, so the
displacement is recovered from the change of ``b`` between frames, averaged
over a window and refined coarse-to-fine.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .flowfield import DenseFlow
from .image import Image, build_pyramid, to_grayscale

DET_EPS = 1e-9


@dataclass(frozen=True)
class GFParams:
    pyr_scale: float = 0.2
    levels: int = 3
    poly_n: int = 5
    win_size: int = 15
    iterations: int = 3
    poly_sigma: float = 1.1

    def __post_init__(self):
        if not 0.0 < self.pyr_scale < 1.0:
            raise ValueError(f"pyr_scale must be in (0, 1), got {self.pyr_scale}")
        if self.poly_n < 3 or self.poly_n % 2 == 0:
            raise ValueError(f"poly_n must be odd and >= 3, got {self.poly_n}")
        if self.win_size < 3 or self.win_size % 2 == 0:
            raise ValueError(f"win_size must be odd and >= 3, got {self.win_size}")
        if self.levels < 1 or self.iterations < 1:
            raise ValueError("levels and iterations must be >= 1")
        if self.poly_sigma <= 0:
            raise ValueError("poly_sigma must be positive")


@dataclass(frozen=True)
class PolyExpansion:
    """Per-pixel quadratic model. ``a11, a12, a22`` are the entries of the
    symmetric matrix A, ``b1, b2`` the linear term (x = column, y = row)."""

    a11: np.ndarray
    a12: np.ndarray
    a22: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    c: np.ndarray

    @property
    def shape(self):
        return self.c.shape


def _expansion_basis(poly_n: int, poly_sigma: float):
    n = poly_n // 2
    t = np.arange(-n, n + 1, dtype=np.float64)
    g = np.exp(-t * t / (2.0 * poly_sigma * poly_sigma))
    # 1-D kernels g * t^p
    kernels = [g, g * t, g * t * t]
    # Gram matrix of {1, x, y, x^2, y^2, xy} under the applicability a = g(x) g(y)
    dy, dx = np.meshgrid(t, t, indexing="ij")
    weights = np.outer(g, g)
    basis = np.stack([np.ones_like(dx), dx, dy, dx * dx, dy * dy, dx * dy]).reshape(6, -1)
    gram = (basis * weights.ravel()) @ basis.T
    return kernels, np.linalg.inv(gram)


def polynomial_expansion(img: Image, poly_n: int = 5, poly_sigma: float = 1.1) -> PolyExpansion:
    """Weighted least-squares quadratic fit over each ``poly_n`` square
    neighborhood (Gaussian applicability), computed with separable correlations
    and replicate borders."""
    if img.channels != 1:
        raise ValueError("polynomial_expansion expects a single-channel image")
    if poly_n % 2 == 0 or poly_n < 3:
        raise ValueError(f"poly_n must be odd and >= 3, got {poly_n}")
    kernels, ginv = _expansion_basis(poly_n, poly_sigma)
    f = img.data[0].astype(np.float64)
    mode = "nearest"
    # horizontal moments of order 0..2, then vertical
    hx = [ndimage.correlate1d(f, k, axis=1, mode=mode) for k in kernels]

    def vert(arr, q):
        return ndimage.correlate1d(arr, kernels[q], axis=0, mode=mode)

    r = np.stack([
        vert(hx[0], 0),  # 1
        vert(hx[1], 0),  # x
        vert(hx[0], 1),  # y
        vert(hx[2], 0),  # x^2
        vert(hx[0], 2),  # y^2
        vert(hx[1], 1),  # xy
    ])
    coef = np.tensordot(ginv, r, axes=1)
    return PolyExpansion(
        a11=coef[3], a12=0.5 * coef[5], a22=coef[4],
        b1=coef[1], b2=coef[2], c=coef[0],
    )


def _box_sum(arr: np.ndarray, size: int) -> np.ndarray:
    return ndimage.uniform_filter(arr, size=size, mode="nearest") * float(size * size)


def gf_displacement(exp1: PolyExpansion, exp2: PolyExpansion, prior: DenseFlow,
                    win_size: int = 15) -> DenseFlow:
    """One displacement update given a prior flow.

    The second expansion is read at ``x + round(prior)`` (clamped to the
    frame). Pixels whose windowed normal equations are singular keep the
    prior.
    """
    if exp1.shape != exp2.shape or exp1.shape != prior.shape:
        raise ValueError(f"shape mismatch: {exp1.shape}, {exp2.shape}, {prior.shape}")
    h, w = exp1.shape
    du = prior.u.astype(np.float64)
    dv = prior.v.astype(np.float64)
    ys, xs = np.mgrid[0:h, 0:w]
    xt = np.clip(xs + np.rint(du).astype(np.int64), 0, w - 1)
    yt = np.clip(ys + np.rint(dv).astype(np.int64), 0, h - 1)
    # the offset actually applied; pairing A with the unrounded prior would
    # freeze any fractional error carried in from the coarser level
    ou = (xt - xs).astype(np.float64)
    ov = (yt - ys).astype(np.float64)

    a11 = 0.5 * (exp1.a11 + exp2.a11[yt, xt])
    a12 = 0.5 * (exp1.a12 + exp2.a12[yt, xt])
    a22 = 0.5 * (exp1.a22 + exp2.a22[yt, xt])
    db1 = -0.5 * (exp2.b1[yt, xt] - exp1.b1) + a11 * ou + a12 * ov
    db2 = -0.5 * (exp2.b2[yt, xt] - exp1.b2) + a12 * ou + a22 * ov

    # A is symmetric: A^T A and A^T db
    g11 = _box_sum(a11 * a11 + a12 * a12, win_size)
    g12 = _box_sum(a12 * (a11 + a22), win_size)
    g22 = _box_sum(a12 * a12 + a22 * a22, win_size)
    h1 = _box_sum(a11 * db1 + a12 * db2, win_size)
    h2 = _box_sum(a12 * db1 + a22 * db2, win_size)

    det = g11 * g22 - g12 * g12
    ok = det >= DET_EPS
    safe = np.where(ok, det, 1.0)
    u = np.where(ok, (g22 * h1 - g12 * h2) / safe, du)
    v = np.where(ok, (g11 * h2 - g12 * h1) / safe, dv)
    return DenseFlow(u, v)


def estimate_flow_gf(img1: Image, img2: Image, params: GFParams | None = None) -> DenseFlow:
    """Coarse-to-fine dense flow from ``img1`` to ``img2`` (grayscale internally)."""
    params = params or GFParams()
    if img1.shape[1:] != img2.shape[1:]:
        raise ValueError(f"frame size mismatch: {img1.shape} vs {img2.shape}")
    g1 = to_grayscale(img1)
    g2 = to_grayscale(img2)
    pyr1 = build_pyramid(g1, params.levels, params.pyr_scale)
    pyr2 = build_pyramid(g2, params.levels, params.pyr_scale)
    flow = None
    for level in range(len(pyr1) - 1, -1, -1):
        l1, l2 = pyr1[level], pyr2[level]
        if flow is None:
            flow = DenseFlow.zeros(l1.width, l1.height)
        else:
            flow = flow.resized(l1.width, l1.height)
        e1 = polynomial_expansion(l1, params.poly_n, params.poly_sigma)
        e2 = polynomial_expansion(l2, params.poly_n, params.poly_sigma)
        for _ in range(params.iterations):
            flow = gf_displacement(e1, e2, flow, params.win_size)
    return flow
