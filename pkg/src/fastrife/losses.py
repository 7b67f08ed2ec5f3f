"""Training losses: L1 reconstruction, soft ternary census, flow distillation
and their weighted sum.

The array-level functions take ``(N, C, H, W)`` batches and optionally
return the gradient with respect to the prediction; the public wrappers take
:class:`Image` / :class:`DenseFlow` values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .flowfield import DenseFlow
from .image import LUMA_WEIGHTS, Image

DISTILLATION_WEIGHT = 0.1
CENSUS_PATCH = 7
CENSUS_THRESHOLD = 0.04
HAMMING_SOFTNESS = 0.1


@dataclass(frozen=True)
class LossBreakdown:
    l_rec: float
    l_cen: float
    l_dis: float
    lam: float
    total: float

    def row(self) -> tuple:
        return (self.l_rec, self.l_cen, self.l_dis, self.total)


def _as_batch(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 2:
        return a[None, None]
    if a.ndim == 3:
        return a[None]
    return a


def _luma(batch: np.ndarray) -> np.ndarray:
    if batch.shape[1] == 1:
        return batch[:, 0]
    wr, wg, wb = LUMA_WEIGHTS
    return wr * batch[:, 0] + wg * batch[:, 1] + wb * batch[:, 2]


def l1_loss(pred, gt, grad: bool = False):
    pred, gt = _as_batch(pred), _as_batch(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    diff = pred - gt
    loss = float(np.mean(np.abs(diff)))
    if not grad:
        return loss
    return loss, np.sign(diff) / diff.size


def census_offsets(patch: int = CENSUS_PATCH):
    r = patch // 2
    return [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1) if (dy, dx) != (0, 0)]


def census_descriptor(gray: np.ndarray, patch: int = CENSUS_PATCH,
                      threshold: float = CENSUS_THRESHOLD):
    """Soft ternary census of ``gray`` (N, H, W) on the interior region.

    Returns ``(t, diff)`` with shape (K, N, H - 2r, W - 2r): one soft sign
    ``diff / sqrt(threshold^2 + diff^2)`` per neighbor offset.
    """
    r = patch // 2
    n, h, w = gray.shape
    if h <= 2 * r or w <= 2 * r:
        raise ValueError(f"image {w}x{h} too small for a {patch}x{patch} census")
    center = gray[:, r:h - r, r:w - r]
    diffs = np.stack([gray[:, r + dy:h - r + dy, r + dx:w - r + dx] - center
                      for dy, dx in census_offsets(patch)])
    return diffs / np.sqrt(threshold * threshold + diffs * diffs), diffs


def census_loss_array(pred, gt, grad: bool = False, patch: int = CENSUS_PATCH,
                      threshold: float = CENSUS_THRESHOLD):
    """Mean soft Hamming distance between census descriptors of the luma planes."""
    pred, gt = _as_batch(pred), _as_batch(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    gp = _luma(pred)
    tp, dp = census_descriptor(gp, patch, threshold)
    tg, _ = census_descriptor(_luma(gt), patch, threshold)
    delta = tp - tg
    sq = delta * delta
    ham = sq / (HAMMING_SOFTNESS + sq)
    loss = float(ham.mean())
    if not grad:
        return loss
    # d ham / d t_pred, then through the soft sign
    dt = (2.0 * delta * HAMMING_SOFTNESS / (HAMMING_SOFTNESS + sq) ** 2) / ham.size
    tau2 = threshold * threshold
    ddiff = dt * tau2 / (tau2 + dp * dp) ** 1.5
    r = patch // 2
    n, h, w = gp.shape
    dgray = np.zeros_like(gp)
    dgray[:, r:h - r, r:w - r] -= ddiff.sum(axis=0)
    for k, (dy, dx) in enumerate(census_offsets(patch)):
        dgray[:, r + dy:h - r + dy, r + dx:w - r + dx] += ddiff[k]
    if pred.shape[1] == 1:
        dpred = dgray[:, None]
    else:
        dpred = np.stack([wt * dgray for wt in LUMA_WEIGHTS], axis=1)
    return loss, dpred


def epe_loss(u, v, lu, lv) -> float:
    return float(np.mean(np.hypot(np.asarray(u, np.float64) - lu, np.asarray(v, np.float64) - lv)))


# --------------------------------------------------------------------------
# public wrappers


def _check_same(a: Image, b: Image):
    if a.shape != b.shape:
        raise ValueError(f"image shape mismatch {a.shape} vs {b.shape}")


def reconstruction_loss(pred: Image, gt: Image) -> float:
    _check_same(pred, gt)
    return l1_loss(pred.data, gt.data)


def census_loss(pred: Image, gt: Image) -> float:
    _check_same(pred, gt)
    return census_loss_array(pred.data, gt.data)


def distillation_loss(flow: DenseFlow, label: DenseFlow) -> float:
    if flow.shape != label.shape:
        raise ValueError(f"flow shape mismatch {flow.shape} vs {label.shape}")
    return epe_loss(flow.u, flow.v, label.u, label.v)


def combine(l_rec: float, l_cen: float, l_dis: float,
            lam: float = DISTILLATION_WEIGHT) -> LossBreakdown:
    return LossBreakdown(l_rec, l_cen, l_dis, lam, l_rec + l_cen + lam * l_dis)


def total_loss(pred: Image, gt: Image, flow: DenseFlow | None = None,
               label: DenseFlow | None = None, lam: float = DISTILLATION_WEIGHT) -> LossBreakdown:
    """Reconstruction + census + ``lam`` x distillation. Without a label the
    distillation term is zero."""
    l_rec = reconstruction_loss(pred, gt)
    l_cen = census_loss(pred, gt)
    l_dis = distillation_loss(flow, label) if (flow is not None and label is not None) else 0.0
    return combine(l_rec, l_cen, l_dis, lam)
