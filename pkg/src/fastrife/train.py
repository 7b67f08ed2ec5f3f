"""Desk-scale training of the learned fusion stage.

Flows are estimated once per triplet and held fixed; only the context
extractor and fusion head learn. Each step runs the full dataset as one
batch (triplets of equal size are stacked), so a run is a deterministic
function of the seed.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np

from .fusion import FusionConfig, FusionNet, _net_input
from .losses import DISTILLATION_WEIGHT, LossBreakdown, census_loss_array, combine
from .losses import distillation_loss, l1_loss
from .nn import FusionWeights, adamw_step
from .pipeline import PipelineConfig, bidirectional_flow
from .warp import warp_pair

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Raised when a loss turns non-finite; carries the history so far."""

    def __init__(self, message: str, history: list):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class TrainParams:
    steps: int = 500
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    lam: float = DISTILLATION_WEIGHT
    seed: int = 0
    timestep: float = 0.5

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.lr < 0 or self.weight_decay < 0:
            raise ValueError("lr and weight_decay must be >= 0")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("betas must lie in [0, 1)")
        if not 0.0 < self.timestep < 1.0:
            raise ValueError("timestep must lie in (0, 1)")


@dataclass
class _Group:
    """Triplets of one size stacked into a batch, with everything that does
    not depend on the weights precomputed."""

    frame0: np.ndarray
    frame1: np.ndarray
    gt: np.ndarray
    w0: np.ndarray
    w1: np.ndarray
    ft0: np.ndarray
    ft1: np.ndarray
    warps0: list
    warps1: list
    l_dis: float
    weight: float


def _prepare(triplets, net: FusionNet, pipeline: PipelineConfig, t: float, dtype,
             flows=None, labels=None) -> list:
    by_size: dict = {}
    for i, tri in enumerate(triplets):
        f01, f10 = flows[i] if flows is not None else bidirectional_flow(tri.frame0, tri.frame1, pipeline)
        l_dis = 0.0
        if labels is not None and labels[i] is not None:
            l01, l10 = labels[i]
            l_dis = 0.5 * (distillation_loss(f01, l01) + distillation_loss(f10, l10))
        pair = warp_pair(tri.frame0, tri.frame1, f01, f10, t)
        by_size.setdefault(tri.frame0.shape[1:], []).append((tri, pair, l_dis))
    n = len(triplets)
    groups = []
    for (h, w), items in by_size.items():
        stack = lambda imgs: np.concatenate([_net_input(im) for im in imgs]).astype(dtype)  # noqa: E731
        groups.append(_Group(
            frame0=stack([it[0].frame0 for it in items]),
            frame1=stack([it[0].frame1 for it in items]),
            gt=stack([it[0].gt for it in items]),
            w0=stack([it[1].warped0 for it in items]),
            w1=stack([it[1].warped1 for it in items]),
            ft0=np.stack([it[1].flow_t0.stacked() for it in items]).astype(dtype),
            ft1=np.stack([it[1].flow_t1.stacked() for it in items]).astype(dtype),
            warps0=net.stage_warps([it[1].flow_t0 for it in items], h, w),
            warps1=net.stage_warps([it[1].flow_t1 for it in items], h, w),
            l_dis=float(np.mean([it[2] for it in items])),
            weight=len(items) / n,
        ))
    return groups


def _step_losses(net, weights, groups, lam, backward: bool) -> LossBreakdown:
    l_rec = l_cen = l_dis = 0.0
    for g in groups:
        out, cache = net.forward(weights, g.frame0, g.frame1, g.w0, g.w1, g.ft0, g.ft1,
                                 g.warps0, g.warps1)
        rec, drec = l1_loss(out, g.gt, grad=True)
        cen, dcen = census_loss_array(out, g.gt, grad=True)
        l_rec += g.weight * rec
        l_cen += g.weight * cen
        l_dis += g.weight * g.l_dis
        if backward:
            dout = (g.weight * (drec + dcen)).astype(out.dtype)
            net.backward(weights, dout, cache, g.warps0, g.warps1)
    return combine(l_rec, l_cen, l_dis, lam)


def train_fusion(triplets, config: FusionConfig | None = None, params: TrainParams | None = None,
                 pipeline: PipelineConfig | None = None, weights: FusionWeights | None = None,
                 flows=None, labels=None, dtype=np.float32):
    """Fit the learned fusion stage to ``triplets`` (objects with ``frame0``,
    ``gt``, ``frame1`` images).

    Parameters
    ----------
    config : FusionConfig
        Architecture; the mode is ignored (training is always learned fusion).
    params : TrainParams
        Optimizer and loop settings. The seed fixes the initialization.
    pipeline : PipelineConfig
        Flow estimator used once per triplet.
    weights : FusionWeights, optional
        Starting point; fresh initialization when omitted.
    flows, labels : list of (f01, f10) pairs, optional
        Precomputed flows replacing estimation, and reference flows for the
        distillation term. The estimated flows receive no gradient, so the
        distillation term only enters the logged total.

    Returns
    -------
    (FusionWeights, list of LossBreakdown)
        History entry ``k`` holds the losses evaluated before update ``k + 1``;
        a final entry after the last update is appended, so the list has
        ``steps + 1`` entries.
    """
    triplets = list(triplets)
    if not triplets:
        raise ValueError("training needs at least one triplet")
    config = config or FusionConfig("learned")
    params = params or TrainParams()
    pipeline = pipeline or PipelineConfig()
    net = FusionNet(config)
    if weights is None:
        weights = net.init(params.seed, dtype)
    dtype = next(iter(weights.params.values())).dtype
    for seq, what in ((flows, "flows"), (labels, "labels")):
        if seq is not None and len(seq) != len(triplets):
            raise ValueError(f"{what} must have one entry per triplet")
    for tri in triplets:
        if not (tri.frame0.shape == tri.gt.shape == tri.frame1.shape):
            raise ValueError("frames of a triplet differ in size")
    groups = _prepare(triplets, net, pipeline, params.timestep, dtype, flows, labels)

    history: list = []
    for step in range(params.steps + 1):
        weights.zero_grad()
        last = step == params.steps
        losses = _step_losses(net, weights, groups, params.lam, backward=not last)
        if not all(math.isfinite(x) for x in losses.row()):
            tail = ", ".join(f"step {k}: total {h.total:.6g}" for k, h in
                             list(enumerate(history))[-3:]) or "none"
            raise TrainingDiverged(
                f"non-finite loss at step {step} (l_rec={losses.l_rec}, l_cen={losses.l_cen}); "
                f"last finite: {tail}", history)
        history.append(losses)
        if step % 50 == 0 or last:
            log.info("step %d l_rec %.6f l_cen %.6f total %.6f", step, losses.l_rec,
                     losses.l_cen, losses.total)
        if last:
            break
        adamw_step(weights, params.lr, params.beta1, params.beta2, params.eps, params.weight_decay)
    weights.zero_grad()
    return weights, history


def write_history_csv(path, history) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "l_rec", "l_cen", "l_dis", "total"])
        for k, h in enumerate(history):
            w.writerow([k, *(repr(float(x)) for x in h.row())])


def read_history_csv(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k == "step" else float(v)) for k, v in r.items()} for r in rows]

