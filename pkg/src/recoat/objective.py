"""Training losses: time/speed weighted min-over-modes trajectory loss, soft
endpoint targets for the mode scores, cross entropy, and winner-take-all
gradient routing."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .nn import SHARED, partition_of

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.2
    time_weight_slope: float = 0.5
    speed_weight: tuple[float, float, float] = (4.0, -0.2, 1.0)  # offset, slope, floor
    # "seconds": t is the horizon time (step / 2 at 2 Hz); "steps": t is the step index
    time_unit: str = "seconds"
    step_dt: float = 0.5

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.time_unit not in ("seconds", "steps"):
            raise ValueError(f"unknown time unit {self.time_unit!r}")


@dataclass
class LossBreakdown:
    traj_loss: float
    score_loss: float
    total: float
    winner_index: int


def step_weight(t, v, cfg: LossConfig = LossConfig()):
    """Weight of future step ``t`` (1-based) for a target moving at ``v`` m/s."""
    t = np.asarray(t, dtype=np.float64)
    tt = t * cfg.step_dt if cfg.time_unit == "seconds" else t
    offset, slope, floor = cfg.speed_weight
    speed_factor = np.maximum(floor, offset + slope * np.asarray(v, dtype=np.float64))
    return cfg.time_weight_slope * tt * speed_factor


def step_weights(n_steps: int, v, cfg: LossConfig = LossConfig()) -> np.ndarray:
    """(..., n_steps) weights for speeds of shape (...)."""
    v = np.asarray(v, dtype=np.float64)
    return step_weight(np.arange(1, n_steps + 1), v[..., None], cfg)


def mode_losses(pred, gt, v, cfg: LossConfig = LossConfig()) -> Tensor:
    """Per-mode weighted mean displacement, shape (..., K).

    pred: (..., K, T, 2); gt: (..., T, 2); v: (...)."""
    pred = ag.as_tensor(pred)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.ndim < 3 or pred.shape[-2:] != gt.shape[-2:] or pred.shape[-1] != 2:
        raise ValueError(f"shape mismatch: pred {pred.shape}, gt {gt.shape}")
    t = gt.shape[-2]
    w = step_weights(t, v, cfg)[..., None, :]  # (..., 1, T)
    dist = ag.norm(pred - Tensor(gt[..., None, :, :]), axis=-1)  # (..., K, T)
    return ag.tsum(dist * Tensor(w), axis=-1) * (1.0 / t)


def select_winner(losses: np.ndarray) -> np.ndarray:
    """argmin over the last axis; ties go to the lowest index."""
    return np.argmin(np.asarray(losses), axis=-1)


def traj_loss(pred, gt, v, cfg: LossConfig = LossConfig()) -> tuple[float, int]:
    per_mode = mode_losses(pred, gt, v, cfg).data
    j = int(select_winner(per_mode))
    return float(per_mode[j]), j


def gt_distribution(endpoints, gt_endpoint) -> np.ndarray:
    """softmax_j(-||endpoint_j - gt_endpoint||); plain array, carries no gradient."""
    e = np.asarray(endpoints.data if isinstance(endpoints, Tensor) else endpoints, dtype=np.float64)
    g = np.asarray(gt_endpoint, dtype=np.float64)
    neg = -np.sqrt(((e - g[..., None, :]) ** 2).sum(axis=-1))
    z = np.exp(neg - neg.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def score_loss(probs, p_gt):
    """Cross entropy -sum p_gt * log(probs), probs floored at 1e-12.  Tensor in, Tensor out."""
    if isinstance(probs, Tensor):
        logp = ag.log(ag.clamp_min(probs, PROB_FLOOR))
        return -ag.tsum(logp * Tensor(np.asarray(p_gt)), axis=-1)
    probs = np.asarray(probs, dtype=np.float64)
    return -(np.asarray(p_gt) * np.log(np.maximum(probs, PROB_FLOOR))).sum(axis=-1)


@dataclass
class BatchLoss:
    total: Tensor  # scalar, mean over the batch
    traj: np.ndarray  # (B,)
    score: np.ndarray  # (B,)
    per_example: np.ndarray  # (B,)
    winners: np.ndarray  # (B,)
    # the two summands of ``total`` as separate graphs: mean score loss, lambda * mean trajectory loss
    score_term: Tensor | None = None
    traj_term: Tensor | None = None


def batch_loss(trajectories: Tensor, probs: Tensor, gt, v, cfg: LossConfig = LossConfig()) -> BatchLoss:
    """Per-example min over modes, then the mean over the batch.

    trajectories: (B, K, T, 2); probs: (B, K); gt: (B, T, 2); v: (B,).
    Only the winning mode's trajectory enters the regression term, so
    non-winning decoders receive no trajectory gradient.
    """
    gt = np.asarray(gt, dtype=np.float64)
    b = gt.shape[0]
    per_mode = mode_losses(trajectories, gt, v, cfg)
    winners = select_winner(per_mode.data)
    traj = per_mode[np.arange(b), winners]  # (B,)
    p_gt = gt_distribution(ag.detach(ag.as_tensor(trajectories)).data[:, :, -1, :], gt[:, -1, :])
    score = score_loss(probs, p_gt)  # (B,)
    per_example = score + traj * cfg.lam
    total = ag.mean(per_example)
    return BatchLoss(total, traj.data.copy(), score.data.copy(), per_example.data.copy(), winners,
                     ag.mean(score), ag.mean(traj) * cfg.lam)


def total_loss(pred, gt, v, cfg: LossConfig = LossConfig()) -> LossBreakdown:
    """Single example: ``pred`` is a PredictionSet (or anything with trajectories/probs)."""
    traj, j = traj_loss(pred.trajectories, gt, v, cfg)
    p_gt = gt_distribution(np.asarray(pred.trajectories)[:, -1, :], np.asarray(gt)[-1])
    sc = float(score_loss(pred.probs, p_gt))
    return LossBreakdown(traj, sc, sc + cfg.lam * traj, j)


_PART_RE = re.compile(r"^decoder_(\d+)\.(regression|scoring)$")


def wta_gradient_mask(gradients: Mapping[str, np.ndarray], winners, labels: Mapping[str, str] | None = None,
                      num_modes: int | None = None) -> dict[str, np.ndarray]:
    """Zero the regression-branch gradients of every decoder that did not win.

    ``winners`` is one index or the set of winners in a batch.  Scoring and
    shared gradients pass through.  Labels default to the name convention of
    ``ParamStore``; an unrecognised label raises ``ValueError``.
    """
    won = {int(w) for w in np.atleast_1d(np.asarray(winners))}
    out = {}
    for name, g in gradients.items():
        label = labels[name] if labels is not None else partition_of(name)
        if label == SHARED:
            out[name] = g
            continue
        m = _PART_RE.match(label)
        if m is None or (num_modes is not None and int(m.group(1)) >= num_modes):
            raise ValueError(f"unknown partition label {label!r} for {name!r}")
        j, part = int(m.group(1)), m.group(2)
        out[name] = g if part == "scoring" or j in won else np.zeros_like(g)
    return out


def winner_histogram(winners: Iterable[int], num_modes: int) -> np.ndarray:
    return np.bincount(np.asarray(list(winners), dtype=np.int64), minlength=num_modes)
