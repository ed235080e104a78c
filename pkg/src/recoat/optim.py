"""Nadam (Adam with Nesterov momentum) over named float64 arrays."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .checkpoint import to_float32_grid


@dataclass(frozen=True)
class NadamConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("betas must lie in [0, 1)")
        if not self.eps > 0:
            raise ValueError("eps must be positive")


@dataclass
class NadamState:
    """First/second moments per parameter name plus the number of steps taken."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray]) -> "NadamState":
        return cls({n: np.zeros_like(a, dtype=np.float64) for n, a in params.items()},
                   {n: np.zeros_like(a, dtype=np.float64) for n, a in params.items()}, 0)

    def copy(self) -> "NadamState":
        return NadamState({n: a.copy() for n, a in self.m.items()},
                          {n: a.copy() for n, a in self.v.items()}, self.step)


def nadam_update(theta, g, m, v, t: int, lr: float, cfg: NadamConfig = NadamConfig()):
    """One Nadam update for step number ``t`` (1-based).  Returns (theta, m, v)."""
    b1, b2 = cfg.beta1, cfg.beta2
    m = b1 * m + (1.0 - b1) * g
    v = b2 * v + (1.0 - b2) * g * g
    # Nesterov look-ahead: next step's momentum plus the bias-corrected current gradient
    m_hat = b1 * m / (1.0 - b1 ** (t + 1)) + (1.0 - b1) * g / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    return theta - lr * m_hat / (np.sqrt(v_hat) + cfg.eps), m, v


def optimizer_step(params, grads: Mapping[str, np.ndarray], state: NadamState, lr: float,
                   cfg: NadamConfig = NadamConfig(), float32_grid: bool = False) -> NadamState:
    """Update ``params`` (a ParamStore or dict of arrays) in place; returns the new state.

    Parameters without an entry in ``grads`` see a zero gradient.  With
    ``float32_grid`` the parameters and moments are rounded to float32 values
    after the update, which makes a float32 checkpoint an exact snapshot.
    """
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    unknown = set(grads) - set(params)
    if unknown:
        raise KeyError(f"gradients for unknown parameters: {sorted(unknown)}")
    t = state.step + 1
    new = NadamState({}, {}, t)
    for name in list(params):
        theta = params[name]
        g = grads.get(name)
        g = np.zeros_like(theta) if g is None else np.asarray(g, dtype=np.float64)
        if g.shape != theta.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {theta.shape}")
        m = state.m.get(name, np.zeros_like(theta))
        v = state.v.get(name, np.zeros_like(theta))
        if m.shape != theta.shape or v.shape != theta.shape:
            raise ValueError(f"optimizer moments for {name} do not match the parameter shape")
        theta, m, v = nadam_update(theta, g, m, v, t, lr, cfg)
        if float32_grid:
            theta, m, v = to_float32_grid(theta), to_float32_grid(m), to_float32_grid(v)
        params[name] = theta
        new.m[name], new.v[name] = m, v
    return new


def clip_by_global_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if total <= max_norm or total == 0.0:
        return dict(grads)
    scale = max_norm / total
    return {n: g * scale for n, g in grads.items()}
