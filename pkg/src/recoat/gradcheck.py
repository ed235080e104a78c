"""Central finite-difference gradient checker."""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import autograd as ag
from .autograd import Tensor


# roundoff budget, in units in the last place of f, for the two evaluations of a central difference
FD_ULPS = 16


@dataclass
class GradCheckReport:
    tolerance: float
    errors: dict[str, float] = field(default_factory=dict)
    checked: dict[str, int] = field(default_factory=dict)

    @property
    def failures(self) -> list[str]:
        return [n for n, e in self.errors.items() if not e < self.tolerance]

    @property
    def ok(self) -> bool:
        return not self.failures

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def __str__(self):
        lines = [f"{n}: max rel err {e:.2e} over {self.checked[n]} entries"
                 + ("  FAIL" if n in self.failures else "") for n, e in self.errors.items()]
        return "\n".join(lines)


def analytic_gradients(fn: Callable[[dict[str, Tensor]], Tensor],
                       params: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    leaves = {n: Tensor(np.array(v, dtype=np.float64), requires_grad=True, name=n) for n, v in params.items()}
    loss = fn(leaves)
    ag.backward(loss)
    return {n: (t.grad if t.grad is not None else np.zeros_like(t.data)) for n, t in leaves.items()}


def grad_check(fn: Callable[[dict[str, Tensor]], Tensor],
               params: Mapping[str, np.ndarray],
               tolerance: float = 1e-4,
               h: float = 1e-5,
               max_entries: int | None = None,
               rng: np.random.Generator | None = None,
               analytic: Mapping[str, np.ndarray] | None = None,
               scale_floor: float = 1e-6,
               freeze_detached: bool = False) -> GradCheckReport:
    """Compare analytic and central-difference gradients of a scalar ``fn``.

    ``fn`` receives a dict of Tensors keyed like ``params`` and must be
    deterministic.  The relative error of an entry is
    ``|a - n| / max(|a|, |n|, floor)``, where the floor is ``scale_floor`` or,
    if larger, the float64 resolution of the difference quotient divided by
    ``tolerance``.  The report keeps the per-parameter
    maximum.  With ``max_entries`` only a random subset of each array is probed.
    ``analytic`` overrides the backward pass (used for negative controls).
    With ``freeze_detached`` every ``detach`` output keeps its base-point value
    while entries are perturbed, so stop-gradient paths do not leak into the
    numerical estimate.
    """
    base = {n: np.array(v, dtype=np.float64) for n, v in params.items()}
    tape = ag.DetachTape()
    frozen = (lambda: ag.replay_detached(tape)) if freeze_detached else contextlib.nullcontext

    def evaluate() -> float:
        with ag.no_grad(), frozen():
            return float(fn({n: Tensor(v, name=n) for n, v in base.items()}).data)

    if analytic is not None:
        grads = dict(analytic)
        evaluate()  # records the base point when freezing
    else:
        with frozen():
            grads = analytic_gradients(fn, base)
    rng = rng if rng is not None else np.random.default_rng(0)

    report = GradCheckReport(tolerance)
    for name, arr in base.items():
        flat = arr.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        a_flat = np.asarray(grads[name]).reshape(-1)
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            f_plus = evaluate()
            flat[i] = orig - h
            f_minus = evaluate()
            flat[i] = orig
            num = (f_plus - f_minus) / (2.0 * h)
            a = a_flat[i]
            # below the roundoff resolution of the difference quotient a relative error means nothing
            resolution = FD_ULPS * np.spacing(max(abs(f_plus), abs(f_minus))) / (2.0 * h)
            floor = max(scale_floor, resolution / tolerance)
            worst = max(worst, abs(a - num) / max(abs(a), abs(num), floor))
        report.errors[name] = worst
        report.checked[name] = int(idx.size)
    return report
