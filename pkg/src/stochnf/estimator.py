"""Windowed reconstruction of Brownian increments from state samples.

Over a window of length eps the Euler step gives

    x_k - x_{k-1} ~= F_{k-1} eps + L_{k-1} dW_k,   F = f + g u,  L = l,

so dW_k is recovered with the left pseudo-inverse of the column L_{k-1}.
Windows where |L| <= delta are skipped (nothing to compensate there).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .models import SystemDef

if TYPE_CHECKING:
    from .simulate import HybridTrajectory

__all__ = ["IncrementEstimate", "estimate_increment", "estimate_sequence", "DEFAULT_DELTA"]

DEFAULT_DELTA = 1e-6


@dataclass(frozen=True)
class IncrementEstimate:
    k: int
    dW_hat: float
    skipped: bool
    l_norm: float
    residual: float
    t_k: float = float("nan")

    @property
    def value(self) -> float:
        return 0.0 if self.skipped else self.dW_hat


def estimate_increment(x_prev, x_curr, u_prev: float, sys: SystemDef, eps: float,
                       delta: float = DEFAULT_DELTA, k: int = 0,
                       t_k: float = float("nan")) -> IncrementEstimate:
    """dW_hat = L^+ (x_curr - x_prev - F eps) with F, L frozen at the window start."""
    if eps <= 0:
        raise ValueError("window length must be positive")
    x_prev = np.asarray(x_prev, dtype=float)
    x_curr = np.asarray(x_curr, dtype=float)
    if not (np.all(np.isfinite(x_prev)) and np.all(np.isfinite(x_curr)) and np.isfinite(u_prev)):
        raise ValueError("non-finite state or input passed to the estimator")
    F = sys.f.value(x_prev) + sys.g.value(x_prev) * u_prev
    L = sys.l.value(x_prev)
    l_norm = float(np.linalg.norm(L))
    if l_norm <= delta:
        return IncrementEstimate(k, 0.0, True, l_norm, float("nan"), t_k)
    innov = x_curr - x_prev - F * eps
    dw = float(L @ innov / (L @ L))
    residual = float(np.linalg.norm(innov - L * dw))
    return IncrementEstimate(k, dw, False, l_norm, residual, t_k)


def estimate_sequence(traj: "HybridTrajectory", sys: SystemDef, eps: float,
                      delta: float = DEFAULT_DELTA) -> list[IncrementEstimate]:
    """One estimate per complete window of a recorded trajectory.

    Window starts use the post-jump state stored in the row; window ends use
    the pre-jump state when a jump happened there.
    """
    dt_rec = traj.dt * traj.stride
    ratio = eps / dt_rec
    m = int(round(ratio))
    if m < 1 or abs(ratio - m) > 1e-9 * max(1.0, ratio):
        raise ValueError(f"eps={eps} is not a multiple of the recorded step {dt_rec}")
    out = []
    n_rows = len(traj.t)
    K = (n_rows - 1) // m
    for k in range(1, K + 1):
        a, b = (k - 1) * m, k * m
        x_start = traj.x[a]
        step_b = b * traj.stride
        x_pre = traj.jumps.pre_state(step_b)
        x_end = traj.x[b] if x_pre is None else x_pre
        out.append(estimate_increment(x_start, x_end, float(traj.u[a]), sys, eps, delta, k,
                                      float(traj.t[b])))
    return out
