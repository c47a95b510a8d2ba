"""Linearising and tracking controllers in normal-form coordinates.

Three families share the outer loop v (pole placement on the integrator chain):

* idealistic:  u = (-c_d - c_s xi + v) / b   -- needs the realised noise
* zero_noise:  u = (-c_d + v) / b
* hybrid:      zero_noise flow plus a jump u*(k) at every t_k = k eps,
               sized from the estimated Brownian increment of the window.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimator import DEFAULT_DELTA, IncrementEstimate, estimate_increment
from .models import NormalFormDef, ReferenceSignal, SystemDef

__all__ = [
    "SingularControlError",
    "PolePlacement",
    "ControllerSpec",
    "place_poles",
    "tracking_v",
    "idealistic_control",
    "zero_noise_control",
    "hybrid_jump",
    "bind",
    "BoundController",
    "FAMILIES",
    "TASKS",
]

B_THRESHOLD = 1e-9
FAMILIES = ("idealistic", "zero_noise", "hybrid", "open_loop")  # open_loop: u = v
TASKS = ("linearise", "track", "stabilise")


class SingularControlError(ZeroDivisionError):
    pass


@dataclass(frozen=True)
class PolePlacement:
    """Monic polynomial s^r + d_{r-1} s^{r-1} + ... + d_0 and its roots."""

    coefficients: tuple[float, ...]  # d_0 ... d_{r-1}
    roots: tuple[complex, ...]

    @property
    def r(self) -> int:
        return len(self.coefficients)

    @property
    def stable(self) -> bool:
        return all(np.real(p) < 0 for p in self.roots)

    def polynomial(self) -> np.ndarray:
        """Coefficients highest power first, as numpy.polyval expects."""
        return np.concatenate([[1.0], self.coefficients[::-1]])

    def companion(self) -> np.ndarray:
        r = self.r
        A = np.eye(r, k=1)
        A[-1, :] = -np.asarray(self.coefficients)
        return A

    def check(self, tol: float = 1e-9) -> bool:
        p = self.polynomial()
        scale = np.sum(np.abs(p))
        return all(abs(np.polyval(p, rho)) <= tol * scale * max(1.0, abs(rho)) ** self.r
                   for rho in self.roots)


def place_poles(roots) -> PolePlacement:
    """Expand prod (s - rho_i) into d_0 ... d_{r-1}."""
    roots = [complex(rho) for rho in np.atleast_1d(roots)]
    if not roots:
        raise ValueError("at least one root required")
    for rho in roots:
        if rho.real >= 0:
            raise ValueError(f"root {rho} does not have negative real part")
    pending = [rho for rho in roots if rho.imag != 0]
    for rho in pending:
        if not any(abs(other - rho.conjugate()) < 1e-12 for other in pending):
            raise ValueError(f"complex root {rho} has no conjugate partner")
    coeffs = np.real_if_close(np.poly(roots), tol=1000)
    if np.iscomplexobj(coeffs):
        raise ValueError("roots do not give a real polynomial")
    d = tuple(float(c) for c in coeffs[1:][::-1])
    pp = PolePlacement(d, tuple(roots))
    if not pp.check():
        raise ArithmeticError("polynomial reconstruction failed")
    return pp


def tracking_v(zeta, ref_derivs, poles: PolePlacement) -> float:
    """y_R^(r) - sum_i d_{i-1} (zeta_i - y_R^(i-1))."""
    zeta = np.asarray(zeta, dtype=float)
    ref = np.asarray(ref_derivs, dtype=float)
    r = poles.r
    if zeta.size != r or ref.size < r + 1:
        raise ValueError(f"need {r} zeta entries and {r + 1} reference derivatives")
    d = np.asarray(poles.coefficients)
    return float(ref[r] - np.dot(d, zeta - ref[:r]))


def _b(nf: NormalFormDef, z) -> float:
    b = nf.b.value(z)
    if not abs(b) > B_THRESHOLD:
        raise SingularControlError(f"|b(z)| = {abs(b):.3e} below {B_THRESHOLD}")
    return b


def idealistic_control(nf: NormalFormDef, z, xi: float, v: float) -> float:
    return (-nf.c_d.value(z) - nf.c_s.value(z) * xi + v) / _b(nf, z)


def zero_noise_control(nf: NormalFormDef, z, v: float) -> float:
    return (-nf.c_d.value(z) + v) / _b(nf, z)


def hybrid_jump(nf: NormalFormDef, z_window_start, z_window_end, dW_hat) -> float:
    """u*(k) = -c_s(z at window start, post-jump) dW_hat / b(z at window end, pre-jump)."""
    if isinstance(dW_hat, IncrementEstimate):
        dW_hat = dW_hat.value
    if dW_hat == 0.0:
        return 0.0
    return -nf.c_s.value(z_window_start) * dW_hat / _b(nf, z_window_end)


@dataclass(frozen=True)
class ControllerSpec:
    family: str
    task: str = "track"
    poles: PolePlacement | None = None
    v: float = 0.0  # constant outer input for the linearise task
    epsilon: float | None = None
    delta_threshold: float = DEFAULT_DELTA

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown controller family {self.family!r}")
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.family == "open_loop" and self.task != "linearise":
            raise ValueError("open-loop input is a constant; use task='linearise'")
        if self.task != "linearise" and self.poles is None:
            raise ValueError("tracking/stabilisation needs pole placement coefficients")
        if self.family == "hybrid" and not (self.epsilon and self.epsilon > 0):
            raise ValueError("hybrid controller needs a positive compensation period epsilon")

    def eps_steps(self, dt: float) -> int:
        ratio = self.epsilon / dt
        m = int(round(ratio))
        if m < 1 or abs(ratio - m) > 1e-9 * ratio:
            raise ValueError(f"epsilon={self.epsilon} is not an integer multiple of dt={dt}")
        if m < 2:
            raise ValueError("the compensation period must exceed the integration step")
        return m


class BoundController:
    """Per-run controller state.  ``needs_noise`` is only honoured by the simulator."""

    needs_noise = False
    has_jumps = False

    def __init__(self, spec: ControllerSpec, nf: NormalFormDef,
                 reference: ReferenceSignal | None = None):
        self.spec = spec
        self.nf = nf
        self.reference = reference
        if spec.task == "track" and reference is None:
            raise ValueError("track task requires a reference signal")
        if spec.task != "linearise" and spec.poles.r != nf.r:
            raise ValueError(f"{spec.poles.r} pole coefficients for relative degree {nf.r}")

    def ref(self, t: float) -> np.ndarray:
        r = self.nf.r
        if self.spec.task == "track":
            return self.reference(t)[: r + 1]
        return np.zeros(r + 1)

    def v(self, t: float, z) -> float:
        if self.spec.task == "linearise":
            return self.spec.v
        return tracking_v(np.asarray(z)[: self.nf.r], self.ref(t), self.spec.poles)

    def flow(self, t: float, z, xi: float | None = None) -> float:
        raise NotImplementedError


class IdealisticController(BoundController):
    needs_noise = True

    def flow(self, t, z, xi=None):
        if xi is None:
            raise ValueError("idealistic control needs the realised noise")
        return idealistic_control(self.nf, z, xi, self.v(t, z))


class ZeroNoiseController(BoundController):
    def flow(self, t, z, xi=None):
        return zero_noise_control(self.nf, z, self.v(t, z))


class OpenLoopController(BoundController):
    def flow(self, t, z, xi=None):
        return self.spec.v


class HybridController(ZeroNoiseController):
    has_jumps = True

    def __init__(self, spec, nf, reference, sys: SystemDef):
        super().__init__(spec, nf, reference)
        self.sys = sys
        self.total_compensation = 0.0
        self.estimates: list[IncrementEstimate] = []

    def jump(self, k: int, t_k: float, z_start, z_end, x_start, x_end,
             u_start: float) -> tuple[float, float, IncrementEstimate]:
        """Return (u*, change of z_r, estimate) for the window ending at t_k."""
        est = estimate_increment(x_start, x_end, u_start, self.sys, self.spec.epsilon,
                                 self.spec.delta_threshold, k, t_k)
        self.estimates.append(est)
        if est.skipped:
            return 0.0, 0.0, est
        u_star = hybrid_jump(self.nf, z_start, z_end, est.dW_hat)
        dz = _b(self.nf, z_end) * u_star
        self.total_compensation += dz
        return u_star, dz, est


def bind(spec: ControllerSpec, nf: NormalFormDef, reference: ReferenceSignal | None = None,
         sys: SystemDef | None = None, dt: float | None = None) -> BoundController:
    """Instantiate a controller for one simulation run."""
    if spec.family == "hybrid":
        if sys is None:
            raise ValueError("hybrid controller estimates the noise in x coordinates; pass sys")
        if dt is not None:
            spec.eps_steps(dt)
        return HybridController(spec, nf, reference, sys)
    if spec.family == "open_loop":
        return OpenLoopController(spec, nf, reference)
    if spec.family == "idealistic":
        return IdealisticController(spec, nf, reference)
    return ZeroNoiseController(spec, nf, reference)


def tracking_error_oracle(poles: PolePlacement, theta0, times) -> np.ndarray:
    """theta(t) = expm(A t) theta0 for the companion matrix A."""
    from scipy.linalg import expm

    A = poles.companion()
    theta0 = np.asarray(theta0, dtype=float)
    return np.array([expm(A * t) @ theta0 for t in np.atleast_1d(times)])

