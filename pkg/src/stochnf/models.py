"""System definitions, the built-in three-state example, and reference signals."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.stats import qmc

from . import autodiff as ad
from .autodiff import ScalarField, VectorField

__all__ = [
    "UnsupportedSystemError",
    "DomainError",
    "NewtonError",
    "SystemDef",
    "NormalFormDef",
    "ZeroDynamics",
    "ReferenceSignal",
    "CosineReference",
    "PhiMap",
    "sample_ball",
    "newton_inverse",
    "example_system",
    "example_phi",
    "example_normal_form",
    "example_zero_dynamics",
    "cosine_reference",
    "integrator_chain",
]


class UnsupportedSystemError(ValueError):
    """The control-diffusion field m is not identically zero.

    With m != 0 the r-th output derivative becomes quadratic in u and the
    compensating controller is no longer affine in the noise; only m == 0
    systems are handled.
    """


class DomainError(ValueError):
    pass


class NewtonError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


def sample_ball(center: Sequence[float], radius: float, count: int, seed: int = 0) -> np.ndarray:
    """Quasi-random points (scrambled Halton) in the sup-norm ball around ``center``."""
    center = np.asarray(center, dtype=float)
    u = qmc.Halton(d=center.size, scramble=True, seed=seed).random(count)
    return center + radius * (2.0 * u - 1.0)


@dataclass(frozen=True)
class SystemDef:
    """dx = (f + g u) dt + (l + m u) dW,  y = h(x)."""

    n: int
    f: VectorField
    g: VectorField
    l: VectorField
    h: ScalarField
    m: VectorField | None = None
    name: str = "system"
    working_radius: float = 0.5
    # returns a diagnostic string when x has left the region where the model is valid
    guard: Callable[[np.ndarray], str | None] | None = None

    def __post_init__(self):
        for label, fld in (("f", self.f), ("g", self.g), ("l", self.l), ("h", self.h)):
            if fld.n != self.n:
                raise ValueError(f"field {label} has dimension {fld.n}, system has {self.n}")
        if self.m is not None and self.m.n != self.n:
            raise ValueError("field m has wrong dimension")

    @property
    def m_field(self) -> VectorField:
        return self.m if self.m is not None else VectorField.zero(self.n)

    def m_is_zero(self, center=None, radius: float | None = None, samples: int = 100,
                  tol: float = 1e-12) -> bool:
        if self.m is None:
            return True
        center = np.zeros(self.n) if center is None else center
        radius = self.working_radius if radius is None else radius
        for x in sample_ball(center, radius, samples):
            if np.max(np.abs(self.m.value(x))) > tol:
                return False
        return True

    def require_m_zero(self, center=None, radius: float | None = None) -> None:
        if not self.m_is_zero(center, radius):
            raise UnsupportedSystemError(
                f"{self.name}: control enters the diffusion (m != 0); the quadratic-in-u normal "
                "form and its controllers are not supported")

    def output(self, x) -> float:
        return self.h.value(x)

    def scaled_output(self, kappa: float) -> "SystemDef":
        return SystemDef(self.n, self.f, self.g, self.l, kappa * self.h, self.m,
                         f"{self.name}*{kappa}", self.working_radius, self.guard)


def newton_inverse(F: VectorField, z, x0, tol: float = 1e-12, max_iter: int = 50) -> np.ndarray:
    """Solve F(x) = z by damped Newton iteration started at ``x0``."""
    z = np.asarray(z, dtype=float)
    x = np.array(x0, dtype=float)
    r = F.value(x) - z
    res = float(np.max(np.abs(r)))
    for _ in range(max_iter):
        if res <= tol:
            return x
        step = np.linalg.solve(ad.jacobian(F, x), r)
        lam = 1.0
        while True:
            trial = x - lam * step
            r_trial = F.value(trial) - z
            res_trial = float(np.max(np.abs(r_trial)))
            if np.isfinite(res_trial) and (res_trial < res or lam < 1e-4):
                break
            lam *= 0.5
        x, r, res = trial, r_trial, res_trial
    if res <= tol:
        return x
    raise NewtonError("Newton inversion did not converge", res)


def _solve_dual(A, b):
    """Gaussian elimination with partial pivoting on primal magnitudes; dual-transparent."""
    n = len(b)
    A = [list(row) for row in A]
    b = list(b)
    for col in range(n):
        piv = max(range(col, n), key=lambda i: abs(ad.value_of(A[i][col])))
        if ad.value_of(A[piv][col]) == 0:
            raise np.linalg.LinAlgError("singular Jacobian")
        A[col], A[piv] = A[piv], A[col]
        b[col], b[piv] = b[piv], b[col]
        for i in range(col + 1, n):
            w = A[i][col] / A[col][col]
            for j in range(col, n):
                A[i][j] = A[i][j] - w * A[col][j]
            b[i] = b[i] - w * b[col]
    x = [0.0] * n
    for i in reversed(range(n)):
        acc = b[i]
        for j in range(i + 1, n):
            acc = acc - A[i][j] * x[j]
        x[i] = acc / A[i][i]
    return x


def differentiable_inverse(F: VectorField, z, x0, dual_steps: int = 3):
    """Newton inverse that propagates derivatives of ``z`` (implicit function theorem).

    The primal solution comes from :func:`newton_inverse`; ``dual_steps``
    further Newton steps in dual arithmetic make derivatives of order up to
    2**dual_steps - 1 exact.
    """
    if not any(isinstance(v, ad.Dual) for v in z):
        return newton_inverse(F, z, x0)
    x = list(newton_inverse(F, [ad.value_of(v) for v in z], x0))
    for _ in range(dual_steps):
        J = ad.jac(F.fn, x)
        r = [fi - zi for fi, zi in zip(F.fn(x), z)]
        dx = _solve_dual(J, r)
        x = [xi - di for xi, di in zip(x, dx)]
    return x


@dataclass(frozen=True)
class PhiMap:
    """Coordinate map z = phi(x) with a numerical inverse."""

    forward: VectorField
    center: np.ndarray
    closed_inverse: Callable[[np.ndarray], np.ndarray] | None = None

    def __call__(self, x) -> np.ndarray:
        return self.forward.value(x)

    def inverse(self, z, x0=None):
        return differentiable_inverse(self.forward, z, self.center if x0 is None else x0)


@dataclass(frozen=True)
class NormalFormDef:
    """zeta_i' = zeta_{i+1};  z_r' = c_d + c_s xi + b u;  eta' = p_d + p_s xi.

    All coefficient fields are functions of the full transformed state z.
    """

    r: int
    n: int
    c_d: ScalarField
    c_s: ScalarField
    b: ScalarField
    p_d: VectorField
    p_s: VectorField
    to_x: Callable[[np.ndarray], np.ndarray] | None = None
    to_z: Callable[[np.ndarray], np.ndarray] | None = None
    name: str = "normal form"

    def __post_init__(self):
        if not 1 <= self.r <= self.n:
            raise ValueError("relative degree must satisfy 1 <= r <= n")
        if self.p_d.out_dim != self.n - self.r or self.p_s.out_dim != self.n - self.r:
            raise ValueError("internal dynamics must have dimension n - r")

    def check_b(self, center=None, radius: float = 0.2, samples: int = 100,
                threshold: float = 1e-9) -> bool:
        center = np.zeros(self.n) if center is None else center
        return all(abs(self.b.value(z)) > threshold for z in sample_ball(center, radius, samples))

    def drift(self, z, u: float) -> np.ndarray:
        """Deterministic part of dz/dt at z under input u."""
        z = np.asarray(z, dtype=float)
        out = np.empty(self.n)
        out[: self.r - 1] = z[1: self.r]
        out[self.r - 1] = self.c_d.value(z) + self.b.value(z) * u
        out[self.r:] = self.p_d.value(z)
        return out

    def diffusion(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        out = np.zeros(self.n)
        out[self.r - 1] = self.c_s.value(z)
        out[self.r:] = self.p_s.value(z)
        return out


@dataclass(frozen=True)
class ZeroDynamics:
    """eta' = drift(eta) + diffusion(eta) xi, scalar or vector eta."""

    drift: Callable
    diffusion: Callable
    dim: int = 1
    domain_radius: float = math.inf
    vectorized: bool = False

    def linearization(self, h: float = 1e-6) -> tuple[float, float]:
        """Slopes (A, F) of drift and diffusion at eta = 0 (scalar case)."""
        if self.dim != 1:
            raise ValueError("linearization is provided for scalar zero dynamics only")
        a = (self.drift(h) - self.drift(-h)) / (2 * h)
        f = (self.diffusion(h) - self.diffusion(-h)) / (2 * h)
        return float(a), float(f)


@dataclass(frozen=True)
class ReferenceSignal:
    """y_R and its first r derivatives, ``fn(t) -> array of length r + 1``."""

    r: int
    fn: Callable[[float], np.ndarray]

    def __call__(self, t: float) -> np.ndarray:
        return np.asarray(self.fn(t), dtype=float)

    def check_consistency(self, times: Sequence[float], step: float = 1e-5,
                          rtol: float = 1e-4) -> bool:
        for t in times:
            lo, hi = self(t - step), self(t + step)
            mid = self(t)
            for k in range(self.r):
                fd = (hi[k] - lo[k]) / (2 * step)
                if abs(fd - mid[k + 1]) > rtol * max(1.0, abs(mid[k + 1])):
                    return False
        return True


@dataclass(frozen=True)
class CosineReference(ReferenceSignal):
    beta: float = 0.0
    alpha: float = 0.0
    omega: float = 1.0


def cosine_reference(beta: float, alpha: float, omega: float, r: int) -> CosineReference:
    """y_R(t) = beta + alpha cos(omega t) with analytic derivatives."""
    if r < 1:
        raise ValueError("reference must be differentiable at least once")

    def fn(t: float) -> np.ndarray:
        k = np.arange(r + 1)
        out = alpha * omega ** k * np.cos(omega * t + k * np.pi / 2)
        out[0] += beta
        return out

    return CosineReference(r, fn, beta=beta, alpha=alpha, omega=omega)


# ---------------------------------------------------------------------------
# built-in example (three states, relative degree two at the origin)


def _example_fields(printed_diffusion: bool):
    sin, cos, tan, exp = ad.sin, ad.cos, ad.tan, ad.exp

    def f(x):
        s2, c2 = sin(x[1]), cos(x[1])
        return [s2 * (1 + x[0]),
                -2 * tan(x[1]),
                2 * x[2] + x[0] * s2 - 2 * s2 * x[0] ** 2 / c2 ** 2]

    def g(x):
        e = exp(x[2])
        return [e, 0.0, e]

    if printed_diffusion:
        def l(x):
            return [x[0], -2 * x[0] / cos(x[1]), x[0] ** 2]
    else:
        def l(x):
            return [x[0], -2 * x[0] / cos(x[1]), -x[0]]

    def h(x):
        return x[0] + sin(x[1]) - x[2]

    return f, g, l, h


def example_guard(x) -> str | None:
    if abs(x[1]) > 1.4:
        return f"|x2| = {abs(x[1]):.3f} > 1.4 (tan/cos singularity at pi/2)"
    return None


def example_system(printed_diffusion: bool = False) -> SystemDef:
    """The three-state benchmark with output y = x1 + sin x2 - x3.

    The third diffusion entry is ``-x1``: it is the only choice for which the
    output derivative is noise-free and the z2/z3 noise gains equal 4 x1 and
    2 x1.  ``printed_diffusion=True`` uses ``x1**2`` instead, for which the
    stochastic relative degree is undefined at the origin.
    """
    f, g, l, h = _example_fields(printed_diffusion)
    return SystemDef(
        n=3,
        f=VectorField(3, f, name="f"),
        g=VectorField(3, g, name="g"),
        l=VectorField(3, l, name="l"),
        h=ScalarField(3, h, name="h"),
        name="example-printed-l" if printed_diffusion else "example",
        working_radius=0.5,
        guard=example_guard,
    )


def _phi(x):
    s2 = ad.sin(x[1])
    return [x[0] + s2 - x[2], -s2 - 2 * x[2], x[0] - x[2]]


def example_phi_inverse_closed(z) -> np.ndarray:
    """Exact inverse of the example map (valid for |z1 - z3| < 1)."""
    z1, z2, z3 = (float(v) for v in z)
    s2 = z1 - z3
    if abs(s2) >= 1.0:
        raise DomainError(f"z1 - z3 = {s2} outside (-1, 1)")
    x3 = -(z2 + s2) / 2.0
    return np.array([z3 + x3, math.asin(s2), x3])


def example_phi() -> PhiMap:
    """z = (x1 + s2 - x3, -s2 - 2 x3, x1 - x3) with a Newton inverse."""
    return PhiMap(VectorField(3, _phi, name="phi"), np.zeros(3), example_phi_inverse_closed)


def _x_of_z(z):
    """Closed inverse written with the differentiable elementary functions."""
    s2 = z[0] - z[2]
    if not abs(ad.value_of(s2)) < 1.0:
        raise DomainError(f"z1 - z3 = {ad.value_of(s2)} outside (-1, 1)")
    x3 = -(z[1] + s2) / 2
    return [z[2] + x3, ad.asin(s2), x3]


def example_c_d_x(x):
    s2, c2 = ad.sin(x[1]), ad.cos(x[1])
    return 2 * s2 - 4 * x[2] - 2 * x[0] * s2 + 6 * x[0] ** 2 * s2 / c2 ** 2


def example_c_s_x(x):
    return 4.0 * x[0]


def example_b_x(x):
    return -2.0 * ad.exp(x[2])


def example_p_d_x(x):
    s2, c2 = ad.sin(x[1]), ad.cos(x[1])
    return s2 - 2 * x[2] + 2 * x[0] ** 2 * s2 / c2 ** 2


def example_p_s_x(x):
    return 2.0 * x[0]


def example_normal_form() -> NormalFormDef:
    """Closed-form coefficients of the example in z coordinates.

    b multiplies u and c_s multiplies the noise (b = -2 e^{x3}, c_s = 4 x1).
    """

    def on_z(fn):
        return lambda z: fn(_x_of_z(z))

    return NormalFormDef(
        r=2, n=3,
        c_d=ScalarField(3, on_z(example_c_d_x), name="c_d"),
        c_s=ScalarField(3, on_z(example_c_s_x), name="c_s"),
        b=ScalarField(3, on_z(example_b_x), name="b"),
        p_d=VectorField(3, lambda z: [example_p_d_x(_x_of_z(z))], m=1, name="p_d"),
        p_s=VectorField(3, lambda z: [example_p_s_x(_x_of_z(z))], m=1, name="p_s"),
        to_x=example_phi_inverse_closed,
        to_z=lambda x: np.array(_phi([float(v) for v in x])),
        name="example normal form",
    )


def _zd_drift(eta):
    eta = np.asarray(eta, dtype=float)
    return -2 * eta + 9 * eta ** 3 / (2 * (eta ** 2 - 1))


def _zd_diffusion(eta):
    return 3.0 * np.asarray(eta, dtype=float)


def _checked(fn):
    def wrapped(eta):
        if np.any(np.abs(eta) >= 1.0):
            raise DomainError("zero dynamics defined for |eta| < 1 only")
        out = fn(eta)
        return float(out) if np.ndim(out) == 0 else out
    return wrapped


def example_zero_dynamics() -> ZeroDynamics:
    """eta' = -2 eta + 9 eta^3 / (2 (eta^2 - 1)) + 3 eta xi."""
    return ZeroDynamics(_checked(_zd_drift), _checked(_zd_diffusion), dim=1,
                        domain_radius=1.0, vectorized=True)


def integrator_chain(noise: float = 1.0) -> SystemDef:
    """dx1 = x2 dt, dx2 = u dt + noise dW, y = x1."""
    return SystemDef(
        n=2,
        f=VectorField(2, lambda x: [x[1], 0.0], name="f"),
        g=VectorField.constant([0.0, 1.0]),
        l=VectorField.constant([0.0, noise]),
        h=ScalarField.coordinate(2, 0),
        name="integrator-chain",
    )
