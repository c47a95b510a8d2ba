"""Coordinate change to the stochastic normal form and the zero dynamics."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ScalarField, VectorField
from .models import NormalFormDef, SystemDef, ZeroDynamics, differentiable_inverse, sample_ball
from .operators import (DEFAULT_RADIUS, ND_TOL, RelativeDegreeReport, lie, numerical_rank,
                        relative_degree, stochastic_lie)

__all__ = [
    "SingularTransformError",
    "InputDependentInternalDynamics",
    "CoordinateChange",
    "build_transform",
    "gram_schmidt_completions",
    "normal_form",
    "zero_dynamics",
    "as_linear_scalar_stability",
]


class SingularTransformError(ValueError):
    pass


class InputDependentInternalDynamics(UserWarning):
    """A completion function has L_g phi_j != 0, so u leaks into the internal dynamics."""


@dataclass(frozen=True)
class CoordinateChange:
    r: int
    n: int
    components: tuple[ScalarField, ...]
    center: np.ndarray
    radius: float
    report: RelativeDegreeReport
    input_dependent: tuple[int, ...] = ()
    jacobian_singular_values: tuple[float, ...] = field(default=())

    @property
    def forward_field(self) -> VectorField:
        comps = [c.fn for c in self.components]
        return VectorField(self.n, lambda x: [c(x) for c in comps], name="phi")

    def __call__(self, x) -> np.ndarray:
        return np.array([c.value(x) for c in self.components])

    def jacobian(self, x) -> np.ndarray:
        return np.array([ad.gradient(c, x) for c in self.components])

    def inverse(self, z, x0=None):
        """x with phi(x) = z; derivatives of dual ``z`` are propagated."""
        return differentiable_inverse(self.forward_field, z, self.center if x0 is None else x0)


def gram_schmidt_completions(sys: SystemDef, xbar, r: int | None = None,
                             radius: float = DEFAULT_RADIUS) -> list[ScalarField]:
    """Linear completions w^T (x - xbar) spanning the orthogonal complement of the output gradients.

    They make the Jacobian invertible but in general do not satisfy L_g phi_j = 0.
    """
    xbar = np.asarray(xbar, dtype=float)
    if r is None:
        r = relative_degree(sys, xbar, radius).r
        if r is None:
            raise SingularTransformError("relative degree undefined")
    phi = sys.h
    grads = []
    for k in range(r):
        grads.append(ad.gradient(phi, xbar))
        if k < r - 1:
            phi = stochastic_lie(phi, sys, order=k + 1).deterministic
    _, s, vt = np.linalg.svd(np.array(grads))
    rank = int(np.sum(s > 1e-9 * s[0]))
    basis = vt[rank:]
    out = []
    for w in basis[: sys.n - r]:
        w = tuple(float(v) for v in w)
        c = tuple(float(v) for v in xbar)
        out.append(ScalarField(sys.n, lambda x, w=w, c=c: sum(wi * (xi - ci) for wi, xi, ci in zip(w, x, c)),
                               name="gram-schmidt"))
    return out


def build_transform(sys: SystemDef, xbar=None, completions: list[ScalarField] | None = None,
                    radius: float = DEFAULT_RADIUS, samples: int = 200) -> CoordinateChange:
    """phi_1 = h, phi_{k+1} = S^k h (k < r), then the user completions."""
    xbar = np.zeros(sys.n) if xbar is None else np.asarray(xbar, dtype=float)
    report = relative_degree(sys, xbar, radius, samples=samples)
    if report.r is None:
        raise SingularTransformError(f"stochastic relative degree undefined: {report.failure}")
    r = report.r
    completions = list(completions or [])
    if len(completions) != sys.n - r:
        raise ValueError(f"need {sys.n - r} completion functions, got {len(completions)}")

    comps = [sys.h]
    for k in range(1, r):
        comps.append(stochastic_lie(comps[-1], sys, order=k).deterministic)
    comps.extend(completions)

    J = np.array([ad.gradient(c, xbar) for c in comps])
    sv = np.linalg.svd(J, compute_uv=False)
    if numerical_rank(J) < sys.n:
        raise SingularTransformError(f"Jacobian of the coordinate change is singular at xbar "
                                     f"(singular values {sv})")

    points = sample_ball(xbar, radius, samples)
    leaky = []
    for j, c in enumerate(completions):
        Lg = lie(c, sys.g)
        if max(abs(Lg.value(x)) for x in points) > ND_TOL:
            leaky.append(r + j + 1)
    if leaky:
        warnings.warn(f"completions {leaky} have L_g phi != 0: the input enters the internal dynamics",
                      InputDependentInternalDynamics, stacklevel=2)
    return CoordinateChange(r, sys.n, tuple(comps), xbar, radius, report, tuple(leaky), tuple(sv))


def normal_form(ct: CoordinateChange, sys: SystemDef) -> NormalFormDef:
    """Coefficients of the normal form as functions of z (through the Newton inverse)."""
    if ct.input_dependent:
        raise ValueError("normal form requires completions with L_g phi_j == 0; "
                         f"components {list(ct.input_dependent)} depend on the input")
    r, n = ct.r, ct.n
    top = ct.components[r - 1]
    Sr = stochastic_lie(top, sys, order=r)
    Lg = lie(top, sys.g)
    internal = [stochastic_lie(c, sys, order=1) for c in ct.components[r:]]

    def to_x(z):
        return ct.inverse(z)

    def pull(phi: ScalarField) -> ScalarField:
        return ScalarField(n, lambda z: phi.fn(to_x(z)))

    p_d = VectorField(n, lambda z: [d.deterministic.fn(to_x(z)) for d in internal], m=n - r)
    p_s = VectorField(n, lambda z: [d.noise_coeff.fn(to_x(z)) for d in internal], m=n - r)
    return NormalFormDef(r, n, pull(Sr.deterministic), pull(Sr.noise_coeff), pull(Lg), p_d, p_s,
                         to_x=to_x, to_z=ct, name=f"normal form of {sys.name}")


def zero_dynamics(nf: NormalFormDef) -> ZeroDynamics:
    """eta -> (p_d(0, eta), p_s(0, eta))."""
    if nf.r >= nf.n:
        raise ValueError("r = n: there are no internal dynamics")
    dim = nf.n - nf.r

    def embed(eta):
        z = np.zeros(nf.n)
        z[nf.r:] = np.atleast_1d(eta)
        return z

    if dim == 1:
        return ZeroDynamics(lambda eta: float(nf.p_d.value(embed(eta))[0]),
                            lambda eta: float(nf.p_s.value(embed(eta))[0]), dim=1)
    return ZeroDynamics(lambda eta: nf.p_d.value(embed(eta)),
                        lambda eta: nf.p_s.value(embed(eta)), dim=dim)


def as_linear_scalar_stability(drift_slope: float, diffusion_slope: float) -> bool:
    """Almost-sure stability of d eta = A eta dt + F eta dW: A - F^2/2 < 0."""
    return drift_slope - diffusion_slope ** 2 / 2 < 0
