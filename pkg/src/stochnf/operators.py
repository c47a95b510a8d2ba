"""Lie-derivative calculus for Ito SDEs and the stochastic relative degree.

For dx = (f + g u) dt + l dW and an output phi, one application of the
stochastic Lie derivative gives

    S phi = L_f phi + 1/2 l^T (d2 phi/dx2) l   +   (L_l phi) xi

and it can be iterated only while the noise coefficient L_l vanishes.
All derived fields are built by composing closures through the autodiff
tower, so they stay exactly differentiable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ScalarField, VectorField
from .models import SystemDef, sample_ball

__all__ = [
    "NoiseDecouplingError",
    "StochasticDerivative",
    "RelativeDegreeReport",
    "lie",
    "lie2",
    "stochastic_lie",
    "iterate_stochastic_lie",
    "a_operator",
    "stratonovich_drift",
    "lie_bracket",
    "controllability_matrix",
    "relative_degree",
    "numerical_rank",
]

ND_TOL = 1e-9
RD_TOL = 1e-9
DEFAULT_RADIUS = 0.2
DEFAULT_SAMPLES = 200


class NoiseDecouplingError(ValueError):
    """White noise appears in a derivative that would have to be differentiated again."""

    def __init__(self, order: int, magnitude: float):
        super().__init__(
            f"noise coefficient of derivative order {order} is not identically zero "
            f"(max |L_l S^{order - 1} h| = {magnitude:.3e}); further iteration would "
            "differentiate white noise")
        self.order = order
        self.magnitude = magnitude


def _dot(a, b):
    acc = 0.0
    for ai, bi in zip(a, b):
        acc = acc + ai * bi
    return acc


def _check_same_n(*objs) -> int:
    ns = {o.n for o in objs}
    if len(ns) != 1:
        raise ValueError(f"dimension mismatch among fields: {sorted(ns)}")
    return ns.pop()


def lie(phi: ScalarField, F: VectorField) -> ScalarField:
    """x -> d(phi)/dx . F(x)."""
    n = _check_same_n(phi, F)
    pf, Ff = phi.fn, F.fn
    return ScalarField(n, lambda x: _dot(ad.grad(pf, x), Ff(x)),
                       name=f"L_{F.name or 'F'}({phi.name or 'phi'})")


def _quad(H, F, G):
    acc = 0.0
    for i, Gi in enumerate(G):
        row = H[i]
        acc = acc + Gi * _dot(row, F)
    return acc


def lie2(phi: ScalarField, F: VectorField, G: VectorField) -> ScalarField:
    """x -> G(x)^T (d2 phi/dx2) F(x)."""
    n = _check_same_n(phi, F, G)
    pf, Ff, Gf = phi.fn, F.fn, G.fn

    def fn(x):
        _, H = ad.grad_hess(pf, x)
        return _quad(H, Ff(x), Gf(x))

    return ScalarField(n, fn)


@dataclass(frozen=True)
class StochasticDerivative:
    """deterministic(x) + noise_coeff(x) * xi for a derivative of order ``order``."""

    deterministic: ScalarField
    noise_coeff: ScalarField
    order: int

    def __call__(self, x, xi: float = 0.0) -> float:
        return self.deterministic.value(x) + self.noise_coeff.value(x) * xi


def stochastic_lie(phi: ScalarField, sys: SystemDef, order: int = 1) -> StochasticDerivative:
    """One application of S_{f,l}: drift part L_f phi + 1/2 L2_{l,l} phi, noise part L_l phi."""
    n = _check_same_n(phi, sys.f, sys.l)
    pf, f, l = phi.fn, sys.f.fn, sys.l.fn

    def det(x):
        g, H = ad.grad_hess(pf, x)
        L = l(x)
        return _dot(g, f(x)) + 0.5 * _quad(H, L, L)

    return StochasticDerivative(
        ScalarField(n, det, name=f"S{order}h"),
        lie(phi, sys.l),
        order,
    )


def _max_abs(phi: ScalarField, points) -> float:
    return max((abs(phi.value(x)) for x in points), default=0.0)


def iterate_stochastic_lie(sys: SystemDef, k: int, center=None, radius: float = DEFAULT_RADIUS,
                           samples: int = DEFAULT_SAMPLES, tol: float = ND_TOL,
                           phi: ScalarField | None = None) -> StochasticDerivative:
    """S^k applied to the output (or to ``phi``), checking noise decoupling on the way.

    Raises :class:`NoiseDecouplingError` naming the first order j < k whose
    noise coefficient is not zero on the sampled neighbourhood.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    phi = sys.h if phi is None else phi
    center = np.zeros(sys.n) if center is None else np.asarray(center, dtype=float)
    current = StochasticDerivative(phi, ScalarField.constant(sys.n, 0.0), 0)
    points = sample_ball(center, radius, samples) if k > 1 else None
    for j in range(1, k + 1):
        if j > 1:
            mag = _max_abs(current.noise_coeff, points)
            if mag > tol:
                raise NoiseDecouplingError(j - 1, mag)
        current = stochastic_lie(current.deterministic, sys, order=j)
    return current


def a_operator(phi: ScalarField, sys: SystemDef) -> StochasticDerivative:
    """Coefficient of u in d(phi)/dt: L_g phi + L2_{l,m} phi, noise part L_m phi."""
    m = sys.m_field
    n = _check_same_n(phi, sys.g, sys.l, m)
    Lg = lie(phi, sys.g)
    if sys.m is None:
        return StochasticDerivative(Lg, ScalarField.constant(n, 0.0), 1)
    cross = lie2(phi, sys.l, m)
    return StochasticDerivative(Lg + cross, lie(phi, m), 1)


def stratonovich_drift(sys: SystemDef) -> VectorField:
    """f_S = f - 1/2 (dl/dx) l."""
    n = sys.n
    f, l = sys.f.fn, sys.l.fn

    def fn(x):
        J = ad.jac(l, x)
        L = l(x)
        F = f(x)
        return [F[i] - 0.5 * _dot(J[i], L) for i in range(n)]

    return VectorField(n, fn, name="f_S")


def lie_bracket(F: VectorField, G: VectorField) -> VectorField:
    """ad_F G = (dG/dx) F - (dF/dx) G."""
    n = _check_same_n(F, G)
    Ff, Gf = F.fn, G.fn

    def fn(x):
        JG, JF = ad.jac(Gf, x), ad.jac(Ff, x)
        Fx, Gx = Ff(x), Gf(x)
        return [_dot(JG[i], Fx) - _dot(JF[i], Gx) for i in range(n)]

    return VectorField(n, fn, name=f"ad({F.name},{G.name})")


def numerical_rank(M: np.ndarray, rel_tol: float = 1e-9) -> int:
    s = np.linalg.svd(np.atleast_2d(M), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rel_tol * s[0]))


def controllability_matrix(sys: SystemDef, xbar) -> tuple[np.ndarray, bool]:
    """Columns g, ad_{f_S} g, ..., ad_{f_S}^{n-1} g at ``xbar`` and an invertibility verdict."""
    fS = stratonovich_drift(sys)
    cols = []
    G = sys.g
    for _ in range(sys.n):
        cols.append(G.value(xbar))
        G = lie_bracket(fS, G)
    M = np.column_stack(cols)
    return M, numerical_rank(M) == sys.n


@dataclass
class RelativeDegreeReport:
    r: int | None
    xbar: np.ndarray
    radius: float
    samples: int
    max_noise: list[float] = field(default_factory=list)
    max_control: list[float] = field(default_factory=list)
    rd_value: float | None = None
    gradient_rank: int | None = None
    gradient_singular_values: list[float] = field(default_factory=list)
    noise_at_order_r: bool | None = None
    failure: str | None = None

    @property
    def defined(self) -> bool:
        return self.r is not None

    def as_dict(self) -> dict:
        return {
            "r": self.r if self.r is not None else "undefined",
            "xbar": [float(v) for v in self.xbar],
            "radius": self.radius,
            "samples": self.samples,
            "max_abs_Ll_Sk_h": self.max_noise,
            "max_abs_Lg_Sk_h": self.max_control,
            "Lg_S_rm1_h_at_xbar": self.rd_value,
            "gradient_rank": self.gradient_rank,
            "gradient_singular_values": self.gradient_singular_values,
            "noise_at_order_r": self.noise_at_order_r,
            "failure": self.failure,
        }


def relative_degree(sys: SystemDef, xbar=None, radius: float = DEFAULT_RADIUS,
                    max_order: int | None = None, samples: int = DEFAULT_SAMPLES,
                    tol: float = ND_TOL) -> RelativeDegreeReport:
    """Smallest r with noise/control decoupling below order r and L_g S^{r-1} h(xbar) != 0.

    "For all x near xbar" is checked on ``samples`` quasi-random points of the
    sup-norm ball of the given radius, so a pathological system can pass the
    test without satisfying the identity exactly.
    """
    xbar = np.zeros(sys.n) if xbar is None else np.asarray(xbar, dtype=float)
    sys.require_m_zero(xbar, max(radius, 1e-12))
    max_order = sys.n if max_order is None else max_order
    points = sample_ball(xbar, radius, samples)
    report = RelativeDegreeReport(None, xbar, radius, samples)

    phi = sys.h
    grads = []
    for k in range(max_order):
        # phi = S^k h, deterministic by construction
        grads.append(ad.gradient(phi, xbar))
        Lg = lie(phi, sys.g)
        Ll = lie(phi, sys.l)
        rd = Lg.value(xbar)
        report.max_noise.append(_max_abs(Ll, points))
        report.max_control.append(_max_abs(Lg, points))
        if abs(rd) > RD_TOL:
            report.r = k + 1
            report.rd_value = rd
            report.noise_at_order_r = report.max_noise[-1] > tol
            break
        if report.max_control[-1] > tol:
            report.failure = (f"L_g S^{k} h vanishes at xbar but not on the neighbourhood "
                              f"(max {report.max_control[-1]:.3e})")
            break
        if report.max_noise[-1] > tol:
            report.failure = (f"noise enters derivative {k + 1} before the control "
                              f"(max |L_l S^{k} h| = {report.max_noise[-1]:.3e})")
            break
        phi = stochastic_lie(phi, sys, order=k + 1).deterministic
    else:
        report.failure = f"control does not appear up to order {max_order}"

    if report.r is not None:
        sv = np.linalg.svd(np.array(grads), compute_uv=False)
        report.gradient_singular_values = [float(s) for s in sv]
        report.gradient_rank = numerical_rank(np.array(grads))
    return report
