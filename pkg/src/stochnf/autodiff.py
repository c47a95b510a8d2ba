"""Nested forward-mode differentiation.

Derivatives are carried by :class:`Dual` numbers whose value and partials may
themselves be duals of an enclosing differentiation level.  Every call to
:func:`gradient`/:func:`jacobian` opens a fresh *tag*, so derivatives taken
inside a field that is being differentiated again never get confused with the
outer perturbation.  That makes fields such as ``x -> grad(h)(x) . f(x)``
differentiable to any depth, which the iterated stochastic Lie derivative
needs (second derivatives of fields that already contain Hessians).
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Dual",
    "ScalarField",
    "VectorField",
    "NonFiniteWarning",
    "sin",
    "cos",
    "tan",
    "exp",
    "log",
    "sqrt",
    "gradient",
    "hessian",
    "jacobian",
    "value_of",
]

_tags = itertools.count(1)


class NonFiniteWarning(RuntimeWarning):
    """A derivative evaluation produced NaN or Inf."""


class Dual:
    """Truncated first-order Taylor number ``val + sum_i eps[i] * d_i``.

    ``val`` and the entries of ``eps`` are floats or lower-tag duals.
    """

    __slots__ = ("tag", "val", "eps")

    def __init__(self, tag: int, val, eps: tuple):
        self.tag = tag
        self.val = val
        self.eps = eps

    def __repr__(self) -> str:
        return f"Dual(tag={self.tag}, val={self.val!r}, eps={self.eps!r})"

    # a Dual of a higher tag always sits outside lower-tag ones, so binary ops
    # hand control to whichever operand carries the larger tag.
    def _outer(self, other) -> bool:
        return isinstance(other, Dual) and other.tag > self.tag

    def __add__(self, other):
        if isinstance(other, Dual):
            if other.tag == self.tag:
                return Dual(self.tag, self.val + other.val,
                            tuple(a + b for a, b in zip(self.eps, other.eps)))
            if other.tag > self.tag:
                return other.__radd__(self)
        return Dual(self.tag, self.val + other, self.eps)

    def __radd__(self, other):
        return Dual(self.tag, other + self.val, self.eps)

    def __sub__(self, other):
        if isinstance(other, Dual):
            if other.tag == self.tag:
                return Dual(self.tag, self.val - other.val,
                            tuple(a - b for a, b in zip(self.eps, other.eps)))
            if other.tag > self.tag:
                return other.__rsub__(self)
        return Dual(self.tag, self.val - other, self.eps)

    def __rsub__(self, other):
        return Dual(self.tag, other - self.val, tuple(-a for a in self.eps))

    def __neg__(self):
        return Dual(self.tag, -self.val, tuple(-a for a in self.eps))

    def __pos__(self):
        return self

    def __mul__(self, other):
        if isinstance(other, Dual):
            if other.tag == self.tag:
                a, b = self.val, other.val
                return Dual(self.tag, a * b,
                            tuple(da * b + a * db for da, db in zip(self.eps, other.eps)))
            if other.tag > self.tag:
                return other.__rmul__(self)
        return Dual(self.tag, self.val * other, tuple(a * other for a in self.eps))

    def __rmul__(self, other):
        return Dual(self.tag, other * self.val, tuple(other * a for a in self.eps))

    def __truediv__(self, other):
        if isinstance(other, Dual):
            if other.tag == self.tag:
                inv = _reciprocal(other.val)
                q = self.val / other.val if other.val != 0 else self.val * inv
                return Dual(self.tag, q,
                            tuple((da - q * db) * inv for da, db in zip(self.eps, other.eps)))
            if other.tag > self.tag:
                return other.__rtruediv__(self)
        inv = _reciprocal(other)
        q = self.val / other if other != 0 else self.val * inv
        return Dual(self.tag, q, tuple(a * inv for a in self.eps))

    def __rtruediv__(self, other):
        inv = _reciprocal(self.val)
        q = other / self.val if self.val != 0 else other * inv
        return Dual(self.tag, q, tuple(-q * inv * a for a in self.eps))

    def __pow__(self, p):
        if isinstance(p, Dual):
            return exp(p * log(self))
        if p == 0:
            return Dual(self.tag, _pow(self.val, 0), tuple(0.0 * a for a in self.eps))
        if p == 1:
            return self
        if p == 2:
            return self * self
        scale = p * _pow(self.val, p - 1)
        return Dual(self.tag, _pow(self.val, p), tuple(scale * a for a in self.eps))

    def __rpow__(self, base):
        return exp(self * log(base))

    # comparisons look at the primal value only (used by piecewise fields)
    def __lt__(self, other):
        return value_of(self) < value_of(other)

    def __le__(self, other):
        return value_of(self) <= value_of(other)

    def __gt__(self, other):
        return value_of(self) > value_of(other)

    def __ge__(self, other):
        return value_of(self) >= value_of(other)

    def __float__(self):
        # converting would silently drop derivative information
        raise TypeError("cannot convert a dual number to float; use value_of()")


def value_of(a) -> float:
    """Strip every derivative layer and return the primal float."""
    while isinstance(a, Dual):
        a = a.val
    return a


def _reciprocal(a):
    if isinstance(a, Dual):
        return 1.0 / a
    if a == 0:
        return math.copysign(math.inf, a) if not math.isnan(a) else math.nan
    return 1.0 / a


def _pow(a, p):
    if isinstance(a, Dual):
        return a ** p
    try:
        return a ** p
    except ZeroDivisionError:
        return math.inf
    except OverflowError:
        return math.inf


# ---------------------------------------------------------------------------
# elementary functions


def _float_call(fn, a):
    try:
        return fn(a)
    except OverflowError:
        return math.inf
    except ValueError:
        return math.nan


def sin(a):
    if isinstance(a, Dual):
        c = cos(a.val)
        return Dual(a.tag, sin(a.val), tuple(c * d for d in a.eps))
    return _float_call(math.sin, a)


def cos(a):
    if isinstance(a, Dual):
        s = -sin(a.val)
        return Dual(a.tag, cos(a.val), tuple(s * d for d in a.eps))
    return _float_call(math.cos, a)


def tan(a):
    if isinstance(a, Dual):
        t = tan(a.val)
        dt = 1.0 + t * t
        return Dual(a.tag, t, tuple(dt * d for d in a.eps))
    return _float_call(math.tan, a)


def exp(a):
    if isinstance(a, Dual):
        e = exp(a.val)
        return Dual(a.tag, e, tuple(e * d for d in a.eps))
    return _float_call(math.exp, a)


def log(a):
    if isinstance(a, Dual):
        inv = _reciprocal(a.val)
        return Dual(a.tag, log(a.val), tuple(inv * d for d in a.eps))
    if a == 0:
        return -math.inf
    return _float_call(math.log, a)


def asin(a):
    if isinstance(a, Dual):
        d = _reciprocal(sqrt(1.0 - a.val * a.val))
        return Dual(a.tag, asin(a.val), tuple(d * e for e in a.eps))
    return _float_call(math.asin, a)


def sqrt(a):
    if isinstance(a, Dual):
        s = sqrt(a.val)
        half_inv = 0.5 * _reciprocal(s)
        return Dual(a.tag, s, tuple(half_inv * d for d in a.eps))
    return _float_call(math.sqrt, a)


# ---------------------------------------------------------------------------
# fields


@dataclass(frozen=True)
class ScalarField:
    """A smooth map R^n -> R written with the elementary functions above."""

    n: int
    fn: Callable[[Sequence], object]
    name: str = ""

    def __call__(self, x):
        return self.fn(x)

    def value(self, x) -> float:
        _check_dim(self.n, x)
        return float(value_of(self.fn(x)))

    def __add__(self, other: "ScalarField") -> "ScalarField":
        _check_dim(self.n, range(other.n))
        return ScalarField(self.n, lambda x: self.fn(x) + other.fn(x))

    def __sub__(self, other: "ScalarField") -> "ScalarField":
        _check_dim(self.n, range(other.n))
        return ScalarField(self.n, lambda x: self.fn(x) - other.fn(x))

    def __mul__(self, k: float) -> "ScalarField":
        return ScalarField(self.n, lambda x: k * self.fn(x))

    __rmul__ = __mul__

    def __neg__(self) -> "ScalarField":
        return ScalarField(self.n, lambda x: -self.fn(x))

    @classmethod
    def constant(cls, n: int, c: float) -> "ScalarField":
        return cls(n, lambda x: c, name=f"const({c})")

    @classmethod
    def coordinate(cls, n: int, i: int) -> "ScalarField":
        return cls(n, lambda x: x[i], name=f"x{i + 1}")


@dataclass(frozen=True)
class VectorField:
    """A map R^n -> R^m (m defaults to n), evaluated componentwise."""

    n: int
    fn: Callable[[Sequence], Sequence]
    m: int | None = None
    name: str = ""

    @property
    def out_dim(self) -> int:
        return self.n if self.m is None else self.m

    def __call__(self, x):
        return self.fn(x)

    def value(self, x) -> np.ndarray:
        _check_dim(self.n, x)
        return np.array([value_of(c) for c in self.fn(x)], dtype=float)

    @classmethod
    def zero(cls, n: int) -> "VectorField":
        return cls(n, lambda x: [0.0] * n, name="zero")

    @classmethod
    def constant(cls, c: Sequence[float]) -> "VectorField":
        c = [float(v) for v in c]
        return cls(len(c), lambda x: list(c), name="const")


def _check_dim(n: int, x) -> None:
    if len(x) != n:
        raise ValueError(f"dimension mismatch: field has n={n}, point has {len(x)} entries")


# ---------------------------------------------------------------------------
# generic (dual-transparent) derivative kernels


def _seed(x: Sequence, tag: int) -> list:
    n = len(x)
    return [Dual(tag, xi, tuple(1.0 if j == i else 0.0 for j in range(n)))
            for i, xi in enumerate(x)]


def _partials(y, tag: int, n: int) -> tuple:
    if isinstance(y, Dual) and y.tag == tag:
        return y.eps
    return (0.0,) * n


def _primal(y, tag: int):
    if isinstance(y, Dual) and y.tag == tag:
        return y.val
    return y


def grad(fn: Callable, x: Sequence) -> list:
    """Gradient of a scalar function; entries may be duals when ``x`` is."""
    tag = next(_tags)
    return list(_partials(fn(_seed(x, tag)), tag, len(x)))


def jac(fn: Callable, x: Sequence) -> list[list]:
    """Jacobian rows of a vector function; dual-transparent."""
    tag = next(_tags)
    n = len(x)
    return [list(_partials(c, tag, n)) for c in fn(_seed(x, tag))]


def grad_hess(fn: Callable, x: Sequence) -> tuple[list, list[list]]:
    """Gradient and Hessian in one forward-over-forward pass."""
    tag = next(_tags)
    n = len(x)
    g = grad(fn, _seed(x, tag))
    return [_primal(gi, tag) for gi in g], [list(_partials(gi, tag, n)) for gi in g]


# ---------------------------------------------------------------------------
# public numeric API


def _to_point(x) -> list[float]:
    return [float(v) for v in np.asarray(x, dtype=float).ravel()]


def _finish(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        warnings.warn(f"non-finite value in {what}", NonFiniteWarning, stacklevel=3)
    return arr


def gradient(phi: ScalarField, x) -> np.ndarray:
    """Row vector d(phi)/dx at ``x``."""
    _check_dim(phi.n, x)
    g = grad(phi.fn, _to_point(x))
    return _finish(np.array([value_of(v) for v in g], dtype=float), "gradient")


def hessian(phi: ScalarField, x) -> np.ndarray:
    """Symmetric matrix of second partials of ``phi`` at ``x``."""
    _check_dim(phi.n, x)
    _, h = grad_hess(phi.fn, _to_point(x))
    H = np.array([[value_of(v) for v in row] for row in h], dtype=float)
    # forward-over-forward is exact; averaging only removes rounding asymmetry
    return _finish(0.5 * (H + H.T), "hessian")


def jacobian(F: VectorField, x) -> np.ndarray:
    """Matrix of partials dF_i/dx_j at ``x``."""
    _check_dim(F.n, x)
    J = jac(F.fn, _to_point(x))
    return _finish(np.array([[value_of(v) for v in row] for row in J], dtype=float), "jacobian")
