"""Empirical stability probes for zero dynamics and closed loops.

"Bounded" means the path never leaves a ball of radius 10x its initial
perturbation during the horizon.  Top Lyapunov exponents are estimated for
scalar dynamics only, as the mean of log(|eta_T| / |eta_0|) / T.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import gradient
from .models import NormalFormDef, ZeroDynamics
from .simulate import Scenario, SimulationAborted, euler_maruyama_scalar, generate_path, integrate
from .transform import as_linear_scalar_stability

__all__ = [
    "StabilityProbe",
    "probe_zero_dynamics",
    "probe_closed_loop",
    "stabilisation_hypotheses",
    "linear_scalar",
    "BOUND_FACTOR",
    "CONVERGED",
]

BOUND_FACTOR = 10.0
CONVERGED = 1e-3
OUTCOMES = ("bounded", "escaped", "nan")


@dataclass
class StabilityProbe:
    name: str
    horizon: float
    radius: float
    seeds: list[int]
    initial: np.ndarray  # |initial perturbation| per path
    final: np.ndarray  # |final state| per path (NaN if aborted)
    sup: np.ndarray
    outcomes: list[str]
    lyapunov: float = math.nan
    extra: dict = field(default_factory=dict)

    @property
    def paths(self) -> int:
        return len(self.outcomes)

    def count(self, outcome: str) -> int:
        return sum(o == outcome for o in self.outcomes)

    @property
    def all_bounded(self) -> bool:
        return self.count("bounded") == self.paths

    @property
    def converged_fraction(self) -> float:
        if not self.paths:
            return math.nan
        return float(np.mean(np.nan_to_num(self.final, nan=np.inf) < CONVERGED))

    def summary(self) -> dict:
        return {
            "name": self.name, "paths": self.paths, "horizon": self.horizon,
            "radius": self.radius,
            **{o: self.count(o) for o in OUTCOMES},
            "converged_fraction": self.converged_fraction,
            "lyapunov_estimate": self.lyapunov,
            **self.extra,
        }

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["seed", "initial", "final", "sup", "outcome"])
            for row in zip(self.seeds, self.initial, self.final, self.sup, self.outcomes):
                w.writerow([row[0], repr(float(row[1])), repr(float(row[2])), repr(float(row[3])), row[4]])
        return path


def linear_scalar(A: float, F: float) -> ZeroDynamics:
    """d eta = A eta dt + F eta dW."""
    return ZeroDynamics(lambda e: A * np.asarray(e, dtype=float),
                        lambda e: F * np.asarray(e, dtype=float), dim=1, vectorized=True)


def _classify(initial: float, sup: float, dead: bool) -> str:
    if dead or not math.isfinite(sup):
        return "nan"
    return "bounded" if sup <= BOUND_FACTOR * initial else "escaped"


def probe_zero_dynamics(zd: ZeroDynamics, radius: float = 0.2, paths: int = 50,
                        horizon: float = 10.0, dt: float = 1e-4, seed: int = 0,
                        initial=None, name: str = "zero dynamics") -> StabilityProbe:
    """Simulate ``paths`` seeds from initial eta uniform in (-radius, radius).

    Path j uses Brownian seed ``seed + j``; initial points come from a
    separate stream keyed on ``seed`` unless given explicitly.
    """
    if zd.dim != 1:
        raise ValueError("probe implemented for scalar zero dynamics")
    seeds = [seed + j for j in range(paths)]
    if initial is None:
        rng = np.random.Generator(np.random.PCG64([seed, 0x5EED]))
        eta0 = rng.uniform(-radius, radius, size=paths)
    else:
        eta0 = np.broadcast_to(np.asarray(initial, dtype=float), (paths,)).copy()
    N = int(round(horizon / dt))
    if paths == 0:
        empty = np.empty(0)
        return StabilityProbe(name, horizon, radius, [], empty, empty, empty, [])
    inc = np.stack([generate_path(s, dt, N).increments for s in seeds])
    if zd.vectorized:
        drift, diffusion = zd.drift, zd.diffusion
    else:
        drift = np.vectorize(zd.drift, otypes=[float])
        diffusion = np.vectorize(zd.diffusion, otypes=[float])
    final, sup, dead = euler_maruyama_scalar(drift, diffusion, eta0, inc, dt,
                                             domain=zd.domain_radius)
    init = np.abs(eta0)
    outcomes = [_classify(a, b, d) for a, b, d in zip(init, sup, dead)]
    ok = (~dead) & (init > 0) & np.isfinite(final)
    with np.errstate(divide="ignore"):
        logs = np.log(np.abs(final[ok]) / init[ok]) / horizon
    lam = float(np.mean(logs)) if logs.size else math.nan
    extra = {}
    try:
        A, F = zd.linearization()
        extra = {"A": A, "F": F, "linear_verdict_stable": as_linear_scalar_stability(A, F),
                 "linear_exponent": A - F ** 2 / 2}
    except Exception:  # linearisation is informative only
        pass
    return StabilityProbe(name, horizon, radius, seeds, init, np.abs(final), sup, outcomes, lam, extra)


def stabilisation_hypotheses(nf: NormalFormDef, eta_radius: float = 0.2, samples: int = 41,
                             tol: float = 1e-9) -> dict:
    """Check c_s(0, eta) == 0 near zero and d c_s / d zeta (0, 0) == 0."""
    r, n = nf.r, nf.n
    etas = np.linspace(-eta_radius, eta_radius, samples)
    vals = []
    for e in etas:
        z = np.zeros(n)
        z[r:] = e
        vals.append(abs(nf.c_s.value(z)))
    grad = gradient(nf.c_s, np.zeros(n))[:r]
    max_cs = float(max(vals))
    max_grad = float(np.max(np.abs(grad)))
    return {
        "max_abs_c_s_on_zero_manifold": max_cs,
        "max_abs_dc_s_dzeta_at_0": max_grad,
        "c_s_vanishes_on_zero_manifold": max_cs < tol,
        "dc_s_dzeta_vanishes": max_grad < tol,
        "hypotheses_hold": max_cs < tol and max_grad < tol,
    }


def probe_closed_loop(scn: Scenario, paths: int = 20, radius: float = 0.05,
                      seed: int = 0, backend: str = "auto",
                      name: str = "closed loop") -> StabilityProbe:
    """Perturb x0 uniformly in a cube of half-width ``radius`` and track (zeta - zeta_R, eta).

    Aborted runs (non-finite state, working-region guard) count as "nan".
    """
    rng = np.random.Generator(np.random.PCG64([seed, 0xC105ED]))
    base = scn.initial_state
    r = scn.normal_form.r
    seeds, init, final, sup, outcomes = [], [], [], [], []
    for j in range(paths):
        s = seed + j
        x0 = base + rng.uniform(-radius, radius, size=base.size)
        sj = scn.with_(seed=s, x0=tuple(float(v) for v in x0))
        path = generate_path(s, sj.dt, sj.n_steps)
        seeds.append(s)
        try:
            tr = integrate(sj, path, backend)
        except SimulationAborted:
            init.append(math.nan)
            final.append(math.nan)
            sup.append(math.inf)
            outcomes.append("nan")
            continue
        err = tr.z.copy()
        if scn.controller.task == "track" and scn.reference is not None:
            refs = np.array([scn.reference(t)[:r] for t in tr.t]) if len(tr.t) < 200_000 else None
            if refs is None:
                raise ValueError("record_stride too fine for the closed-loop probe")
            err[:, :r] -= refs
        norms = np.linalg.norm(err, axis=1)
        e0 = max(float(norms[0]), radius)
        init.append(e0)
        final.append(float(norms[-1]))
        sup.append(float(norms.max()))
        outcomes.append(_classify(e0, sup[-1], False))
    extra = {"family": scn.controller.family, "task": scn.controller.task}
    if scn.controller.task == "stabilise":
        extra.update(stabilisation_hypotheses(scn.normal_form))
    return StabilityProbe(name, scn.t_final, radius, seeds, np.array(init), np.array(final),
                          np.array(sup), outcomes, math.nan, extra)
