"""Seeded Brownian paths and hybrid Euler-Maruyama integration."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .control import ControllerSpec, bind
from .estimator import IncrementEstimate
from .models import CosineReference, NormalFormDef, ReferenceSignal, SystemDef

__all__ = [
    "PRNG_NAME",
    "SimulationAborted",
    "BrownianPath",
    "JumpRecord",
    "JumpLog",
    "HybridTrajectory",
    "Scenario",
    "generate_path",
    "integrate",
    "resample",
    "euler_maruyama_scalar",
]

PRNG_NAME = f"numpy-{np.__version__}/PCG64/standard_normal(ziggurat)*sqrt(dt)"


class SimulationAborted(RuntimeError):
    def __init__(self, message: str, step: int):
        super().__init__(f"{message} at step {step}")
        self.step = step


@dataclass(frozen=True)
class BrownianPath:
    """Increments dW[i] = W(t_{i+1}) - W(t_i) on a uniform grid of step dt."""

    seed: int
    dt: float
    increments: np.ndarray
    prng: str = PRNG_NAME

    @property
    def n_steps(self) -> int:
        return self.increments.shape[0]

    @property
    def W(self) -> np.ndarray:
        """Cumulative path W(t_0 = 0), ..., W(t_N)."""
        return np.concatenate([[0.0], np.cumsum(self.increments)])

    def aggregate(self, factor: int) -> "BrownianPath":
        """The same realisation on a grid ``factor`` times coarser."""
        if factor < 1 or self.n_steps % factor:
            raise ValueError(f"cannot aggregate {self.n_steps} steps by {factor}")
        inc = self.increments.reshape(-1, factor).sum(axis=1)
        return BrownianPath(self.seed, self.dt * factor, inc, self.prng + f"|agg{factor}")

    def window_increments(self, steps_per_window: int) -> np.ndarray:
        """Increments over consecutive complete windows of the given length."""
        K = self.n_steps // steps_per_window
        return self.increments[: K * steps_per_window].reshape(K, steps_per_window).sum(axis=1)

    def truncate(self, n_steps: int) -> "BrownianPath":
        if n_steps > self.n_steps:
            raise ValueError("path too short")
        return BrownianPath(self.seed, self.dt, self.increments[:n_steps], self.prng)


def generate_path(seed: int, dt: float, n_steps: int) -> BrownianPath:
    """Deterministic in ``seed``: PCG64 stream, ziggurat normals scaled by sqrt(dt)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if n_steps < 1:
        raise ValueError("need at least one step")
    rng = np.random.Generator(np.random.PCG64(seed))
    inc = rng.standard_normal(n_steps) * math.sqrt(dt)
    inc.setflags(write=False)
    return BrownianPath(int(seed), float(dt), inc)


@dataclass(frozen=True)
class JumpRecord:
    k: int
    index: int  # integration step at which the jump happened
    t: float
    x_pre: np.ndarray
    x_post: np.ndarray
    z_pre: np.ndarray
    z_post: np.ndarray
    u_star: float
    compensation: float  # change applied to z_r
    estimate: IncrementEstimate


@dataclass
class JumpLog:
    """Column storage for jump records; iterating yields JumpRecord views."""

    k: np.ndarray
    index: np.ndarray
    t: np.ndarray
    x_pre: np.ndarray
    x_post: np.ndarray
    z_pre: np.ndarray
    z_post: np.ndarray
    u_star: np.ndarray
    compensation: np.ndarray
    dW_hat: np.ndarray
    skipped: np.ndarray
    l_norm: np.ndarray
    residual: np.ndarray

    @classmethod
    def empty(cls, n: int = 3) -> "JumpLog":
        return cls.from_records([], n)

    @classmethod
    def from_records(cls, recs: list[JumpRecord], n: int) -> "JumpLog":
        def col(fn, dtype=float):
            return np.array([fn(r) for r in recs], dtype=dtype)

        def mat(fn):
            return np.array([fn(r) for r in recs], dtype=float).reshape(len(recs), n)

        return cls(col(lambda r: r.k, np.int64), col(lambda r: r.index, np.int64),
                   col(lambda r: r.t), mat(lambda r: r.x_pre), mat(lambda r: r.x_post),
                   mat(lambda r: r.z_pre), mat(lambda r: r.z_post), col(lambda r: r.u_star),
                   col(lambda r: r.compensation), col(lambda r: r.estimate.dW_hat),
                   col(lambda r: r.estimate.skipped, bool), col(lambda r: r.estimate.l_norm),
                   col(lambda r: r.estimate.residual))

    def __len__(self) -> int:
        return self.index.shape[0]

    def __getitem__(self, a: int) -> JumpRecord:
        est = IncrementEstimate(int(self.k[a]), float(self.dW_hat[a]), bool(self.skipped[a]),
                                float(self.l_norm[a]), float(self.residual[a]), float(self.t[a]))
        return JumpRecord(int(self.k[a]), int(self.index[a]), float(self.t[a]),
                          self.x_pre[a], self.x_post[a], self.z_pre[a], self.z_post[a],
                          float(self.u_star[a]), float(self.compensation[a]), est)

    def __iter__(self):
        return (self[a] for a in range(len(self)))

    def pre_state(self, step: int) -> np.ndarray | None:
        """Pre-jump x at an integration step, or None if no jump happened there."""
        a = np.searchsorted(self.index, step)
        if a < len(self) and self.index[a] == step:
            return self.x_pre[a]
        return None


@dataclass
class HybridTrajectory:
    t: np.ndarray
    x: np.ndarray
    z: np.ndarray
    u: np.ndarray  # input held over [t_i, t_i+1); NaN on the final row
    y: np.ndarray
    y_ref: np.ndarray
    W: np.ndarray
    jump: np.ndarray  # 1 on rows holding a post-jump state
    jumps: JumpLog
    dt: float
    stride: int
    r: int
    path: BrownianPath | None = None
    meta: dict = field(default_factory=dict)

    @property
    def zeta(self) -> np.ndarray:
        return self.z[:, : self.r]

    @property
    def eta(self) -> np.ndarray:
        return self.z[:, self.r:]

    @property
    def tracking_error(self) -> np.ndarray:
        return self.y - self.y_ref

    @property
    def total_compensation(self) -> float:
        return float(np.sum(self.jumps.compensation))

    def tail(self, start_fraction: float = 0.5) -> np.ndarray:
        return self.t >= start_fraction * self.t[-1] - 1e-12

    def to_csv(self, path, with_meta: bool = True) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        n = self.x.shape[1]
        header = (["t"] + [f"x{i + 1}" for i in range(n)] + [f"z{i + 1}" for i in range(n)]
                  + ["u", "y", "y_ref", "W", "jump"])
        table = np.column_stack([self.t, self.x, self.z, self.u, self.y, self.y_ref, self.W])
        with open(path, "w") as fh:
            fh.write(",".join(header) + "\n")
            for row, flag in zip(table, self.jump):
                fh.write(",".join(repr(float(v)) for v in row) + f",{int(flag)}\n")
        if with_meta:
            meta = dict(self.meta)
            meta.update(dt=self.dt, record_stride=self.stride, rows=len(self.t),
                        jumps=len(self.jumps), version=__version__)
            if self.path is not None:
                meta.update(seed=self.path.seed, prng=self.path.prng)
            path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))
        return path


@dataclass(frozen=True)
class Scenario:
    system: SystemDef
    normal_form: NormalFormDef
    controller: ControllerSpec
    reference: ReferenceSignal | None = None
    mode: str = "normal_form"  # or "x"
    dt: float = 1e-6
    t_final: float = 5.0
    seed: int = 0
    x0: tuple[float, ...] = ()
    record_stride: int = 1
    out: str | None = None
    name: str = "scenario"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.mode not in ("normal_form", "x"):
            raise ValueError(f"unknown coordinate mode {self.mode!r}")
        self.n_steps  # validates T / dt
        if self.controller.family == "hybrid":
            self.controller.eps_steps(self.dt)
        if self.n_steps % self.record_stride:
            raise ValueError("record_stride must divide the number of steps")

    @property
    def n_steps(self) -> int:
        ratio = self.t_final / self.dt
        N = int(round(ratio))
        if N < 1 or abs(ratio - N) > 1e-9 * ratio:
            raise ValueError(f"t_final={self.t_final} is not an integer multiple of dt={self.dt}")
        return N

    @property
    def epsilon(self) -> float | None:
        return self.controller.epsilon

    @property
    def initial_state(self) -> np.ndarray:
        return np.zeros(self.system.n) if not self.x0 else np.asarray(self.x0, dtype=float)

    def with_(self, **kw) -> "Scenario":
        return replace(self, **kw)

    def describe(self) -> dict:
        c = self.controller
        return {
            "name": self.name, "system": self.system.name, "mode": self.mode,
            "family": c.family, "task": c.task,
            "poles": None if c.poles is None else [complex(p).real if complex(p).imag == 0 else str(p)
                                                    for p in c.poles.roots],
            "epsilon": c.epsilon, "delta_threshold": c.delta_threshold,
            "dt": self.dt, "t_final": self.t_final, "seed": self.seed,
            "x0": [float(v) for v in self.initial_state],
            "reference": _describe_reference(self.reference),
        }


def _describe_reference(ref):
    if ref is None:
        return None
    if isinstance(ref, CosineReference):
        return {"beta": ref.beta, "alpha": ref.alpha, "omega": ref.omega}
    return "custom"


def _compiled_ok(scn: Scenario) -> bool:
    if getattr(scn.system, "name", "") != "example" or scn.normal_form.name != "example normal form":
        return False
    if scn.controller.task == "track" and not isinstance(scn.reference, CosineReference):
        return False
    return True


def integrate(scn: Scenario, path: BrownianPath, backend: str = "auto") -> HybridTrajectory:
    """Euler-Maruyama flow with controller jumps at t_k = k * eps.

    Between jumps every step is x <- x + (f + g u) dt + l dW (or the
    normal-form analogue); at jump instants only z_r changes, by b * u*.
    """
    if not math.isclose(path.dt, scn.dt, rel_tol=1e-12):
        raise ValueError(f"path step {path.dt} differs from scenario step {scn.dt}")
    if path.n_steps < scn.n_steps:
        raise ValueError("Brownian path shorter than the horizon")
    path = path.truncate(scn.n_steps) if path.n_steps > scn.n_steps else path
    if backend == "auto":
        backend = "compiled" if _compiled_ok(scn) else "python"
    if backend == "compiled":
        if not _compiled_ok(scn):
            raise ValueError("compiled backend supports only the built-in example with a cosine reference")
        traj = _integrate_compiled(scn, path)
    elif backend == "python":
        traj = _integrate_python(scn, path)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    traj.meta.update(scn.describe())
    traj.meta["backend"] = backend
    return traj


def _reference_rows(scn: Scenario, t: np.ndarray) -> np.ndarray:
    c = scn.controller
    if c.task == "track" and scn.reference is not None:
        if isinstance(scn.reference, CosineReference):
            ref = scn.reference
            return ref.beta + ref.alpha * np.cos(ref.omega * t)
        return np.array([scn.reference(ti)[0] for ti in t])
    return np.zeros_like(t)


def _integrate_python(scn: Scenario, path: BrownianPath) -> HybridTrajectory:
    sys, nf = scn.system, scn.normal_form
    if nf.to_x is None or nf.to_z is None:
        raise ValueError("normal form must carry the coordinate maps to_x/to_z")
    ctrl = bind(scn.controller, nf, scn.reference, sys, scn.dt)
    N, dt, s, r = scn.n_steps, scn.dt, scn.record_stride, nf.r
    m = scn.controller.eps_steps(dt) if ctrl.has_jumps else 0
    rows = N // s + 1
    n = sys.n
    out_t = np.empty(rows)
    out_x = np.empty((rows, n))
    out_z = np.empty((rows, n))
    out_u = np.empty(rows)
    out_W = np.empty(rows)
    flags = np.zeros(rows, dtype=np.int8)
    jumps: list[JumpRecord] = []

    x = scn.initial_state.copy()
    z = np.asarray(nf.to_z(x), dtype=float)
    W = 0.0
    x_start, z_start, u_start = x.copy(), z.copy(), 0.0
    dW = path.increments
    f, g, l = sys.f.value, sys.g.value, sys.l.value

    for i in range(N):
        t = i * dt
        xi = dW[i] / dt if ctrl.needs_noise else None
        u = ctrl.flow(t, z, xi)
        if m and i % m == 0:
            u_start = u
        if i % s == 0:
            q = i // s
            out_t[q], out_u[q], out_W[q] = t, u, W
            out_x[q], out_z[q] = x, z
        if scn.mode == "normal_form":
            z = z + nf.drift(z, u) * dt + nf.diffusion(z) * dW[i]
            x = np.asarray(nf.to_x(z), dtype=float)
        else:
            x = x + (f(x) + g(x) * u) * dt + l(x) * dW[i]
            z = np.asarray(nf.to_z(x), dtype=float)
        W += dW[i]
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z))):
            raise SimulationAborted("non-finite state", i + 1)
        if sys.guard is not None:
            msg = sys.guard(x)
            if msg:
                raise SimulationAborted(f"left the working region: {msg}", i + 1)
        if m and (i + 1) % m == 0:
            k = (i + 1) // m
            u_star, dz, est = ctrl.jump(k, (i + 1) * dt, z_start, z, x_start, x, u_start)
            x_pre, z_pre = x.copy(), z.copy()
            if dz != 0.0:
                z = z.copy()
                z[r - 1] += dz
                x = np.asarray(nf.to_x(z), dtype=float)
            jumps.append(JumpRecord(k, i + 1, (i + 1) * dt, x_pre, x.copy(), z_pre, z.copy(),
                                    u_star, dz, est))
            x_start, z_start = x.copy(), z.copy()
            if (i + 1) % s == 0:
                flags[(i + 1) // s] = 1
    q = N // s
    out_t[q], out_u[q], out_W[q] = N * dt, math.nan, W
    out_x[q], out_z[q] = x, z
    return HybridTrajectory(out_t, out_x, out_z, out_u, out_z[:, 0].copy(), _reference_rows(scn, out_t),
                            out_W, flags, JumpLog.from_records(jumps, n), dt, s, r, path,
                            {"total_compensation_controller": getattr(ctrl, "total_compensation", 0.0)})


_FAMILY_CODE = {"idealistic": 0, "zero_noise": 1, "hybrid": 2, "open_loop": 3}


def _integrate_compiled(scn: Scenario, path: BrownianPath) -> HybridTrajectory:
    from . import _kernels as K

    c = scn.controller
    N, dt, s = scn.n_steps, scn.dt, scn.record_stride
    rows = N // s + 1
    m = c.eps_steps(dt) if c.family == "hybrid" else 1
    n_j = N // m if c.family == "hybrid" else 0
    out_t = np.empty(rows)
    out_x = np.empty((rows, 3))
    out_z = np.empty((rows, 3))
    out_u = np.empty(rows)
    out_W = np.empty(rows)
    flags = np.zeros(rows, dtype=np.int8)
    j_step = np.zeros(n_j, dtype=np.int64)
    j_xpre, j_xpost = np.zeros((n_j, 3)), np.zeros((n_j, 3))
    j_zpre, j_zpost = np.zeros((n_j, 3)), np.zeros((n_j, 3))
    j_ustar, j_dz, j_dwhat, j_lnorm = (np.zeros(n_j) for _ in range(4))
    j_skip = np.zeros(n_j, dtype=np.int8)

    if c.task == "linearise":
        track, d0, d1, beta, alpha, omega = 0, 0.0, 0.0, 0.0, 0.0, 0.0
    else:
        if c.poles.r != 2:
            raise ValueError("example has relative degree 2")
        d0, d1 = c.poles.coefficients
        track = 1
        if c.task == "track":
            beta, alpha, omega = scn.reference.beta, scn.reference.alpha, scn.reference.omega
        else:
            beta, alpha, omega = 0.0, 0.0, 0.0
    mode = K.MODE_Z if scn.mode == "normal_form" else K.MODE_X
    status, step, nj = K.run_example(
        mode, _FAMILY_CODE[c.family], track, scn.initial_state.astype(float),
        np.ascontiguousarray(path.increments), dt, m, d0, d1, beta, alpha, omega, c.v,
        c.delta_threshold, 1.4, s, out_t, out_x, out_z, out_u, out_W, flags,
        j_step, j_xpre, j_xpost, j_zpre, j_zpost, j_ustar, j_dz, j_dwhat, j_skip, j_lnorm)
    if status == K.NONFINITE:
        raise SimulationAborted("non-finite state", step)
    if status == K.GUARD:
        raise SimulationAborted("left the working region: |x2| > 1.4 (tan/cos singularity at pi/2)", step)
    if status == K.SINGULAR_B:
        raise SimulationAborted("|b(z)| below 1e-9, control undefined", step)
    eps = c.epsilon if c.family == "hybrid" else float("nan")
    steps = j_step[:nj].copy()
    jumps = JumpLog(steps // m, steps, steps * dt, j_xpre[:nj].copy(), j_xpost[:nj].copy(),
                    j_zpre[:nj].copy(), j_zpost[:nj].copy(), j_ustar[:nj].copy(), j_dz[:nj].copy(),
                    j_dwhat[:nj].copy(), j_skip[:nj].astype(bool), j_lnorm[:nj].copy(),
                    np.full(nj, np.nan))
    return HybridTrajectory(out_t, out_x, out_z, out_u, out_z[:, 0].copy(), _reference_rows(scn, out_t),
                            out_W, flags, jumps, dt, s, 2, path,
                            {"total_compensation_controller": float(j_dz[:nj].sum()), "epsilon": eps})


def resample(traj: HybridTrajectory, stride: int) -> HybridTrajectory:
    """Every ``stride``-th row plus the final row; jump records are kept whole."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    n = len(traj.t)
    idx = np.arange(0, n, stride)
    if idx[-1] != n - 1:
        idx = np.append(idx, n - 1)
    eff = traj.stride * stride if (n - 1) % stride == 0 else traj.stride
    return HybridTrajectory(traj.t[idx], traj.x[idx], traj.z[idx], traj.u[idx], traj.y[idx],
                            traj.y_ref[idx], traj.W[idx], traj.jump[idx], traj.jumps,
                            traj.dt, eff, traj.r, traj.path, dict(traj.meta))


def euler_maruyama_scalar(drift: Callable, diffusion: Callable, x0, increments: np.ndarray,
                          dt: float, bound: float | None = None,
                          domain: float = math.inf) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised Euler-Maruyama for a batch of scalar SDEs.

    ``increments`` has shape (paths, steps).  Returns the final state, the
    running sup |x|, and a mask of paths that left ``domain`` or went
    non-finite (those are frozen at NaN from then on).
    """
    x = np.array(x0, dtype=float, copy=True)
    sup = np.abs(x)
    dead = np.zeros(x.shape, dtype=bool)
    for i in range(increments.shape[1]):
        alive = ~dead
        xa = x[alive]
        x[alive] = xa + drift(xa) * dt + diffusion(xa) * increments[alive, i]
        bad = alive & (~np.isfinite(x) | (np.abs(x) >= domain))
        if bad.any():
            dead |= bad
            x[bad] = np.nan
        np.maximum(sup, np.where(dead, np.inf, np.abs(x)), out=sup)
    return x, sup, dead
