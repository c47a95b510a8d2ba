"""INI experiment configuration.

Every key is optional; missing keys take the defaults below.  Example::

    [run]
    seed = 0
    dt = 1e-6
    t_final = 5.0
    x0 = 0, 0, 0
    out = out
    csv_stride = 1000

    [controller]
    family = hybrid
    task = track
    poles = -3, -4
    epsilon = 1e-3
    delta_threshold = 1e-6

    [reference]
    beta = 0.1
    alpha = 0.01
    omega = 5.0

    [figures]
    epsilons = 1e-3, 1e-4, 1e-5
    t_final = 10.0
    seeds = 0

    [estimator]
    seeds = 0, 1, 2, 3, 4
    epsilons = 1e-3, 1e-4, 1e-5
    t_final = 0.5
    x0 = 0.2, 0, 0

    [analysis]
    system = example
    xbar = 0, 0, 0
    radius = 0.2
    samples = 200
    stability_paths = 50
    stability_horizon = 10.0
    stability_dt = 1e-4
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

__all__ = ["ExperimentConfig", "load_config", "FAST_PROFILE"]


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(";", ",").split(",") if v.strip())


def _complexes(text: str) -> tuple[complex, ...]:
    out = []
    for v in text.replace(";", ",").split(","):
        v = v.strip().replace(" ", "")
        if v:
            c = complex(v.replace("i", "j"))
            out.append(c.real if c.imag == 0 else c)
    return tuple(out)


@dataclass(frozen=True)
class ExperimentConfig:
    # [run]
    seed: int = 0
    dt: float = 1e-6
    t_final: float = 5.0
    x0: tuple[float, ...] = (0.0, 0.0, 0.0)
    mode: str = "normal_form"
    out: str = "out"
    csv_stride: int = 1000
    backend: str = "auto"
    # [controller]
    family: str = "hybrid"
    task: str = "track"
    poles: tuple = (-3.0, -4.0)
    epsilon: float = 1e-3
    delta_threshold: float = 1e-6
    v: float = 0.0
    # [reference]
    beta: float = 0.1
    alpha: float = 0.01
    omega: float = 5.0
    # [figures]
    fig_epsilons: tuple[float, ...] = (1e-3, 1e-4, 1e-5)
    fig_t_final: float = 10.0
    fig_seeds: tuple[int, ...] = (0,)
    # [estimator]
    est_seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    est_epsilons: tuple[float, ...] = (1e-3, 1e-4, 1e-5)
    est_t_final: float = 0.5
    est_x0: tuple[float, ...] = (0.2, 0.0, 0.0)
    # [analysis]
    system: str = "example"
    xbar: tuple[float, ...] = (0.0, 0.0, 0.0)
    radius: float = 0.2
    samples: int = 200
    stability_paths: int = 50
    stability_horizon: float = 10.0
    stability_dt: float = 1e-4
    # tolerance multiplier for in-run assertions (10 under --fast)
    tol_scale: float = 1.0

    def with_(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw)

    def fast(self) -> "ExperimentConfig":
        return replace(self, **FAST_PROFILE)

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        for section, keys in _SECTIONS.items():
            cp[section] = {}
            for ini_key, attr, _ in keys:
                val = getattr(self, attr)
                if isinstance(val, tuple):
                    val = ", ".join(str(v) for v in val)
                cp[section][ini_key] = str(val)
        from io import StringIO
        buf = StringIO()
        cp.write(buf)
        return buf.getvalue()

    def as_dict(self) -> dict:
        d = asdict(self)
        d["poles"] = [str(p) for p in self.poles]
        return d


FAST_PROFILE = dict(dt=1e-5, fig_epsilons=(1e-2, 1e-3, 1e-4), est_epsilons=(1e-2, 1e-3, 1e-4),
                    epsilon=1e-3, tol_scale=10.0)

_SECTIONS = {
    "run": [("seed", "seed", int), ("dt", "dt", float), ("t_final", "t_final", float),
            ("x0", "x0", _floats), ("mode", "mode", str), ("out", "out", str),
            ("csv_stride", "csv_stride", int), ("backend", "backend", str),
            ("tol_scale", "tol_scale", float)],
    "controller": [("family", "family", str), ("task", "task", str), ("poles", "poles", _complexes),
                   ("epsilon", "epsilon", float), ("delta_threshold", "delta_threshold", float),
                   ("v", "v", float)],
    "reference": [("beta", "beta", float), ("alpha", "alpha", float), ("omega", "omega", float)],
    "figures": [("epsilons", "fig_epsilons", _floats), ("t_final", "fig_t_final", float),
                ("seeds", "fig_seeds", _ints)],
    "estimator": [("seeds", "est_seeds", _ints), ("epsilons", "est_epsilons", _floats),
                  ("t_final", "est_t_final", float), ("x0", "est_x0", _floats)],
    "analysis": [("system", "system", str), ("xbar", "xbar", _floats), ("radius", "radius", float),
                 ("samples", "samples", int), ("stability_paths", "stability_paths", int),
                 ("stability_horizon", "stability_horizon", float),
                 ("stability_dt", "stability_dt", float)],
}

assert {a for keys in _SECTIONS.values() for _, a, _ in keys} == {f.name for f in fields(ExperimentConfig)}


def load_config(path=None, text: str | None = None) -> ExperimentConfig:
    """Read an INI file (or string); unknown sections or keys are errors."""
    cp = configparser.ConfigParser()
    if path is not None:
        with open(Path(path)) as fh:
            cp.read_file(fh)
    elif text is not None:
        cp.read_string(text)
    values = {}
    for section in cp.sections():
        if section not in _SECTIONS:
            raise KeyError(f"unknown config section [{section}]")
        known = {k: (a, conv) for k, a, conv in _SECTIONS[section]}
        for key, raw in cp[section].items():
            if key not in known:
                raise KeyError(f"unknown key {key!r} in [{section}]")
            attr, conv = known[key]
            values[attr] = conv(raw)
    return ExperimentConfig(**values)
