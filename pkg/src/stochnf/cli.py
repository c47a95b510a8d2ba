"""Command-line entry point: analyze, simulate, figures, estimate."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ExperimentConfig, load_config
from .experiments import (
    run_analyze,
    run_estimator_study,
    run_fig1,
    run_fig2_fig3,
    run_simulate,
)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="INI configuration file")
    p.add_argument("--seed", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("--eps", type=float, nargs="+",
                   help="compensation period(s); one value for simulate, a ladder otherwise")
    p.add_argument("--t-final", type=float)
    p.add_argument("--out", type=Path)
    p.add_argument("--fast", action="store_true", help="dt=1e-5, eps >= 1e-4, tolerances x10")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stochnf", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="relative degree, normal form and zero dynamics")
    _common(p)
    p.add_argument("--system", help="registered system id (example, example-printed-l, integrator)")
    p.add_argument("--xbar", type=float, nargs="+")
    p.add_argument("--stability", action="store_true", help="also run the zero-dynamics probe")

    p = sub.add_parser("simulate", help="one closed-loop run from the config")
    _common(p)
    p.add_argument("--family", choices=["idealistic", "zero_noise", "hybrid", "open_loop"])
    p.add_argument("--task", choices=["linearise", "track", "stabilise"])
    p.add_argument("--mode", choices=["normal_form", "x"])

    p = sub.add_parser("figures", help="reproduce the tracking figures as CSV")
    _common(p)
    p.add_argument("which", choices=["fig1", "fig2", "fig3", "all"])

    p = sub.add_parser("estimate", help="Brownian-increment estimator study")
    _common(p)
    p.add_argument("--seeds", type=int, nargs="*")
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.fast:
        cfg = cfg.fast()
    cfg = cfg.with_(seed=args.seed, dt=args.dt, out=str(args.out) if args.out else None)
    if args.t_final is not None:
        if args.command == "estimate":
            cfg = cfg.with_(est_t_final=args.t_final)
        elif args.command == "figures":
            cfg = cfg.with_(t_final=args.t_final, fig_t_final=args.t_final)
        else:
            cfg = cfg.with_(t_final=args.t_final)
    if args.eps:
        eps = tuple(args.eps)
        cfg = cfg.with_(epsilon=eps[0], fig_epsilons=eps, est_epsilons=eps)
    return cfg


def _emit(report, out: Path, stem: str) -> None:
    print(report.render())
    report.to_json(out / f"{stem}.json")
    if report.rows:
        report.to_csv(out / f"{stem}_metrics.csv")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = resolve_config(args)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config_used.ini").write_text(cfg.to_ini())
    reports = []

    if args.command == "analyze":
        cfg = cfg.with_(system=args.system, xbar=tuple(args.xbar) if args.xbar else None)
        rep = run_analyze(cfg, stability=args.stability)
        probe = rep.meta.pop("probe", None)
        if probe is not None:
            rep.files.append(str(probe.to_csv(out / "stability_paths.csv")))
        _emit(rep, out, "analyze")
        print(json.dumps(rep.meta["relative_degree"], indent=2, default=str))
        reports.append(rep)
    elif args.command == "simulate":
        cfg = cfg.with_(family=args.family, task=args.task, mode=args.mode)
        rep = run_simulate(cfg, out)
        _emit(rep, out, "simulate")
        reports.append(rep)
    elif args.command == "figures":
        if args.which in ("fig1", "all"):
            rep = run_fig1(cfg, out=out)
            _emit(rep, out, "fig1")
            reports.append(rep)
        if args.which in ("fig2", "fig3", "all"):
            for s in sorted({cfg.seed, *cfg.fig_seeds}) if args.seed is None else [cfg.seed]:
                rep = run_fig2_fig3(cfg, seed=s, out=out)
                _emit(rep, out, f"fig23_seed{s}")
                reports.append(rep)
    elif args.command == "estimate":
        rep = run_estimator_study(cfg, seeds=args.seeds if args.seeds else None, out=out)
        _emit(rep, out, "estimate")
        reports.append(rep)
    ok = all(r.passed for r in reports)
    print("ALL CHECKS PASSED" if ok else "SOME CHECKS FAILED")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
