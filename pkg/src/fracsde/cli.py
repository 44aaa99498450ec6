"""Command line interface: ``fracsde <subcommand> [options]``.

Every subcommand builds or loads an ``ExperimentConfig``, runs it and writes
CSV (default) or the JSON report. The exit status is 0 iff every declared
check passed; failures are listed as JSON on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .config import SCHEMA_VERSION, ConfigError, ExperimentConfig, load_config
from .convergence import ConvergenceReport
from .experiments import run_experiment
from .registry import UnknownCoefficient

EXIT_CHECKS_FAILED = 1
EXIT_CONFIG = 2


def _floats(text: str) -> list[float]:
    """Comma-separated numbers; ``2^-4`` style powers are accepted."""
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if "^" in tok:
            base, exp = tok.split("^", 1)
            out.append(float(base) ** float(exp))
        else:
            out.append(float(tok))
    return out


def _probes(text: str) -> list[list[float]]:
    """``t:x,t:x`` pairs."""
    pairs = []
    for tok in text.split(","):
        t, x = tok.split(":")
        pairs.append([float(t), float(x)])
    return pairs


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="JSON experiment config")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--threads", type=int, help="worker threads (default: FRACSDE_THREADS or 1)")
    p.add_argument("--out", type=Path, help="output file (default: stdout)")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="fracsde", description="fBm-driven doubly stochastic BSDE laboratory")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fbm", parents=[common], help="sample fBm paths")
    p.add_argument("--hurst", type=float, default=0.75)
    p.add_argument("--grid-n", type=int, default=1024)
    p.add_argument("--horizon", type=float, default=1.0)
    p.add_argument("--paths", type=int, default=1)
    p.add_argument("--method", choices=["circulant", "cholesky"], default="circulant")

    for name, helptext in (("bracket", "generalized bracket over an eps schedule"), ("ito-check", "change-of-variables residuals")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--eps-schedule", type=_floats, help="comma-separated eps values, e.g. 2^-4,2^-5,2^-6")
        p.add_argument("--paths", type=int)
        p.add_argument("--hurst", type=float)
        p.add_argument("--ratio", type=int, help="eps / dt")
        p.add_argument("--case", help="process (fbm|bm) for bracket; named field for ito-check")

    p = sub.add_parser("doss", parents=[common], help="Doss flow jet as JSON")
    p.add_argument("--g", default="identity")
    p.add_argument("--y", type=float, default=1.0)
    p.add_argument("--z", type=float, default=0.5)
    p.add_argument("--jet", type=int, default=3, choices=[0, 1, 2, 3], help="derivative order")

    p = sub.add_parser("bsde", parents=[common], help="transformed BSDE by regression")
    p.add_argument("--paths", type=int)
    p.add_argument("--basis-degree", type=int)

    p = sub.add_parser("bdsde", parents=[common], help="doubly stochastic residual over an eps schedule")
    p.add_argument("--eps-schedule", type=_floats)
    p.add_argument("--paths", type=int)

    p = sub.add_parser("pde", parents=[common], help="random PDE, SPDE residual and Feynman-Kac probes")
    p.add_argument("--nx", type=int, help="spatial nodes (default: finest stable grid)")
    p.add_argument("--grid-n", type=int, help="BSDE time steps for the probes")
    p.add_argument("--probes", type=_probes, help="t:x pairs, e.g. 1:0,1:1")

    sub.add_parser("convergence", parents=[common], help="level table of any config")
    return parser


def _base(kind: str, seed: int | None) -> dict:
    return {"version": SCHEMA_VERSION, "kind": kind, "seed": 0 if seed is None else seed}


def _config(args) -> ExperimentConfig:
    cmd = args.command
    if args.config is not None:
        cfg = load_config(args.config)
    elif cmd == "fbm":
        doc = _base("fbm", args.seed)
        doc.update(hurst=args.hurst, horizon=args.horizon, paths=args.paths, grid={"n_steps": args.grid_n, "method": args.method})
        cfg = ExperimentConfig.from_dict(doc)
    elif cmd == "doss":
        doc = _base("doss", args.seed)
        doc.update(coefficients={"g": args.g}, doss={"y": args.y, "z": args.z, "order": args.jet})
        cfg = ExperimentConfig.from_dict(doc)
    elif cmd in ("bracket", "ito-check"):
        kind = "bracket"
        coeffs = {"process": "fbm"}
        if cmd == "ito-check":
            field = args.case or "half_square"
            kind = "mixed_ito" if field in ("x", "y", "x_exp_y") else "ito_check"
            coeffs = {"field": field}
        elif args.case:
            coeffs = {"process": args.case}
        doc = _base(kind, args.seed)
        doc.update(coefficients=coeffs, eps_schedule=args.eps_schedule or [2.0**-k for k in range(4, 9)])
        cfg = ExperimentConfig.from_dict(doc)
    else:
        raise ConfigError(f"{cmd} needs --config")

    over = {"seed": args.seed}
    if getattr(args, "paths", None) is not None and cmd != "fbm":
        over["paths"] = args.paths
    if getattr(args, "hurst", None) is not None and cmd != "fbm":
        over["hurst"] = args.hurst
    if getattr(args, "eps_schedule", None) is not None:
        over["eps_schedule"] = args.eps_schedule
    if getattr(args, "ratio", None) is not None:
        over["grid"] = {"ratio": args.ratio}
    if getattr(args, "basis_degree", None) is not None:
        over["solver"] = {"degree": args.basis_degree}
    if cmd == "pde":
        grid = {}
        if args.nx is not None:
            grid["n_x"] = args.nx
        if args.grid_n is not None:
            grid["bsde_steps"] = args.grid_n
        if grid:
            over["grid"] = grid
        if args.probes:
            over["probes"] = args.probes
    return cfg.with_overrides(**over)


def _levels_csv(report: ConvergenceReport) -> ConvergenceReport:
    slope = report.slope if report.slope is not None else float("nan")
    rows = [(i, lv.scale, lv.delta, lv.median, lv.p90, slope) for i, lv in enumerate(report.levels)]
    return ConvergenceReport(report.kind, ["level", "scale", "delta", "median", "p90", "slope"], rows)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        report = run_experiment(cfg, threads=args.threads)
    except (ConfigError, UnknownCoefficient) as exc:
        msg = exc.args[0] if exc.args else str(exc)
        print(json.dumps({"error": "config", "message": msg}), file=sys.stderr)
        return EXIT_CONFIG

    table = _levels_csv(report) if args.command == "convergence" else report
    if cfg.kind == "doss" and args.format == "csv":
        text = json.dumps(report.payload["jet"], indent=2) + "\n"
    elif args.format == "json":
        text = report.to_json()
    else:
        text = table.to_csv()
    if args.out is None:
        try:
            sys.stdout.write(text)
            sys.stdout.flush()
        except BrokenPipeError:
            # reader closed early (e.g. `| head`); silence the flush at exit
            os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
    else:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_bytes(text.encode())
    if not report.passed:
        print(json.dumps({"error": "checks", "failures": report.failures}), file=sys.stderr)
        return EXIT_CHECKS_FAILED
    return 0


if __name__ == "__main__":
    sys.exit(main())
