"""``flowspectra`` command line: evolve, verify, plot, oracle.

Exit codes: 0 success, 1 error (bad config, unknown theorem, failed check),
2 flow truncated by the singularity guard (``evolve`` only).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .config import THEOREMS, ConfigError, ExperimentConfig, load_config
from .flow import FlowKind, FlowTrace, evolve
from .mesh import Mesh, MeshError
from .monotonicity import (
    SpectralObserver,
    Verdict,
    to_jsonable,
    check_area_identity,
    check_metric_comparison,
    check_theorem_hk,
    check_theorem_psi_phi,
    check_theorem_tt1,
    check_variation,
    monotone_quantities,
)
from .oracles import OutOfDomain, example_rate, sphere_at
from .spectral import EigenSolverError, write_eigenpair

log = logging.getLogger("flowspectra")

EXIT_OK, EXIT_ERROR, EXIT_TRUNCATED = 0, 1, 2
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with 1 rather than argparse's 2, which means truncation here."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


@dataclass
class Run:
    config: ExperimentConfig
    mesh: Mesh
    phi: np.ndarray
    trace: FlowTrace
    observer: SpectralObserver
    seconds: float


def run_experiment(cfg: ExperimentConfig) -> Run:
    mesh = cfg.geometry.build()
    phi = cfg.weight.sample(mesh)
    obs = SpectralObserver(phi, cfg.law, seed=cfg.seed)
    t0 = time.perf_counter()
    trace = evolve(
        mesh, cfg.law, phi, cfg.t_end, [obs],
        cfl=cfg.cfl, cadence=cfg.cadence, h_ceiling=cfg.h_ceiling,
    )
    seconds = time.perf_counter() - t0
    if cfg.law.kind is FlowKind.SQUARED_VOLUME_PRESERVING and trace.rows[0]["H_min"] > 0:
        monotone_quantities(trace, cfg.verify.get("variant", "text"))
    log.info("%s: %d rows in %.2f s", cfg.law.name, len(trace.rows), seconds)
    return Run(cfg, mesh, phi, trace, obs, seconds)


def run_check(name: str, run: Run | None, cfg: ExperimentConfig, mesh=None, phi=None) -> Verdict:
    v = cfg.verify
    if name == "metric-cmp":
        parts = [check_metric_comparison(mesh, phi, e) for e in v["eps"]]
        return Verdict(
            "metric-cmp", True, all(p.conclusion_holds for p in parts),
            max(p.max_violation for p in parts), sum(p.samples for p in parts),
            {"per_eps": [p.details for p in parts]},
        )
    trace = run.trace
    if name == "tt1":
        return check_theorem_tt1(trace, v["tol_mono"])
    if name == "hk":
        return check_theorem_hk(trace, v["tol_mono"])
    if name == "psi-phi":
        return check_theorem_psi_phi(trace, v["tol_mono"], v["variant"])
    if name == "variation":
        return check_variation(trace, v["tol"], v["floor"])
    if name == "lemma21":
        return check_area_identity(trace, v["tol"])
    raise ValueError(f"unknown theorem {name!r}")


def _summary(run: Run, verdicts: dict[str, Verdict]) -> dict[str, Any]:
    tr = run.trace
    _, lam = tr.sampled("lambda")
    last = run.observer.pairs[-1] if run.observer.pairs else None
    return to_jsonable({
        "version": __version__,
        "law": tr.law.name,
        "dim": tr.dim,
        "n_vertices": run.mesh.n_vertices,
        "t_end": run.config.t_end,
        "t_final": tr.meta["t_final"],
        "steps": tr.rows[-1]["step"],
        "truncated": tr.truncated,
        "reason": tr.reason,
        "lambda_initial": lam[0] if len(lam) else None,
        "lambda_final": lam[-1] if len(lam) else None,
        "final_residual": last.residual if last else None,
        "verdicts": {k: v.to_dict() for k, v in verdicts.items()},
    })


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def cmd_evolve(args) -> int:
    cfg = load_config(args.config)
    cfg.output.mkdir(parents=True, exist_ok=True)
    run = run_experiment(cfg)
    run.trace.to_csv(cfg.output / "trace.csv")
    if run.observer.pairs:
        write_eigenpair(run.observer.pairs[-1], cfg.output / "eigen.csv", cfg.output / "eigen.json")
    verdicts = {c: run_check(c, run, cfg, run.mesh, run.phi) for c in cfg.checks}
    _write_json(cfg.output / "summary.json", _summary(run, verdicts))
    if run.trace.truncated:
        print(f"truncated at t={run.trace.meta['t_final']:.6g}: {run.trace.reason}", file=sys.stderr)
        return EXIT_TRUNCATED
    if any(not v.passed for v in verdicts.values()):
        return EXIT_ERROR
    return EXIT_OK


def cmd_verify(args) -> int:
    if args.theorem not in THEOREMS:
        print(f"unknown theorem {args.theorem!r}; known: {', '.join(THEOREMS)}", file=sys.stderr)
        return EXIT_ERROR
    cfg = load_config(args.config)
    cfg.output.mkdir(parents=True, exist_ok=True)
    out = Path(args.output) if args.output else cfg.output / f"verdict_{args.theorem}.json"
    try:
        if args.theorem == "metric-cmp":
            mesh = cfg.geometry.build()
            verdict = run_check(args.theorem, None, cfg, mesh, cfg.weight.sample(mesh))
        else:
            run = run_experiment(cfg)
            run.trace.to_csv(cfg.output / "trace.csv")
            verdict = run_check(args.theorem, run, cfg)
            verdict.details["truncated"] = run.trace.truncated
    except ValueError as exc:
        _write_json(out, {"theorem": args.theorem, "error": str(exc)})
        raise
    verdict.write_json(out)
    print(json.dumps({
        "theorem": verdict.theorem,
        "hypothesis_holds": verdict.hypothesis_holds,
        "conclusion_holds": verdict.conclusion_holds,
        "max_violation": verdict.max_violation,
        "passed": verdict.passed,
    }))
    return EXIT_OK if verdict.passed else EXIT_ERROR


def cmd_plot(args) -> int:
    from .plot import MissingColumns, plot_trace

    trace = Path(args.trace)
    if not trace.is_file():
        print(f"trace file {trace} not found", file=sys.stderr)
        return EXIT_ERROR
    reason = args.truncated
    summary = trace.with_name("summary.json")
    if reason is None and summary.is_file():
        info = json.loads(summary.read_text())
        if info.get("truncated"):
            reason = info.get("reason") or "singularity guard"
    try:
        plot_trace(trace, args.output, reason)
    except MissingColumns as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


def cmd_oracle(args) -> int:
    try:
        s = sphere_at(args.R, args.n, args.t)
        rate = example_rate(args.R, args.n, args.t)
    except OutOfDomain as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_ERROR
    print(json.dumps({"r": s.r, "H": s.H, "lambda": s.lam, "T_sing": s.T_sing,
                      "lambda_rate": rate}, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="flowspectra", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    e = sub.add_parser("evolve", help="run a flow and write trace.csv and summary.json")
    e.add_argument("config")
    e.set_defaults(func=cmd_evolve)

    v = sub.add_parser("verify", help="run a flow and check one theorem")
    v.add_argument("config")
    v.add_argument("--theorem", required=True, help=" | ".join(THEOREMS))
    v.add_argument("-o", "--output", help="verdict JSON path (default: <output>/verdict_<theorem>.json)")
    v.set_defaults(func=cmd_verify)

    pl = sub.add_parser("plot", help="render a trace CSV as SVG")
    pl.add_argument("trace")
    pl.add_argument("-o", "--output", required=True)
    pl.add_argument("--truncated", metavar="REASON", help="force the truncation marker")
    pl.set_defaults(func=cmd_plot)

    o = sub.add_parser("oracle", help="closed-form reference solutions")
    osub = o.add_subparsers(dest="shape", required=True, parser_class=_Parser)
    s = osub.add_parser("sphere")
    s.add_argument("--R", type=float, required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--t", type=float, required=True)
    s.set_defaults(func=cmd_oracle)
    return p


def _configure_logging() -> None:
    name = os.environ.get("FLOWSPECTRA_LOG", "error").strip().lower()
    level = LOG_LEVELS.get(name)
    logging.basicConfig(level=level or logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    if level is None:
        log.error("FLOWSPECTRA_LOG=%r not in %s; using 'error'", name, sorted(LOG_LEVELS))


def main(argv: Sequence[str] | None = None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, MeshError, EigenSolverError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
