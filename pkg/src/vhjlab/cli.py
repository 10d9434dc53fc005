"""Command line entry point.

Exit codes: 0 success, 1 scientific failure (invariant violation, failed
search), 2 configuration or I/O error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

import numpy as np
import yaml

from .config import RunConfig, build_datum, emit_config, load_config
from .diagnostics import InconsistentEvents
from .experiments import (
    BisectionError,
    check_invariants,
    find_lambda_star,
    rate_study,
    record_from_trajectory,
    summary_table,
    sweep,
)
from .initial_data import canonical_psi
from .nonlinearity import ConfigurationError
from .persistence import MANIFEST, PersistenceError, load_run, persist_run, write_bytes
from .report import emit_report
from .solver import LadderMonotonicityError, SteppingError, run_ladder, run_single_k

log = logging.getLogger("vhjlab")

EXIT_OK, EXIT_SCIENCE, EXIT_CONFIG = 0, 1, 2


def _out_dir(cfg: RunConfig, config_path: str) -> str:
    if os.path.isabs(cfg.output):
        return cfg.output
    return os.path.join(os.path.dirname(os.path.abspath(config_path)), cfg.output)


def _run_record(cfg: RunConfig, base_dir: str):
    datum = build_datum(cfg.datum, cfg.solver.n, base_dir)
    if cfg.kind == "single":
        tr = run_single_k(datum, np.inf, cfg.solver)
        return record_from_trajectory(tr, datum, cfg.diagnostics, seed=cfg.seed)
    if cfg.kind == "ladder":
        L = run_ladder(datum, cfg.solver)
        rec = record_from_trajectory(L.top, datum, cfg.diagnostics, seed=cfg.seed)
        rec.ladder_summary = {"ks": [float(k) for k in L.ks], "levels": len(L.ks),
                              "final_gap": float(np.max(L.gaps[-1])) if len(L.gaps) else 0.0,
                              "monotonicity_violation": float(L.monotonicity_violation)}
        return rec
    return rate_study(datum, cfg.solver, cfg.diagnostics, seed=cfg.seed, keep_ladder=False)


def cmd_run(cfg: RunConfig, path: str) -> int:
    if cfg.kind == "lambda_star":
        return cmd_lambda_star(cfg, path)
    if cfg.kind == "sweep":
        return cmd_sweep(cfg, path)
    out = _out_dir(cfg, path)
    rec = _run_record(cfg, os.path.dirname(os.path.abspath(path)))
    persist_run(rec, out)
    write_bytes(os.path.join(out, "config.yaml"), emit_config(cfg).encode())
    print(f"{rec.classification} p={rec.p:g} lam={rec.lam:g} -> {out}")
    bad = check_invariants(rec)
    for msg in bad:
        print(f"invariant violated: {msg}", file=sys.stderr)
    return EXIT_SCIENCE if bad else EXIT_OK


def cmd_lambda_star(cfg: RunConfig, path: str) -> int:
    if cfg.lambda_star is None:
        raise ConfigurationError("lambda_star: section required for the lambda-star command")
    if not cfg.datum.canonical:
        raise ConfigurationError("datum.type: the threshold search scales the canonical datum")
    ls = cfg.lambda_star
    out = _out_dir(cfg, path)
    os.makedirs(out, exist_ok=True)
    result = {"bracket": list(ls.bracket), "tol": ls.tol}
    try:
        lam, hist = find_lambda_star(canonical_psi(cfg.datum.x0), ls.bracket, ls.tol, cfg.solver,
                                     retry_scale=ls.retry_scale, diag=cfg.diagnostics)
        result.update(lambda_star=float(lam), converged=True)
        code = EXIT_OK
    except BisectionError as exc:
        hist = exc.history
        result.update(lambda_star=None, converged=False, error=str(exc))
        code = EXIT_SCIENCE
    result["history"] = [[float(a), float(b), float(c), None if d is None else bool(d)] for a, b, c, d in hist]
    write_bytes(os.path.join(out, "lambda_star.yaml"), yaml.safe_dump(result, sort_keys=True).encode())
    print(f"lambda* = {result['lambda_star']!r} ({len(hist)} evaluations) -> {out}")
    if code:
        print(result["error"], file=sys.stderr)
    return code


def cmd_sweep(cfg: RunConfig, path: str) -> int:
    if cfg.sweep is None:
        raise ConfigurationError("sweep: section required for the sweep command")
    if not cfg.datum.canonical:
        raise ConfigurationError("datum.type: sweeps scale the canonical datum")
    out = _out_dir(cfg, path)
    recs = sweep(cfg.sweep.cells, cfg.solver, canonical_psi(cfg.datum.x0), workers=cfg.sweep.workers,
                 seed=cfg.seed, diag=cfg.diagnostics)
    for i, rec in enumerate(recs):
        persist_run(rec, os.path.join(out, f"cell{i:03d}"))
    write_bytes(os.path.join(out, "summary.csv"), summary_table(recs).encode())
    print(summary_table(recs), end="")
    return EXIT_OK


def _run_dirs(paths):
    found = []
    for p in paths:
        if os.path.isfile(os.path.join(p, MANIFEST)):
            found.append(p)
            continue
        if not os.path.isdir(p):
            raise PersistenceError(f"{p}: not a directory")
        for sub in sorted(os.listdir(p)):
            if os.path.isfile(os.path.join(p, sub, MANIFEST)):
                found.append(os.path.join(p, sub))
    if not found:
        raise PersistenceError(f"{', '.join(paths)}: no run records found")
    return found


def cmd_report(dirs, out) -> int:
    recs = [load_run(d) for d in _run_dirs(dirs)]
    written = emit_report(recs, out)
    print(f"{len(written)} files -> {out}")
    return EXIT_OK


def cmd_verify(directory) -> int:
    bad = 0
    for d in _run_dirs([directory]):
        rec = load_run(d)
        msgs = check_invariants(rec)
        for m in msgs:
            print(f"{d}: {m}", file=sys.stderr)
        bad += len(msgs)
        print(f"{d}: {'FAIL' if msgs else 'ok'} ({rec.classification})")
    return EXIT_SCIENCE if bad else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vhjlab", description="Gradient blow-up and boundary-loss experiments")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="verb", required=True)
    for verb in ("run", "lambda-star", "sweep"):
        s = sub.add_parser(verb)
        s.add_argument("config")
        s.add_argument("--output", help="override the configured output directory")
    s = sub.add_parser("report")
    s.add_argument("dirs", nargs="+")
    s.add_argument("--out", default=None, help="report directory (default: <first dir>/report)")
    s = sub.add_parser("verify")
    s.add_argument("dir")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        if args.verb in ("run", "lambda-star", "sweep"):
            cfg = load_config(args.config)
            if args.output:
                cfg = replace(cfg, output=os.path.abspath(args.output))
            if args.verb == "lambda-star":
                return cmd_lambda_star(cfg, args.config)
            if args.verb == "sweep":
                return cmd_sweep(cfg, args.config)
            return cmd_run(cfg, args.config)
        if args.verb == "report":
            return cmd_report(args.dirs, args.out or os.path.join(args.dirs[0], "report"))
        return cmd_verify(args.dir)
    except (ConfigurationError, PersistenceError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InconsistentEvents, LadderMonotonicityError, SteppingError) as exc:
        print(f"scientific failure: {exc}", file=sys.stderr)
        return EXIT_SCIENCE


if __name__ == "__main__":
    sys.exit(main())
