"""Experiment runner: ``pintoc --config run.cfg --intervals 2,4,8 --output out/``."""
from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from dataclasses import dataclass, replace

from .algorithms import RunConfig, run
from .config import ConfigError, ExperimentConfig, override, parse_config, serialize_config
from .diagnostics import check_hypotheses, estimate_beta, write_diagnostics
from .errors import ConfigurationError, PintocError
from .oracle import MAX_UNKNOWNS, solve_kkt_dense

RUN_FIELDS = ("iter", "J", "grad_norm", "theta", "solves_serial", "solves_parallel", "wall_ms")
SUMMARY_FIELDS = ("run", "algorithm", "N", "l_max", "iterations", "converged", "tol", "J_final",
                  "J_true_final", "grad_norm_final", "solves_serial", "solves_parallel", "J_star")


@dataclass
class RunSummary:
    name: str
    N: int
    l_max: int
    result: object


def run_filename(N, l_max) -> str:
    return f"run_N{N}_l{l_max}.csv"


def _fmt(x) -> str:
    return repr(float(x))


def write_history(stream, history, wall_time: bool):
    """``J`` is the exact cost of each iterate for every algorithm."""
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(RUN_FIELDS)
    for r in history:
        w.writerow([r.k, _fmt(r.J_true), _fmt(r.grad_norm), _fmt(r.theta), r.solves_serial,
                    r.solves_parallel, _fmt(r.wall_ms if wall_time else math.nan)])


def write_summary(stream, cfg: ExperimentConfig, runs, J_star):
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(SUMMARY_FIELDS)
    for s in runs:
        res, last = s.result, s.result.history[-1]
        w.writerow([s.name, cfg.algorithm, s.N, s.l_max, len(res.history) - 1, int(res.converged),
                    _fmt(res.tol), _fmt(last.J), _fmt(res.J_true_final), _fmt(last.grad_norm),
                    res.counter.serial, res.counter.parallel, "" if J_star is None else _fmt(J_star)])


def run_experiment(cfg: ExperimentConfig, stream=None) -> int:
    """Run every ``(N, l_max)`` pair and write the CSV files; returns an exit status."""
    stream = stream or sys.stderr
    pb = cfg.problem()
    v0 = cfg.initial_control(pb)
    runs = []
    for N in cfg.N:
        for l_max in cfg.l_max:
            rc = RunConfig(problem=pb, N=N, l_max=l_max, max_outer=cfg.max_outer, tol=cfg.tol,
                           algorithm=cfg.algorithm, workers=cfg.workers,
                           coarse_steps_per_interval=cfg.coarse_steps, v0=v0,
                           pitpoc_variant=cfg.pitpoc_variant)
            res = run(rc)
            last = res.history[-1]
            print(f"N={N} l_max={l_max}: {len(res.history) - 1} iterations, J={res.J_true_final:.10g}, "
                  f"|grad|={last.grad_norm:.3e}, {'converged' if res.converged else 'NOT converged'}",
                  file=stream)
            runs.append(RunSummary(run_filename(N, l_max)[:-4], N, l_max, res))

    J_star, reports = None, {}
    if cfg.diagnostics:
        if pb.M * pb.grid.n_control <= MAX_UNKNOWNS:
            J_star = solve_kkt_dense(pb).J
        beta = estimate_beta(pb, seed=cfg.seed).beta_emp
        for s in runs:
            if len(s.result.history) >= 2:
                reports[s.name] = check_hypotheses(s.result.history, J_star, alpha=pb.alpha, beta_emp=beta)

    try:
        os.makedirs(cfg.output, exist_ok=True)
        for s in runs:
            with open(os.path.join(cfg.output, s.name + ".csv"), "w", newline="") as f:
                write_history(f, s.result.history, cfg.wall_time)
        with open(os.path.join(cfg.output, "summary.csv"), "w", newline="") as f:
            write_summary(f, cfg, runs, J_star)
        if cfg.diagnostics:
            with open(os.path.join(cfg.output, "diagnostics.csv"), "w", newline="") as f:
                write_diagnostics(f, reports)
        with open(os.path.join(cfg.output, "config.cfg"), "w") as f:
            f.write(serialize_config(cfg))
    except OSError as exc:
        print(f"error: cannot write results to {cfg.output}: {exc}", file=stream)
        return 1
    return 0 if all(s.result.converged for s in runs) else 2


def _int_list(text):
    try:
        return [int(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _tol(text):
    if text == "auto":
        return "auto"
    return float(text)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pintoc", description="Parallel-in-time optimal control of the 2D heat equation.")
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--algorithm", choices=("serial", "sitpoc", "pitpoc"))
    p.add_argument("--intervals", type=_int_list, help="number of time intervals, comma separated for a sweep")
    p.add_argument("--inner-steps", type=_int_list, help="inner gradient steps per local problem, comma separated")
    p.add_argument("--max-iter", type=int, help="maximum outer iterations")
    p.add_argument("--tol", type=_tol, help="stopping tolerance or 'auto'")
    p.add_argument("--workers", type=int, help="worker threads (default: $PINTOC_WORKERS or 1)")
    p.add_argument("--output", help="output directory")
    p.add_argument("--print-config", action="store_true", help="print the resolved configuration and exit")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig().validate()
        if args.config:
            with open(args.config, encoding="utf-8") as f:
                cfg = parse_config(f.read())
        cfg = override(cfg, algorithm=args.algorithm, N=args.intervals, l_max=args.inner_steps,
                       max_outer=args.max_iter, workers=args.workers, output=args.output)
        if args.tol is not None:
            cfg = replace(cfg, tol=None if args.tol == "auto" else args.tol).validate()
    except ConfigError as exc:
        print(f"{args.config or 'config'}: {exc}", file=sys.stderr)
        return 1
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: cannot read {args.config}: {exc}", file=sys.stderr)
        return 1
    if args.print_config:
        sys.stdout.write(serialize_config(cfg))
        return 0
    try:
        return run_experiment(cfg)
    except PintocError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
