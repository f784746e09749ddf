"""Outer iterations: intermediate-targets method (serial sweeps) and the plain gradient baseline."""
from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DegenerateDirectionError
from .heat_core import OpCounter
from .optimal_control import (
    ControlProblem,
    cost_from_state,
    gradient_from_adjoint,
    hessian_apply,
    optimal_rho,
    optimal_theta,
    state_and_adjoint,
)
from .time_decomposition import build_targets, make_subproblems, solve_subproblem, subdivide

ALGORITHMS = ("serial", "sitpoc", "pitpoc")
PITPOC_VARIANTS = ("consistent", "literal")


@dataclass
class IterationRecord:
    """State of one outer iterate ``v^k`` and the step taken from it.

    The last record of a run describes the final iterate and carries no step
    (``theta = 0``, ``step_norm = 0``).  For PITPOC ``J`` is the surrogate cost
    built from interface data and ``J_true`` the exact cost.
    """

    k: int
    J: float
    grad_norm: float
    theta: float = 0.0
    solves_serial: int = 0
    solves_parallel: int = 0
    wall_ms: float = 0.0
    descent_inner: float = 0.0
    step_norm: float = 0.0
    rhos: tuple = ()
    J_true: float = math.nan

    def __post_init__(self):
        if math.isnan(self.J_true):
            self.J_true = self.J


@dataclass
class RunConfig:
    problem: ControlProblem
    N: int = 4
    l_max: int = 1
    max_outer: int = 1000
    tol: float | None = None
    algorithm: str = "sitpoc"
    workers: int | None = None
    coarse_steps_per_interval: int = 1
    v0: np.ndarray | None = None
    pitpoc_variant: str = "consistent"

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if self.pitpoc_variant not in PITPOC_VARIANTS:
            raise ConfigurationError(f"unknown pitpoc variant {self.pitpoc_variant!r}; choose from {PITPOC_VARIANTS}")
        if self.N < 1 or self.l_max < 1 or self.max_outer < 0 or self.coarse_steps_per_interval < 1:
            raise ConfigurationError("N, l_max, coarse_steps_per_interval must be >= 1 and max_outer >= 0")
        if self.tol is not None and not self.tol > 0:
            raise ConfigurationError(f"tol must be positive, got {self.tol}")
        if self.workers is None:
            self.workers = int(os.environ.get("PINTOC_WORKERS", "1"))
        if self.workers < 1:
            raise ConfigurationError(f"workers must be >= 1, got {self.workers}")
        subdivide(self.problem.time, self.N)

    def initial_control(self) -> np.ndarray:
        if self.v0 is None:
            return self.problem.zero_control()
        return np.array(self.v0, dtype=float)


@dataclass
class RunResult:
    history: list
    v: np.ndarray
    converged: bool
    tol: float
    counter: OpCounter = field(default_factory=OpCounter)
    J_true_final: float = math.nan


# --------------------------------------------------------------------------
# worker pool
# --------------------------------------------------------------------------

class WorkerPool:
    """Ordered map over independent tasks, each with a private counter.

    Results come back in task order and the counters are merged into the
    caller's counter after the barrier, so output does not depend on the
    number of threads.
    """

    def __init__(self, workers: int = 1):
        self.workers = workers
        self._executor = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None

    def run_batch(self, fn, tasks, counter: OpCounter):
        tasks = list(tasks)
        counters = [OpCounter() for _ in tasks]
        if self._executor is None:
            results = [fn(t, c) for t, c in zip(tasks, counters)]
        else:
            results = list(self._executor.map(fn, tasks, counters))
        counter.merge_batch(counters)
        return results

    def close(self):
        if self._executor is not None:
            self._executor.shutdown()


@contextmanager
def worker_pool(workers: int = 1):
    pool = WorkerPool(workers)
    try:
        yield pool
    finally:
        pool.close()


def default_tol(pb: ControlProblem, grad_norm0: float) -> float:
    return 1e-8 * max(1.0, grad_norm0)


# --------------------------------------------------------------------------
# intermediate targets, serial sweeps
# --------------------------------------------------------------------------

@dataclass
class _Evaluation:
    J: float
    g: np.ndarray
    grad_norm: float
    y: np.ndarray
    p: np.ndarray


def _evaluate(pb, v, counter):
    y, p = state_and_adjoint(pb, v, counter)
    g = gradient_from_adjoint(pb, v, p)
    return _Evaluation(cost_from_state(pb, y[-1], v), g, pb.norm(g), y, p)


def sitpoc_iterate(v, cfg: RunConfig, counter: OpCounter, pool: WorkerPool | None = None,
                   k: int = 0, tol: float = 0.0, take_step: bool = True):
    """One outer iteration from ``v^k``.

    Returns ``(v_next, record, converged)``; ``v_next`` is ``None`` when no
    step was taken (converged, degenerate direction, or ``take_step=False``).
    """
    pb = cfg.problem
    pool = pool or WorkerPool(1)
    start = time.perf_counter()

    # Step I: serial sweeps and interface targets
    ev = _evaluate(pb, v, counter)
    solves = counter.snapshot()
    record = IterationRecord(k=k, J=ev.J, grad_norm=ev.grad_norm,
                             solves_serial=solves[0], solves_parallel=solves[1])
    if ev.grad_norm <= tol:
        record.wall_ms = 1e3 * (time.perf_counter() - start)
        return None, record, True
    if not take_step:
        record.wall_ms = 1e3 * (time.perf_counter() - start)
        return None, record, False
    sub = subdivide(pb.time, cfg.N)
    targets = build_targets(ev.y, ev.p, sub)
    subproblems = make_subproblems(pb, sub, targets.lambdas, targets)

    # Step II: independent local problems
    def task(sp, c):
        return solve_subproblem(sp, v[sp.window], cfg.l_max, c)

    results = pool.run_batch(task, subproblems, counter)
    v_tilde = np.concatenate([r.v for r in results])

    # Step III: relaxation with the exact line minimum
    try:
        theta = optimal_theta(pb, v, v_tilde, counter, grad=ev.g)
    except DegenerateDirectionError:
        record.wall_ms = 1e3 * (time.perf_counter() - start)
        return None, record, True
    v_next = (1.0 - theta) * v + theta * v_tilde
    step = v_next - v
    record.theta = theta
    record.descent_inner = pb.inner(ev.g, step)
    record.step_norm = pb.norm(step)
    record.rhos = tuple(rho for r in results for rho in r.rhos)
    record.wall_ms = 1e3 * (time.perf_counter() - start)
    return v_next, record, False


def _run(cfg: RunConfig, iterate) -> RunResult:
    pb = cfg.problem
    counter = OpCounter()
    v = cfg.initial_control()
    history = []
    tol = cfg.tol
    converged = False
    with worker_pool(cfg.workers) as pool:
        for k in range(cfg.max_outer + 1):
            if tol is None:
                tol = default_tol(pb, _evaluate(pb, v, None).grad_norm)
            v_next, record, converged = iterate(v, cfg, counter, pool, k=k, tol=tol,
                                                take_step=k < cfg.max_outer)
            history.append(record)
            if v_next is None:
                break
            v = v_next
    return RunResult(history=history, v=v, converged=converged, tol=tol, counter=counter,
                     J_true_final=history[-1].J)


def run_sitpoc(cfg: RunConfig) -> RunResult:
    """Iterate until ``|grad J| <= tol`` or ``max_outer`` steps; ``converged`` flags which."""
    return _run(cfg, sitpoc_iterate)


# --------------------------------------------------------------------------
# baseline: optimal-step gradient on the global cost
# --------------------------------------------------------------------------

def serial_iterate(v, cfg: RunConfig, counter: OpCounter, pool=None,
                   k: int = 0, tol: float = 0.0, take_step: bool = True):
    pb = cfg.problem
    start = time.perf_counter()
    ev = _evaluate(pb, v, counter)
    solves = counter.snapshot()
    record = IterationRecord(k=k, J=ev.J, grad_norm=ev.grad_norm,
                             solves_serial=solves[0], solves_parallel=solves[1])
    if ev.grad_norm <= tol or not take_step:
        record.wall_ms = 1e3 * (time.perf_counter() - start)
        return None, record, ev.grad_norm <= tol
    try:
        rho = optimal_rho(ev.g, hessian_apply(pb, ev.g, counter))
    except DegenerateDirectionError:
        record.wall_ms = 1e3 * (time.perf_counter() - start)
        return None, record, True
    v_next = v - rho * ev.g
    record.theta = 1.0
    record.rhos = (rho,)
    record.descent_inner = -rho * pb.inner(ev.g, ev.g)
    record.step_norm = rho * ev.grad_norm
    record.wall_ms = 1e3 * (time.perf_counter() - start)
    return v_next, record, False


def run_serial_baseline(cfg: RunConfig) -> RunResult:
    return _run(cfg, serial_iterate)


def run(cfg: RunConfig) -> RunResult:
    """Dispatch on ``cfg.algorithm``."""
    if cfg.algorithm == "serial":
        return run_serial_baseline(cfg)
    if cfg.algorithm == "sitpoc":
        return run_sitpoc(cfg)
    from .parareal import run_pitpoc

    return run_pitpoc(cfg)
