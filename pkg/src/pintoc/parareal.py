"""Parareal interface propagation and the fully parallel intermediate-targets loop.

Forward maps take the field at ``t_n`` and the controls on ``I_n`` to the
field at ``t_{n+1}``; backward maps take the adjoint at ``t_{n+1}`` to
``t_n`` and never see the control.  The fine maps use the fine step, the
coarse ones ``coarse_steps`` implicit-Euler steps of size ``dT/coarse_steps``
with the control averaged over each coarse step.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .algorithms import (
    IterationRecord,
    RunConfig,
    RunResult,
    WorkerPool,
    _evaluate,
    default_tol,
    worker_pool,
)
from .errors import ConfigurationError, ShapeError
from .heat_core import OpCounter, backward_solve, field_inner, forward_solve
from .optimal_control import ControlProblem, negligible_direction
from .time_decomposition import (
    InterfaceStates,
    SubProblem,
    Subdivision,
    solve_subproblem,
    subdivide,
)


@dataclass(frozen=True, eq=False)
class PropagatorPair:
    problem: ControlProblem
    sub: Subdivision
    coarse_steps: int = 1

    def __post_init__(self):
        if self.coarse_steps < 1 or self.sub.steps % self.coarse_steps:
            raise ConfigurationError(
                f"{self.coarse_steps} coarse steps do not divide the {self.sub.steps} fine steps per interval"
            )

    @property
    def coarse_dt(self) -> float:
        return self.sub.dT / self.coarse_steps

    def _check(self, v_n):
        v_n = np.asarray(v_n, dtype=float)
        expected = (self.sub.steps, self.problem.grid.n_control)
        if v_n.shape != expected:
            raise ShapeError(f"interval control has shape {v_n.shape}, expected {expected}")
        return v_n

    def coarse_control(self, v_n) -> np.ndarray:
        v_n = self._check(v_n)
        per = self.sub.steps // self.coarse_steps
        return v_n.reshape(self.coarse_steps, per, -1).mean(axis=1)


def coarse_forward(prop: PropagatorPair, lambda_n, v_n, n: int | None = None, counter=None):
    pb = prop.problem
    traj = forward_solve(pb.op, prop.coarse_dt, lambda_n, prop.coarse_control(v_n), counter)
    return traj[-1]


def fine_forward(prop: PropagatorPair, lambda_n, v_n, n: int | None = None, counter=None):
    pb = prop.problem
    return forward_solve(pb.op, pb.dt, lambda_n, prop._check(v_n), counter)[-1]


def coarse_backward(prop: PropagatorPair, mu_next, n: int | None = None, counter=None):
    pb = prop.problem
    return backward_solve(pb.op, prop.coarse_dt, mu_next, prop.coarse_steps, counter)[0]


def fine_backward(prop: PropagatorPair, mu_next, n: int | None = None, counter=None):
    pb = prop.problem
    return backward_solve(pb.op, pb.dt, mu_next, prop.sub.steps, counter)[0]


def _intervals(prop, v):
    return [v[prop.sub.window(n)] for n in range(prop.sub.N)]


def parareal_forward_sweep(prop: PropagatorPair, lambdas, v, v_tilde, counter: OpCounter,
                           pool: WorkerPool | None = None, corrector: str = "literal"):
    """One forward correction of the interface states.

    With ``corrector="literal"``::

        new[n+1] = G(new[n], v_tilde_n) + F(lambdas[n], v_tilde_n) - G(lambdas[n], v_n)

    With ``corrector="standard"`` the last term uses ``v_tilde_n`` as well,
    which is the classical parareal update for the control ``v_tilde``.  The
    two coincide whenever ``v == v_tilde``.

    The ``F`` and old-``G`` terms only need the previous interface values and
    run as one parallel batch; the new-``G`` recursion is serial.
    """
    if corrector not in ("literal", "standard"):
        raise ValueError(f"unknown corrector {corrector!r}")
    pool = pool or WorkerPool(1)
    N = prop.sub.N
    lambdas = np.asarray(lambdas)
    vts = _intervals(prop, v_tilde)
    vs = vts if corrector == "standard" else _intervals(prop, v)

    def task(n, c):
        return (fine_forward(prop, lambdas[n], vts[n], n, c)
                - coarse_forward(prop, lambdas[n], vs[n], n, c))

    corrections = pool.run_batch(task, range(N), counter)
    new = np.empty_like(lambdas)
    new[0] = lambdas[0]
    for n in range(N):
        new[n + 1] = coarse_forward(prop, new[n], vts[n], n, counter) + corrections[n]
    return new


def parareal_backward_sweep(prop: PropagatorPair, mus, mu_final, counter: OpCounter,
                            pool: WorkerPool | None = None):
    """One backward correction of ``mus`` (values at t_1..t_N) given new terminal data.

        new[n] = G~(new[n+1]) + F~(mus[n+1]) - G~(mus[n+1])
    """
    pool = pool or WorkerPool(1)
    N = prop.sub.N
    mus = np.asarray(mus)  # mus[n-1] lives at t_n

    def task(n, c):
        old = mus[n]  # value at t_{n+1}
        return fine_backward(prop, old, n, c) - coarse_backward(prop, old, n, c)

    # values at t_1..t_{N-1} come from intervals n = 1..N-1
    corrections = pool.run_batch(task, range(1, N), counter)
    new = np.empty_like(mus)
    new[N - 1] = mu_final
    for n in range(N - 1, 0, -1):
        new[n - 1] = coarse_backward(prop, new[n], n, counter) + corrections[n - 1]
    return new


# --------------------------------------------------------------------------
# PITPOC
# --------------------------------------------------------------------------

@dataclass
class PitpocState:
    v: np.ndarray
    lambdas: np.ndarray  # t_0..t_N
    mus: np.ndarray      # t_1..t_N

    def surrogate_cost(self, pb: ControlProblem) -> float:
        r = self.lambdas[-1] - pb.y_target
        return 0.5 * field_inner(pb.grid, r, r) + 0.5 * pb.alpha * pb.inner(self.v, self.v)


def coarse_initial_state(prop: PropagatorPair, v0, counter: OpCounter) -> PitpocState:
    """Coarse forward recursion for ``lambda^0`` then coarse backward recursion for ``mu^0``."""
    pb, N = prop.problem, prop.sub.N
    vs = _intervals(prop, v0)
    lambdas = np.empty((N + 1, pb.grid.size))
    lambdas[0] = pb.y0
    for n in range(N):
        lambdas[n + 1] = coarse_forward(prop, lambdas[n], vs[n], n, counter)
    mus = np.empty((N, pb.grid.size))
    mus[N - 1] = lambdas[N] - pb.y_target
    for n in range(N - 1, 0, -1):
        mus[n - 1] = coarse_backward(prop, mus[n], n, counter)
    return PitpocState(np.array(v0, dtype=float), lambdas, mus)


def surrogate_theta(pb: ControlProblem, lam_N, lam_tilde_N, v, v_tilde, slope=None) -> float | None:
    """Relaxation parameter from interface data.

    Without ``slope`` this is the exact minimizer of

        1/2 |(1-t) lam_N + t lam~_N - y_target|^2 + alpha/2 ||(1-t) v + t v~||^2.

    Given ``slope`` (the directional derivative of ``J`` at ``v`` towards
    ``v~``) the numerator is replaced by it and only the curvature is taken
    from the surrogate.  ``None`` when the control direction is negligible.
    """
    a = lam_N - pb.y_target
    b = lam_tilde_N - lam_N
    d = v_tilde - v
    if negligible_direction(pb, d, v, v_tilde):
        return None
    curv = field_inner(pb.grid, b, b) + pb.alpha * pb.inner(d, d)
    if not curv > np.finfo(float).tiny:
        return None
    if slope is None:
        slope = field_inner(pb.grid, a, b) + pb.alpha * pb.inner(v, d)
    return -slope / curv


def pitpoc_iterate(state: PitpocState, cfg: RunConfig, prop: PropagatorPair, counter: OpCounter,
                   pool: WorkerPool | None = None):
    """One outer iteration.

    ``cfg.pitpoc_variant == "literal"`` follows the literal update (old control
    in the parareal corrector, relaxation minimizing the surrogate cost).
    ``"consistent"`` uses the classical corrector and takes the slope of the
    relaxation from the local gradients at ``v^k``, which the sub-problem
    solves produce anyway; the literal form can stall at non-optimal points.

    Returns ``(new_state, info)``; ``new_state`` is ``None`` on a degenerate
    direction.  ``info`` holds ``theta``, ``v_tilde``, ``lambdas_tilde``, ``rhos``.
    """
    pb, sub = cfg.problem, prop.sub
    pool = pool or WorkerPool(1)
    literal = cfg.pitpoc_variant == "literal"

    # I: interface targets
    targets = InterfaceStates(state.lambdas, state.mus, state.lambdas[1:] - state.mus)

    # II-III: local problems started from lambda_n
    subproblems = [
        SubProblem(pb, n, state.lambdas[n], targets.chi(n + 1), sub.window(n)) for n in range(sub.N)
    ]

    def task(sp, c):
        return solve_subproblem(sp, state.v[sp.window], cfg.l_max, c)

    results = pool.run_batch(task, subproblems, counter)
    v_tilde = np.concatenate([r.v for r in results])
    info = {"v_tilde": v_tilde, "rhos": tuple(x for r in results for x in r.rhos)}

    # IV (forward): parareal correction of the interface states
    lam_tilde = parareal_forward_sweep(prop, state.lambdas, state.v, v_tilde, counter, pool,
                                       corrector="literal" if literal else "standard")
    info["lambdas_tilde"] = lam_tilde

    # V: relaxation
    slope = None if literal else sum(r.slope for r in results)
    theta = surrogate_theta(pb, state.lambdas[-1], lam_tilde[-1], state.v, v_tilde, slope)
    info["theta"] = theta
    if theta is None:
        return None, info
    v_next = (1.0 - theta) * state.v + theta * v_tilde
    lam_next = (1.0 - theta) * state.lambdas + theta * lam_tilde

    # IV (backward): adjoint interfaces, terminal data from the relaxed lambda_N
    mus_next = parareal_backward_sweep(prop, state.mus, lam_next[-1] - pb.y_target, counter, pool)
    return PitpocState(v_next, lam_next, mus_next), info


def run_pitpoc(cfg: RunConfig) -> RunResult:
    """Iterate until ``||v^{k+1} - v^k|| <= tol`` or ``max_outer`` steps.

    Each record also carries the exact cost and gradient norm of ``v^k``;
    these reporting sweeps are not charged to the counters.
    """
    pb = cfg.problem
    sub = subdivide(pb.time, cfg.N)
    prop = PropagatorPair(pb, sub, cfg.coarse_steps_per_interval)
    counter = OpCounter()
    history = []
    converged = False
    tol = cfg.tol
    with worker_pool(cfg.workers) as pool:
        start = time.perf_counter()
        state = coarse_initial_state(prop, cfg.initial_control(), counter)
        carry = time.perf_counter() - start  # initialization is charged to record 0
        for k in range(cfg.max_outer + 1):
            true = _evaluate(pb, state.v, None)
            if tol is None:
                tol = default_tol(pb, true.grad_norm)
            solves = counter.snapshot()
            record = IterationRecord(k=k, J=state.surrogate_cost(pb), grad_norm=true.grad_norm,
                                     solves_serial=solves[0], solves_parallel=solves[1], J_true=true.J)
            history.append(record)
            if converged or k == cfg.max_outer:
                record.wall_ms = 1e3 * carry
                break
            start = time.perf_counter()
            new_state, info = pitpoc_iterate(state, cfg, prop, counter, pool)
            record.wall_ms = 1e3 * (carry + time.perf_counter() - start)
            carry = 0.0
            if new_state is None:
                converged = True
                break
            step = new_state.v - state.v
            record.theta = info["theta"]
            record.rhos = info["rhos"]
            record.step_norm = pb.norm(step)
            record.descent_inner = pb.inner(true.g, step)
            state = new_state
            converged = record.step_norm <= tol
    final = history[-1]
    return RunResult(history=history, v=state.v, converged=converged, tol=tol, counter=counter,
                     J_true_final=final.J_true)
