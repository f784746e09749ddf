"""Time subdivision, intermediate targets and the local control sub-problems.

On each interval ``I_n = [t_n, t_{n+1}]`` the local problem is

    J_n(v_n) = 1/2 |y_n(t_{n+1}) - chi_{n+1}|^2 + alpha/2 ||v_n||^2_{I_n}

with ``y_n`` started from an interface value and ``chi = y - p`` the target
trajectory, kept only at the interface times.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError, DegenerateDirectionError, ShapeError
from .heat_core import OpCounter, TimeGrid, backward_solve, field_inner, forward_solve, restrict
from .optimal_control import ControlProblem, optimal_rho


@dataclass(frozen=True)
class Subdivision:
    M: int
    N: int
    T: float

    @property
    def steps(self) -> int:
        """Fine steps per interval."""
        return self.M // self.N

    @property
    def boundaries(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.steps

    @property
    def dT(self) -> float:
        return self.T / self.N

    def window(self, n: int) -> slice:
        if not 0 <= n < self.N:
            raise IndexError(f"interval {n} outside 0..{self.N - 1}")
        return slice(n * self.steps, (n + 1) * self.steps)


def subdivide(time: TimeGrid, N: int) -> Subdivision:
    if N < 1:
        raise ConfigurationError(f"need at least one interval, got N={N}")
    if time.M % N:
        raise ConfigurationError(f"{time.M} fine steps cannot be split into {N} equal intervals")
    return Subdivision(time.M, N, time.T)


@dataclass
class InterfaceStates:
    """Interface data: ``lambdas[n]`` at t_n (n=0..N); ``mus``/``chis[n-1]`` at t_n (n=1..N)."""

    lambdas: np.ndarray
    mus: np.ndarray
    chis: np.ndarray

    def chi(self, n: int) -> np.ndarray:
        """Target at interface time ``t_n``, ``1 <= n <= N``."""
        return self.chis[n - 1]

    def mu(self, n: int) -> np.ndarray:
        return self.mus[n - 1]


def build_targets(y_traj, p_traj, sub: Subdivision) -> InterfaceStates:
    y_traj, p_traj = np.asarray(y_traj), np.asarray(p_traj)
    if y_traj.shape[0] != sub.M + 1 or p_traj.shape != y_traj.shape:
        raise ShapeError(
            f"trajectories of shape {y_traj.shape} / {p_traj.shape} do not span {sub.M} steps"
        )
    b = sub.boundaries
    lambdas = y_traj[b].copy()
    mus = p_traj[b[1:]].copy()
    return InterfaceStates(lambdas=lambdas, mus=mus, chis=lambdas[1:] - mus)


@dataclass(frozen=True, eq=False)
class SubProblem:
    problem: ControlProblem
    n: int
    y_start: np.ndarray
    chi_end: np.ndarray
    window: slice

    @property
    def steps(self) -> int:
        return self.window.stop - self.window.start

    def check(self, v):
        v = np.asarray(v, dtype=float)
        expected = (self.steps, self.problem.grid.n_control)
        if v.shape != expected:
            raise ShapeError(f"interval {self.n}: control has shape {v.shape}, expected {expected}")
        return v

    def inner(self, a, b) -> float:
        return self.problem.inner(a, b)


def make_subproblems(pb: ControlProblem, sub: Subdivision, starts, targets: InterfaceStates):
    """One sub-problem per interval; ``starts[n]`` is the field at ``t_n``."""
    return [
        SubProblem(pb, n, np.asarray(starts[n]), targets.chi(n + 1), sub.window(n))
        for n in range(sub.N)
    ]


def _local_state(sp: SubProblem, v_n, counter):
    pb = sp.problem
    return forward_solve(pb.op, pb.dt, sp.y_start, v_n, counter)


def local_cost(sp: SubProblem, v_n, counter: OpCounter | None = None) -> float:
    v_n = sp.check(v_n)
    pb = sp.problem
    r = _local_state(sp, v_n, counter)[-1] - sp.chi_end
    return 0.5 * field_inner(pb.grid, r, r) + 0.5 * pb.alpha * sp.inner(v_n, v_n)


def local_gradient(sp: SubProblem, v_n, counter: OpCounter | None = None) -> np.ndarray:
    v_n = sp.check(v_n)
    pb = sp.problem
    y = _local_state(sp, v_n, counter)
    p = backward_solve(pb.op, pb.dt, y[-1] - sp.chi_end, sp.steps, counter)
    return pb.alpha * v_n + restrict(p[:-1], pb.grid)


def local_hessian_apply(sp: SubProblem, dv, counter: OpCounter | None = None) -> np.ndarray:
    dv = sp.check(dv)
    pb = sp.problem
    dy = forward_solve(pb.op, pb.dt, np.zeros(pb.grid.size), dv, counter)
    dp = backward_solve(pb.op, pb.dt, dy[-1], sp.steps, counter)
    return pb.alpha * dv + restrict(dp[:-1], pb.grid)


class LocalSolve(NamedTuple):
    v: np.ndarray
    rhos: tuple
    slope: float  # <grad J_n(v_init), v - v_init>


def solve_subproblem(sp: SubProblem, v_init, l_max: int, counter: OpCounter | None = None) -> LocalSolve:
    """``l_max`` steps of optimal-step gradient descent on ``J_n`` from ``v_init``.

    Returns the final iterate, the step lengths taken and the slope of
    ``J_n`` at ``v_init`` along the total step.  Stops early on an exactly
    zero gradient.
    """
    if l_max < 1:
        raise ConfigurationError(f"l_max must be >= 1, got {l_max}")
    v0 = sp.check(v_init)
    v = v0.copy()
    rhos = []
    g0 = None
    for _ in range(l_max):
        g = local_gradient(sp, v, counter)
        if g0 is None:
            g0 = g
        if not np.any(g):
            break
        hg = local_hessian_apply(sp, g, counter)
        try:
            rho = optimal_rho(g, hg)
        except DegenerateDirectionError:
            break
        rhos.append(rho)
        v = v - rho * g
    return LocalSolve(v, tuple(rhos), sp.inner(g0, v - v0))
