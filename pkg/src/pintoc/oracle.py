"""Dense reference solver for the discrete optimality system (tiny instances only).

Everything here uses a dense inverse ``R = (I + dt*A)^{-1}`` and matrix powers,
independent of the banded sweep kernels used by the algorithms.  The
control-to-terminal-state map ``S`` is assembled one impulse column at a time;
with ``v`` stacked step-major the reduced normal equations in the weighted
product are

    (alpha*I + S^T S / dt) v = -S^T (y_free(T) - target) / dt.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import ConfigurationError
from .optimal_control import ControlProblem
from .time_decomposition import SubProblem

MAX_UNKNOWNS = 5000


@dataclass
class KKTSolution:
    v: np.ndarray
    y: np.ndarray
    p: np.ndarray
    J: float
    residuals: dict


class DenseModel:
    """Dense propagation matrices for ``steps`` implicit-Euler steps."""

    def __init__(self, pb: ControlProblem, steps: int):
        grid = pb.grid
        n = grid.size
        self.pb, self.steps = pb, steps
        K = np.eye(n) + pb.dt * pb.op.matrix.toarray()
        self.R = np.linalg.solve(K, np.eye(n))
        powers = [np.eye(n)]
        for _ in range(steps):
            powers.append(self.R @ powers[-1])
        self.powers = powers

    def impulse_response(self, m: int, c: int) -> np.ndarray:
        """Terminal state produced by a unit control at node ``c`` on step ``m``."""
        pb = self.pb
        return pb.dt * self.powers[self.steps - m][:, pb.grid.control_idx[c]]

    def control_map(self, order=None) -> np.ndarray:
        """Columns of ``S``; ``order`` permutes the sequence in which impulses are applied."""
        nc = self.pb.grid.n_control
        total = self.steps * nc
        order = np.arange(total) if order is None else np.asarray(order)
        S = np.empty((self.pb.grid.size, total))
        for k in order:
            m, c = divmod(int(k), nc)
            S[:, k] = self.impulse_response(m, c)
        return S

    def propagate(self, y_start, v):
        pb = self.pb
        y = np.empty((self.steps + 1, pb.grid.size))
        y[0] = y_start
        for m in range(self.steps):
            rhs = y[m].copy()
            rhs[pb.grid.control_idx] += pb.dt * v[m]
            y[m + 1] = self.R @ rhs
        return y

    def adjoint(self, p_final):
        p = np.empty((self.steps + 1, p_final.shape[0]))
        p[-1] = p_final
        for m in range(self.steps - 1, -1, -1):
            p[m] = self.R @ p[m + 1]
        return p


def _guard(pb: ControlProblem, steps: int):
    size = steps * pb.grid.n_control
    if size > MAX_UNKNOWNS:
        raise ConfigurationError(
            f"dense oracle refuses {size} control unknowns (limit {MAX_UNKNOWNS})"
        )


def _solve(model: DenseModel, y_start, target, order=None) -> KKTSolution:
    pb = model.pb
    grid, dt, alpha = pb.grid, pb.dt, pb.alpha
    nc = grid.n_control
    S = model.control_map(order)
    r = model.powers[model.steps] @ y_start - target
    H = alpha * np.eye(S.shape[1]) + S.T @ S / dt
    rhs = -S.T @ r / dt
    v = sla.solve(H, rhs, assume_a="pos").reshape(model.steps, nc)

    y = model.propagate(y_start, v)
    p = model.adjoint(y[-1] - target)
    resid_y = max(
        np.max(np.abs(y[m + 1] - model.R @ (y[m] + dt * _inject(grid, v[m])))) for m in range(model.steps)
    )
    resid_p = max(np.max(np.abs(p[m] - model.R @ p[m + 1])) for m in range(model.steps))
    resid_g = np.max(np.abs(alpha * v + p[:-1][:, grid.control_idx]))
    scale = max(1.0, np.max(np.abs(v)) * alpha)
    resid = y[-1] - target
    J = 0.5 * grid.cell * resid @ resid + 0.5 * alpha * dt * grid.cell * np.sum(v * v)
    return KKTSolution(
        v=v, y=y, p=p, J=float(J),
        residuals={"state": resid_y, "adjoint": resid_p, "optimality": resid_g / scale},
    )


def _inject(grid, c):
    f = np.zeros(grid.size)
    f[grid.control_idx] = c
    return f


def solve_kkt_dense(pb: ControlProblem, order=None) -> KKTSolution:
    """Global optimum ``v*`` with its state ``y*`` and adjoint ``p*``."""
    _guard(pb, pb.M)
    return _solve(DenseModel(pb, pb.M), pb.y0, pb.y_target, order)


def solve_local_kkt(sp: SubProblem, order=None) -> KKTSolution:
    """Optimum of the local problem on ``sp.window`` (trajectories indexed from ``t_n``)."""
    _guard(sp.problem, sp.steps)
    return _solve(DenseModel(sp.problem, sp.steps), sp.y_start, sp.chi_end, order)


def dense_cost(pb: ControlProblem, v) -> float:
    """``J(v)`` through the assembled space-time map: ``y(T) = R^M y0 + S v``."""
    _guard(pb, pb.M)
    model = DenseModel(pb, pb.M)
    yT = model.powers[pb.M] @ pb.y0 + model.control_map() @ np.ravel(v)
    r = yT - pb.y_target
    return float(0.5 * pb.grid.cell * r @ r + 0.5 * pb.alpha * pb.dt * pb.grid.cell * np.sum(np.square(v)))


def dense_local_cost(sp: SubProblem, v) -> float:
    pb = sp.problem
    _guard(pb, sp.steps)
    model = DenseModel(pb, sp.steps)
    yT = model.powers[sp.steps] @ sp.y_start + model.control_map() @ np.ravel(v)
    r = yT - sp.chi_end
    return float(0.5 * pb.grid.cell * r @ r + 0.5 * pb.alpha * pb.dt * pb.grid.cell * np.sum(np.square(v)))


def dense_hessian(pb: ControlProblem) -> np.ndarray:
    """Matrix of ``HJ`` acting on step-major stacked controls."""
    _guard(pb, pb.M)
    S = DenseModel(pb, pb.M).control_map()
    return pb.alpha * np.eye(S.shape[1]) + S.T @ S / pb.dt
