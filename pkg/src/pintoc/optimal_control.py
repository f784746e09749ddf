"""Reduced cost, exact discrete gradient and Hessian of the heat control problem.

The cost is

    J(v) = 1/2 |y(T) - y_target|^2 + alpha/2 ||v||^2

with ``y`` driven by ``v`` from ``y0``.  Since ``J`` is quadratic its Hessian is
the constant operator ``HJ = alpha*I + S^* S`` where ``S: v -> y(T; y0=0, v)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConfigurationError, DegenerateDirectionError, ShapeError
from .heat_core import (
    DiscreteOperator,
    Grid,
    OpCounter,
    TimeGrid,
    assemble_operator,
    backward_solve,
    control_inner,
    control_norm,
    field_inner,
    forward_solve,
    restrict,
)


@dataclass(frozen=True, eq=False)
class ControlProblem:
    grid: Grid
    time: TimeGrid
    alpha: float
    nu: float
    y0: np.ndarray
    y_target: np.ndarray

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigurationError(f"alpha must be positive, got {self.alpha}")
        if not self.nu > 0:
            raise ConfigurationError(f"nu must be positive, got {self.nu}")
        for name in ("y0", "y_target"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (self.grid.size,):
                raise ShapeError(f"{name} has shape {arr.shape}, expected ({self.grid.size},)")
            object.__setattr__(self, name, arr)

    @cached_property
    def op(self) -> DiscreteOperator:
        return assemble_operator(self.grid, self.nu)

    @property
    def dt(self) -> float:
        return self.time.dt

    @property
    def M(self) -> int:
        return self.time.M

    @property
    def control_shape(self) -> tuple[int, int]:
        return (self.time.M, self.grid.n_control)

    def zero_control(self, steps: int | None = None) -> np.ndarray:
        return np.zeros((self.M if steps is None else steps, self.grid.n_control))

    def inner(self, a, b) -> float:
        return control_inner(self.grid, self.dt, a, b)

    def norm(self, a) -> float:
        return control_norm(self.grid, self.dt, a)


@dataclass(frozen=True)
class HessianBounds:
    """Two-sided spectral bounds ``alpha_lower <= <HJ dv, dv>/|dv|^2 <= beta_upper``.

    ``beta_upper`` follows the energy estimate ``alpha + C^2/(2 nu)``;
    ``beta_stated`` is the alternative closed form ``alpha + C/sqrt(2)``, kept
    for reporting only.
    """

    alpha_lower: float
    beta_upper: float
    beta_stated: float
    poincare: float


def _check_window(pb: ControlProblem, v, steps=None):
    v = np.asarray(v, dtype=float)
    expected = (pb.M if steps is None else steps, pb.grid.n_control)
    if v.shape != expected:
        raise ShapeError(f"control trajectory has shape {v.shape}, expected {expected}")
    return v


def state_and_adjoint(pb: ControlProblem, v, counter: OpCounter | None = None):
    """Forward state and adjoint trajectories ``(y, p)`` for control ``v`` on [0, T]."""
    v = _check_window(pb, v)
    y = forward_solve(pb.op, pb.dt, pb.y0, v, counter)
    p = backward_solve(pb.op, pb.dt, y[-1] - pb.y_target, pb.M, counter)
    return y, p


def cost_from_state(pb: ControlProblem, y_final, v) -> float:
    r = y_final - pb.y_target
    return 0.5 * field_inner(pb.grid, r, r) + 0.5 * pb.alpha * pb.inner(v, v)


def evaluate_cost(pb: ControlProblem, v, counter: OpCounter | None = None) -> float:
    v = _check_window(pb, v)
    y = forward_solve(pb.op, pb.dt, pb.y0, v, counter)
    return cost_from_state(pb, y[-1], v)


def gradient_from_adjoint(pb: ControlProblem, v, p) -> np.ndarray:
    return pb.alpha * v + restrict(p[:-1], pb.grid)


def gradient(pb: ControlProblem, v, counter: OpCounter | None = None) -> np.ndarray:
    """Riesz representative of ``dJ(v)`` in the ``L2(0,T; Omega_c)`` product."""
    v = _check_window(pb, v)
    _, p = state_and_adjoint(pb, v, counter)
    return gradient_from_adjoint(pb, v, p)


def hessian_apply(pb: ControlProblem, dv, counter: OpCounter | None = None) -> np.ndarray:
    dv = _check_window(pb, dv)
    dy = forward_solve(pb.op, pb.dt, np.zeros(pb.grid.size), dv, counter)
    dp = backward_solve(pb.op, pb.dt, dy[-1], pb.M, counter)
    return pb.alpha * dv + restrict(dp[:-1], pb.grid)


def hessian_quadratic(pb: ControlProblem, dv, counter: OpCounter | None = None) -> float:
    """``<HJ dv, dv> = |dy(T)|^2 + alpha |dv|^2``; one forward sweep, no adjoint."""
    dv = _check_window(pb, dv)
    dy = forward_solve(pb.op, pb.dt, np.zeros(pb.grid.size), dv, counter)
    return field_inner(pb.grid, dy[-1], dy[-1]) + pb.alpha * pb.inner(dv, dv)


def negligible_direction(pb: ControlProblem, d, v, v_tilde) -> bool:
    """True when ``d = v_tilde - v`` is zero or at rounding level of its endpoints."""
    dd = pb.inner(d, d)
    scale = max(pb.inner(v, v), pb.inner(v_tilde, v_tilde))
    return dd == 0.0 or dd <= (64 * np.finfo(float).eps) ** 2 * scale


def optimal_theta(pb: ControlProblem, v, v_tilde, counter: OpCounter | None = None, grad=None) -> float:
    """Exact minimizer of ``theta -> J((1-theta) v + theta v_tilde)``.

    ``grad`` may pass a precomputed ``gradient(pb, v)`` to save the two sweeps.
    """
    v = _check_window(pb, v)
    v_tilde = _check_window(pb, v_tilde)
    d = v_tilde - v
    if negligible_direction(pb, d, v, v_tilde):
        raise DegenerateDirectionError("v_tilde equals v to rounding")
    g = gradient(pb, v, counter) if grad is None else grad
    curv = hessian_quadratic(pb, d, counter)
    if not curv > np.finfo(float).tiny:
        raise DegenerateDirectionError(f"curvature along direction is {curv}")
    return -pb.inner(g, d) / curv


def optimal_rho(g, h_of_g, inner=None) -> float:
    """Optimal step ``|g|^2 / <H g, g>`` along ``-g`` for a quadratic.

    The common quadrature weight of the discrete product cancels, so plain
    dot products are used unless ``inner`` is supplied.
    """
    if inner is None:
        def inner(a, b):
            return float(np.dot(np.ravel(a), np.ravel(b)))
    gg = inner(g, g)
    if gg == 0.0:
        raise DegenerateDirectionError("zero gradient")
    curv = inner(h_of_g, g)
    if not curv > 0.0:
        raise DegenerateDirectionError(f"non-positive curvature {curv}")
    return gg / curv


def hessian_bounds(pb: ControlProblem) -> HessianBounds:
    C = pb.op.poincare_constant
    return HessianBounds(
        alpha_lower=pb.alpha,
        beta_upper=pb.alpha + C**2 / (2.0 * pb.nu),
        beta_stated=pb.alpha + C / np.sqrt(2.0),
        poincare=C,
    )


def make_problem(nx, ny=None, *, T, M, alpha=1e-2, nu=1e-2, y0=None, y_target=None) -> ControlProblem:
    """Convenience constructor; fields default to zero."""
    grid = Grid(nx, nx if ny is None else ny)
    zeros = np.zeros(grid.size)
    return ControlProblem(
        grid=grid,
        time=TimeGrid(T, M),
        alpha=alpha,
        nu=nu,
        y0=zeros if y0 is None else y0,
        y_target=zeros if y_target is None else y_target,
    )
