import numpy as np
import pytest

from conftest import random_problem
from pintoc.errors import ConfigurationError, ShapeError
from pintoc.heat_core import OpCounter, TimeGrid, free_solve
from pintoc.optimal_control import hessian_apply, state_and_adjoint
from pintoc.oracle import dense_local_cost, solve_kkt_dense, solve_local_kkt
from pintoc.time_decomposition import (
    SubProblem,
    build_targets,
    local_cost,
    local_gradient,
    local_hessian_apply,
    make_subproblems,
    solve_subproblem,
    subdivide,
)


def test_subdivision():
    sub = subdivide(TimeGrid(6.4, 640), 4)
    assert sub.steps == 160 and sub.dT == pytest.approx(1.6)
    assert sub.boundaries.tolist() == [0, 160, 320, 480, 640]
    assert sub.window(3) == slice(480, 640)
    with pytest.raises(IndexError):
        sub.window(4)
    with pytest.raises(ConfigurationError):
        subdivide(TimeGrid(6.4, 640), 3)
    with pytest.raises(ConfigurationError):
        subdivide(TimeGrid(6.4, 640), 0)


def test_targets_end_at_y_target(pb3, rng):
    v = rng.standard_normal(pb3.control_shape)
    y, p = state_and_adjoint(pb3, v)
    t = build_targets(y, p, subdivide(pb3.time, 4))
    np.testing.assert_allclose(t.chi(4), pb3.y_target, atol=1e-15)
    np.testing.assert_array_equal(t.lambdas[0], pb3.y0)
    with pytest.raises(ShapeError):
        build_targets(y[:-1], p[:-1], subdivide(pb3.time, 4))


def _subproblems(pb, v, N):
    y, p = state_and_adjoint(pb, v)
    sub = subdivide(pb.time, N)
    t = build_targets(y, p, sub)
    return make_subproblems(pb, sub, t.lambdas, t), sub


def test_local_cost_and_gradient(pb3, rng):
    sps, _ = _subproblems(pb3, rng.standard_normal(pb3.control_shape), 2)
    eps = 1e-5
    for sp in sps:
        w, dw = rng.standard_normal((2, sp.steps, 1))
        assert local_cost(sp, w) == pytest.approx(dense_local_cost(sp, w), rel=1e-11)
        fd = (local_cost(sp, w + eps * dw) - local_cost(sp, w - eps * dw)) / (2 * eps)
        exact = sp.inner(local_gradient(sp, w), dw)
        assert abs(fd - exact) <= 1e-6 * abs(exact)


def test_local_gradient_zero_at_local_optimum(pb3, rng):
    sps, _ = _subproblems(pb3, rng.standard_normal(pb3.control_shape), 4)
    for sp in sps:
        sol = solve_local_kkt(sp)
        assert pb3.norm(local_gradient(sp, sol.v)) <= 1e-9


def test_free_evolution_target_gives_zero_local_control(pb3, rng):
    y_start = rng.standard_normal(pb3.grid.size)
    chi = free_solve(pb3.op, pb3.dt, y_start, 4)[-1]
    sp = SubProblem(pb3, 0, y_start, chi, slice(0, 4))
    np.testing.assert_allclose(solve_local_kkt(sp).v, 0.0, atol=1e-13)
    res = solve_subproblem(sp, np.zeros((4, 1)), 3)
    assert res.rhos == () and not res.v.any() and res.slope == 0.0


@pytest.mark.parametrize("N", [2, 4])
def test_restriction_optimality(N):
    pb = random_problem(3, 16, seed=5)
    star = solve_kkt_dense(pb)
    sub = subdivide(pb.time, N)
    targets = build_targets(star.y, star.p, sub)
    scale = max(1.0, pb.norm(star.v))
    for sp in make_subproblems(pb, sub, targets.lambdas, targets):
        local = solve_local_kkt(sp)
        assert pb.norm(local.v - star.v[sp.window]) <= 1e-8 * scale
        # already optimal: a gradient step does not move
        res = solve_subproblem(sp, star.v[sp.window], 1)
        assert pb.norm(res.v - star.v[sp.window]) <= 1e-9 * scale


def test_hessian_restriction_last_interval(pb3, rng):
    sub = subdivide(pb3.time, 4)
    sps, _ = _subproblems(pb3, pb3.zero_control(), 4)
    last = sps[-1]
    for _ in range(5):
        dv = np.zeros(pb3.control_shape)
        dv[last.window] = rng.standard_normal((sub.steps, 1))
        full = hessian_apply(pb3, dv)
        local = local_hessian_apply(last, dv[last.window])
        np.testing.assert_allclose(full[last.window], local, rtol=0, atol=1e-12)


def test_hessian_restriction_fails_off_last_interval(pb3, rng):
    sps, _ = _subproblems(pb3, pb3.zero_control(), 4)
    first = sps[0]
    dv = np.zeros(pb3.control_shape)
    dv[first.window] = rng.standard_normal((first.steps, 1))
    diff = hessian_apply(pb3, dv)[first.window] - local_hessian_apply(first, dv[first.window])
    assert np.abs(diff).max() > 1e-6


def test_solve_subproblem_descent_and_count(pb3, rng):
    sps, _ = _subproblems(pb3, rng.standard_normal(pb3.control_shape), 2)
    sp = sps[0]
    w = rng.standard_normal((sp.steps, 1))
    c = OpCounter()
    res = solve_subproblem(sp, w, 3, c)
    assert len(res.rhos) == 3
    assert c.serial == 3 * 4 * sp.steps
    assert local_cost(sp, res.v) < local_cost(sp, w)
    assert res.slope < 0
    with pytest.raises(ConfigurationError):
        solve_subproblem(sp, w, 0)
    with pytest.raises(ShapeError):
        solve_subproblem(sp, w[:-1], 1)


def test_solve_subproblem_converges_to_local_kkt(pb3, rng):
    sps, _ = _subproblems(pb3, rng.standard_normal(pb3.control_shape), 2)
    for sp in sps:
        res = solve_subproblem(sp, np.zeros((sp.steps, 1)), 200)
        np.testing.assert_allclose(res.v, solve_local_kkt(sp).v, rtol=1e-7, atol=1e-9)
