import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from conftest import random_problem
from pintoc.errors import ConfigurationError, DegenerateDirectionError, ShapeError
from pintoc.heat_core import OpCounter, free_solve
from pintoc.optimal_control import (
    evaluate_cost,
    gradient,
    hessian_apply,
    hessian_bounds,
    hessian_quadratic,
    make_problem,
    optimal_rho,
    optimal_theta,
    state_and_adjoint,
)
from pintoc.oracle import dense_cost, dense_hessian


def test_problem_validation():
    with pytest.raises(ConfigurationError):
        make_problem(3, T=1.0, M=4, alpha=0.0)
    with pytest.raises(ConfigurationError):
        make_problem(3, T=1.0, M=4, nu=-1.0)
    with pytest.raises(ShapeError):
        make_problem(3, T=1.0, M=4, y0=np.zeros(5))


def test_zero_data_zero_cost(pb3):
    pb = make_problem(3, T=0.08, M=8)
    v = pb.zero_control()
    assert evaluate_cost(pb, v) == 0.0
    assert not gradient(pb, v).any()


def test_cost_quadratic_in_alpha():
    # y0 = target = 0: J(v) = 1/2|S v|^2 + alpha/2 |v|^2 exactly
    pb = make_problem(3, T=0.08, M=8, alpha=0.3)
    v = np.ones(pb.control_shape)
    J = evaluate_cost(pb, v)
    pb2 = make_problem(3, T=0.08, M=8, alpha=0.7)
    assert evaluate_cost(pb2, v) - J == pytest.approx(0.5 * 0.4 * pb.inner(v, v), rel=1e-12)


def test_cost_matches_dense_model(pb3, rng):
    for _ in range(5):
        v = rng.standard_normal(pb3.control_shape)
        assert evaluate_cost(pb3, v) == pytest.approx(dense_cost(pb3, v), rel=1e-11)


def test_gradient_central_differences(pb3, rng):
    eps = 1e-5
    for _ in range(10):
        v, dv = rng.standard_normal((2, *pb3.control_shape))
        fd = (evaluate_cost(pb3, v + eps * dv) - evaluate_cost(pb3, v - eps * dv)) / (2 * eps)
        exact = pb3.inner(gradient(pb3, v), dv)
        assert abs(fd - exact) <= 1e-6 * abs(exact)


def test_gradient_counts_two_sweeps(pb3):
    c = OpCounter()
    gradient(pb3, pb3.zero_control(), c)
    assert c.serial == 2 * pb3.M


def test_adjoint_terminal_condition(pb3, rng):
    v = rng.standard_normal(pb3.control_shape)
    y, p = state_and_adjoint(pb3, v)
    np.testing.assert_array_equal(p[-1], y[-1] - pb3.y_target)


def test_free_evolution_target_optimal():
    base = random_problem(3, 8)
    yT = free_solve(base.op, base.dt, base.y0, base.M)[-1]
    pb = make_problem(3, T=base.time.T, M=8, y0=base.y0, y_target=yT)
    v = pb.zero_control()
    assert evaluate_cost(pb, v) == 0.0
    assert np.abs(gradient(pb, v)).max() == 0.0


def test_hessian_matches_dense(pb3, rng):
    H = dense_hessian(pb3)
    dv = rng.standard_normal(pb3.control_shape)
    np.testing.assert_allclose(hessian_apply(pb3, dv).ravel(), H @ dv.ravel(), rtol=1e-11, atol=1e-14)
    np.testing.assert_allclose(H, H.T, atol=1e-14)
    assert np.linalg.eigvalsh(H)[0] >= pb3.alpha * (1 - 1e-12)


def test_hessian_is_gradient_difference(pb3, rng):
    v, dv = rng.standard_normal((2, *pb3.control_shape))
    diff = gradient(pb3, v + dv) - gradient(pb3, v)
    np.testing.assert_allclose(hessian_apply(pb3, dv), diff, rtol=1e-10, atol=1e-13)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_hessian_symmetric_and_quadratic(seed):
    pb = random_problem(2, 4, seed=3)
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((2, *pb.control_shape))
    assert pb.inner(hessian_apply(pb, a), b) == pytest.approx(pb.inner(a, hessian_apply(pb, b)), rel=1e-10)
    assert hessian_quadratic(pb, a) == pytest.approx(pb.inner(hessian_apply(pb, a), a), rel=1e-10)


def test_hessian_quadratic_uses_one_sweep(pb3):
    c = OpCounter()
    hessian_quadratic(pb3, np.ones(pb3.control_shape), c)
    assert c.serial == pb3.M


def test_theta_matches_golden_section(rng):
    # golden section resolves the minimizer to ~sqrt(eps J / curvature); alpha = 1 keeps that below 1e-7
    pb3 = random_problem(3, 8, alpha=1.0)
    for _ in range(5):
        v, vt = rng.standard_normal((2, *pb3.control_shape))
        theta = optimal_theta(pb3, v, vt)
        res = minimize_scalar(lambda t: evaluate_cost(pb3, (1 - t) * v + t * vt),
                              bracket=(-5, 5), method="golden", tol=1e-10)
        assert theta == pytest.approx(res.x, abs=1e-6)


def test_theta_examples(pb3, rng):
    v = rng.standard_normal(pb3.control_shape)
    with pytest.raises(DegenerateDirectionError):
        optimal_theta(pb3, v, v)
    # moving to the exact line minimum again gives theta = 0
    vt = v - gradient(pb3, v)
    theta = optimal_theta(pb3, v, vt)
    w = (1 - theta) * v + theta * vt
    assert optimal_theta(pb3, w, w + (vt - v)) == pytest.approx(0.0, abs=1e-10)


def test_rho_bounds(pb3, rng):
    b = hessian_bounds(pb3)
    for _ in range(10):
        g = rng.standard_normal(pb3.control_shape)
        rho = optimal_rho(g, hessian_apply(pb3, g))
        assert 1 / b.beta_upper <= rho <= 1 / b.alpha_lower
    with pytest.raises(DegenerateDirectionError):
        optimal_rho(np.zeros(3), np.zeros(3))


def test_rho_equals_inverse_alpha_when_sweeps_vanish():
    # single mode: H = alpha + s^2, rho = 1/H
    g = np.array([2.0])
    assert optimal_rho(g, 5.0 * g) == pytest.approx(0.2)


def test_bounds_closed_forms():
    pb = make_problem(3, T=0.08, M=8, alpha=1e-2, nu=1e-2)
    b = hessian_bounds(pb)
    lam = 2 * (2 * 16 * (1 - np.cos(np.pi / 4)))
    assert b.poincare == pytest.approx(1 / np.sqrt(lam), rel=1e-12)
    assert b.beta_upper == pytest.approx(1e-2 + 1 / (lam * 2e-2), rel=1e-12)
    assert b.beta_stated == pytest.approx(1e-2 + b.poincare / np.sqrt(2), rel=1e-12)


def test_bounds_monotone_in_inverse_nu():
    uppers = [hessian_bounds(make_problem(5, T=0.1, M=10, nu=nu)).beta_upper for nu in (1.0, 1e-1, 1e-2)]
    assert uppers[0] < uppers[1] < uppers[2]


def test_shape_checks(pb3):
    with pytest.raises(ShapeError):
        evaluate_cost(pb3, np.zeros((3, 1)))
    with pytest.raises(ShapeError):
        hessian_apply(pb3, np.zeros((pb3.M, 2)))
