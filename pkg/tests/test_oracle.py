import numpy as np
import pytest

from conftest import random_problem
from pintoc.errors import ConfigurationError
from pintoc.heat_core import free_solve
from pintoc.optimal_control import evaluate_cost, gradient, make_problem
from pintoc.oracle import MAX_UNKNOWNS, DenseModel, dense_cost, solve_kkt_dense


def test_zero_data():
    pb = make_problem(3, T=0.08, M=8)
    assert not solve_kkt_dense(pb).v.any()


def test_free_evolution_target():
    base = random_problem(3, 8)
    yT = free_solve(base.op, base.dt, base.y0, 8)[-1]
    pb = make_problem(3, T=base.time.T, M=8, y0=base.y0, y_target=yT)
    np.testing.assert_allclose(solve_kkt_dense(pb).v, 0.0, atol=1e-13)


def test_gradient_vanishes_2x2(pb2):
    star = solve_kkt_dense(pb2)
    assert pb2.norm(gradient(pb2, star.v)) <= 1e-9


def test_residuals_closed(pb3):
    star = solve_kkt_dense(pb3)
    for name, value in star.residuals.items():
        assert value <= 1e-10, name
    assert star.J == pytest.approx(evaluate_cost(pb3, star.v), rel=1e-12)


def test_ordering_independent(pb3):
    rng = np.random.default_rng(0)
    a = solve_kkt_dense(pb3)
    b = solve_kkt_dense(pb3, order=rng.permutation(pb3.M * pb3.grid.n_control))
    np.testing.assert_allclose(a.v, b.v, rtol=1e-10, atol=1e-12)


def test_global_optimality_sampling():
    pb = random_problem(5, 8, seed=2)
    star = solve_kkt_dense(pb)
    rng = np.random.default_rng(3)
    for scale in np.geomspace(1e-3, 10, 100):
        v = star.v + scale * rng.standard_normal(pb.control_shape)
        assert dense_cost(pb, v) >= star.J


def test_dense_model_matches_sweeps(pb3, rng):
    model = DenseModel(pb3, pb3.M)
    v = rng.standard_normal(pb3.control_shape)
    from pintoc.heat_core import forward_solve
    np.testing.assert_allclose(model.propagate(pb3.y0, v), forward_solve(pb3.op, pb3.dt, pb3.y0, v),
                               rtol=1e-12, atol=1e-14)


def test_size_guard():
    pb = make_problem(9, T=1.0, M=1000)
    assert pb.M * pb.grid.n_control > MAX_UNKNOWNS
    with pytest.raises(ConfigurationError, match="dense oracle"):
        solve_kkt_dense(pb)
