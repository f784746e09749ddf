import numpy as np
import pytest

from conftest import random_problem
from pintoc.algorithms import RunConfig, WorkerPool, run, sitpoc_iterate
from pintoc.errors import ConfigurationError
from pintoc.heat_core import OpCounter
from pintoc.optimal_control import evaluate_cost, gradient, make_problem
from pintoc.oracle import solve_kkt_dense


def test_config_validation(pb3, monkeypatch):
    with pytest.raises(ConfigurationError):
        RunConfig(pb3, N=3)
    with pytest.raises(ConfigurationError):
        RunConfig(pb3, algorithm="newton")
    with pytest.raises(ConfigurationError):
        RunConfig(pb3, l_max=0)
    with pytest.raises(ConfigurationError):
        RunConfig(pb3, tol=-1.0)
    monkeypatch.setenv("PINTOC_WORKERS", "3")
    assert RunConfig(pb3).workers == 3
    assert RunConfig(pb3, workers=2).workers == 2


@pytest.mark.parametrize("N", [1, 2, 4])
def test_sitpoc_reaches_oracle(N):
    pb = random_problem(3, 16, seed=1)
    star = solve_kkt_dense(pb)
    res = run(RunConfig(pb, N=N, max_outer=2000))
    assert res.converged
    assert pb.norm(res.v - star.v) <= 1e-6 * pb.norm(star.v)


def test_sitpoc_monotone_and_counters():
    pb = random_problem(3, 16, seed=1)
    h = run(RunConfig(pb, N=4, max_outer=50)).history
    for a, b in zip(h, h[1:]):
        assert b.J <= a.J + 1e-14 * abs(a.J)
        assert a.solves_serial <= b.solves_serial
        assert b.solves_parallel <= b.solves_serial
    assert h[-1].theta == 0.0 and h[-1].step_norm == 0.0


def test_sitpoc_iteration_cost_accounting(pb3):
    # serial sweeps 2M, local solves 4M/N in parallel (4M total), theta one sweep M
    cfg = RunConfig(pb3, N=4, l_max=1)
    c = OpCounter()
    sitpoc_iterate(pb3.zero_control(), cfg, c, take_step=True)
    M = pb3.M
    assert c.serial == 2 * M + 4 * M + M
    assert c.parallel == 2 * M + 4 * M // 4 + M


def test_record_fields(pb3):
    cfg = RunConfig(pb3, N=2, l_max=2)
    v = np.zeros(pb3.control_shape)
    v_next, rec, conv = sitpoc_iterate(v, cfg, OpCounter())
    assert not conv
    assert rec.J == pytest.approx(evaluate_cost(pb3, v), rel=1e-14)
    assert rec.grad_norm == pytest.approx(pb3.norm(gradient(pb3, v)), rel=1e-14)
    step = v_next - v
    assert rec.step_norm == pytest.approx(pb3.norm(step))
    assert rec.descent_inner == pytest.approx(pb3.inner(gradient(pb3, v), step))
    assert len(rec.rhos) == 2 * 2


def test_single_interval_exact_local_solve_finishes_in_one_step():
    pb = random_problem(2, 4, seed=3)
    res = run(RunConfig(pb, N=1, l_max=400, max_outer=5))
    assert res.converged and len(res.history) <= 3


def test_zero_data_converges_immediately():
    pb = make_problem(3, T=0.08, M=8)
    res = run(RunConfig(pb))
    assert res.converged and len(res.history) == 1


def test_max_outer_zero():
    pb = random_problem(3, 8)
    res = run(RunConfig(pb, algorithm="serial", max_outer=0))
    assert len(res.history) == 1 and not res.converged
    assert res.history[0].J == pytest.approx(evaluate_cost(pb, pb.zero_control()))


def test_nonconvergence_flag():
    pb = random_problem(3, 16, seed=1)
    res = run(RunConfig(pb, N=4, max_outer=3))
    assert not res.converged and len(res.history) == 4


def test_serial_baseline_converges():
    pb = random_problem(3, 16, seed=1)
    star = solve_kkt_dense(pb)
    res = run(RunConfig(pb, algorithm="serial", max_outer=5000))
    assert res.converged
    assert pb.norm(res.v - star.v) <= 1e-6 * pb.norm(star.v)


def test_worker_count_does_not_change_results():
    pb = random_problem(5, 16, seed=6)
    a = run(RunConfig(pb, N=4, max_outer=10, workers=1))
    b = run(RunConfig(pb, N=4, max_outer=10, workers=4))
    np.testing.assert_array_equal(a.v, b.v)
    assert [r.solves_parallel for r in a.history] == [r.solves_parallel for r in b.history]


def test_worker_pool_order_and_accounting():
    pool = WorkerPool(3)
    total = OpCounter()

    def task(n, c):
        c.add(n)
        return n * n

    try:
        assert pool.run_batch(task, [5, 1, 3], total) == [25, 1, 9]
    finally:
        pool.close()
    assert total.serial == 9 and total.parallel == 5
