import numpy as np
import pytest

from lowra.errors import InfeasibleBudgetError, ShapeError, SolverTimeout
from lowra.ilp import FEASIBLE, OPTIMAL, assign_within_cluster, solve_cluster_ilp

from oracles import brute_force_placement, enumerate_cluster_ilp


def test_worked_instance():
    q = solve_cluster_ilp([[10, 4, 1], [8, 3, 0.5]], [2, 1], [4, 4], (1, 2, 4), 28)
    assert q.y.tolist() == [[0, 2, 0], [0, 1, 0]]
    assert q.objective == 11 and q.bits == 24
    assert q.status == OPTIMAL and q.proven_optimal


def test_worked_instance_omega_scaled_costs():
    q = solve_cluster_ilp([[40, 16, 4], [32, 12, 2]], [2, 1], [4, 4], (1, 2, 4), 28)
    assert q.objective == 44 and q.bits == 24


def test_single_cluster_picks_cheapest():
    q = solve_cluster_ilp([[5.0, 2.0, 1.0]], [1], [8], (1, 2, 4), 32)
    assert q.y.tolist() == [[0, 0, 1]]


def test_tight_budget_forces_minimum():
    q = solve_cluster_ilp([[5.0, 2.0, 1.0], [3, 2, 1]], [3, 2], [4, 4], (1, 2, 4), 20)
    assert q.y[:, 0].tolist() == [3, 2] and q.bits == 20


def test_tie_prefers_fewer_bits():
    q = solve_cluster_ilp([[1.0, 1.0]], [2], [4], (2, 4), 32)
    assert q.y.tolist() == [[2, 0]] and q.bits == 16


def test_infeasible_reports_min_bpp():
    with pytest.raises(InfeasibleBudgetError) as info:
        solve_cluster_ilp([[1.0, 0.5]], [2], [4], (2, 4), 15)
    assert info.value.min_bpp == 2.0


def test_timeout_carries_feasible_incumbent():
    costs = np.array([[3.0, 2.0, 1.0]] * 3)
    with pytest.raises(SolverTimeout) as info:
        solve_cluster_ilp(costs, [5, 5, 5], [4, 4, 4], (1, 2, 4), 150, max_work=10)
    inc = info.value.incumbent
    assert inc.status == FEASIBLE and not inc.proven_optimal
    assert inc.bits <= 150 and inc.y.sum(axis=1).tolist() == [5, 5, 5]


def test_mixed_omegas_against_enumeration(rng):
    for _ in range(50):
        c = int(rng.integers(1, 4))
        costs = np.sort(rng.uniform(0, 10, (c, 3)), axis=1)[:, ::-1]
        sizes = rng.integers(1, 4, c)
        omegas = rng.choice([3, 4, 6], c)
        lo, hi = int((sizes * omegas).sum()), int((sizes * omegas).sum() * 4)
        budget = int(rng.integers(lo, hi + 1))
        q = solve_cluster_ilp(costs, sizes, omegas, (1, 2, 4), budget)
        assert q.objective == pytest.approx(enumerate_cluster_ilp(costs, sizes, omegas, (1, 2, 4), budget), rel=1e-12)
        assert q.bits <= budget


def test_shape_check():
    with pytest.raises(ShapeError):
        solve_cluster_ilp([[1.0, 2.0]], [1, 2], [4, 4], (2, 4), 100)


def test_within_cluster_example():
    mse = np.array([[9, 2, 1], [9, 5, 1], [9, 8, 1]], dtype=float)
    choice = assign_within_cluster(mse, [0, 2, 1])
    assert choice.tolist() == [1, 1, 2]
    assert mse[np.arange(3), choice].sum() == 8


def test_within_cluster_uniform_quota(rng):
    mse = rng.uniform(0, 1, (5, 3))
    choice = assign_within_cluster(mse, [0, 5, 0])
    assert choice.tolist() == [1] * 5


def test_within_cluster_random_vs_brute_force(rng):
    for _ in range(30):
        n = int(rng.integers(1, 9))
        mse = rng.uniform(0, 1, (n, 3))
        quota = np.bincount(rng.integers(0, 3, n), minlength=3)
        choice = assign_within_cluster(mse, quota)
        assert np.bincount(choice, minlength=3).tolist() == quota.tolist()
        total = 0.0
        for i in range(n):
            total = total + mse[i, choice[i]]
        assert total == brute_force_placement(mse, quota)


def test_within_cluster_quota_mismatch():
    with pytest.raises(ShapeError):
        assign_within_cluster(np.ones((3, 2)), [1, 1])
