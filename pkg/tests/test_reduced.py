import numpy as np
import pytest

from conftest import chain_problem
from sensdecay.errors import StructuralError, ValidationError
from sensdecay.model import TrajectoryBundle
from sensdecay.reduced import (ReducedProblem, check_closure, reduced_stage_cost, restricted_discrepancy,
                               solve_reduced)
from sensdecay.solver import solve_mpc, solve_open_loop
from sensdecay.topology import IndexSet, InterconnectionGraph, chain_graph


def test_closure_on_chain():
    g = chain_graph(4)
    assert check_closure(g, [3, 4], [2]) == (True, None)
    ok, bad = check_closure(g, [2, 3], [4])
    assert not ok and bad == 1  # neighbour of 2 outside I and J


def test_closure_rejects_overlap():
    with pytest.raises(ValidationError):
        check_closure(chain_graph(4), [2, 3], [3])


def test_closure_on_disconnected_graph():
    g = InterconnectionGraph.from_edges(4, [(1, 2), (3, 4)])
    assert check_closure(g, [3, 4], []) == (True, None)


def test_reduced_problem_validation():
    base = chain_problem(4, i_star=1)
    with pytest.raises(ValidationError):
        ReducedProblem(base, IndexSet([2]), IndexSet([2]), np.zeros((5, 2)))
    with pytest.raises(StructuralError):
        ReducedProblem(base, IndexSet([3, 4]), IndexSet([2]), np.zeros((5, 3)))


def test_reduced_stage_cost_is_full_cost_minus_frozen_part(rng):
    # x'Qx = x_I'Q_II x_I + 2 x_I'Q_IJ x_J + x_J'Q_JJ x_J when the support is I u J
    base = chain_problem(5)
    q, r = base.cost.dense_q, base.cost.dense_r
    inner, boundary = [3, 4, 5], [2]
    xh = rng.normal(size=(6, 2))
    rp = ReducedProblem(base, IndexSet(inner), IndexSet(boundary), xh)
    ii, jj = base.cost.state_indices(inner), base.cost.state_indices(boundary)
    for k in range(6):
        x = np.zeros(10)
        x[ii] = rng.normal(size=6)
        x[jj] = xh[k]
        u = np.zeros(5)
        u[base.cost.control_indices(inner)] = rng.normal(size=3)
        full = x @ q @ x + u @ r @ u
        frozen = xh[k] @ q[np.ix_(jj, jj)] @ xh[k]
        assert reduced_stage_cost(rp, x[ii], u[base.cost.control_indices(inner)], k) == pytest.approx(
            full - frozen, rel=1e-12, abs=1e-12)
    with pytest.raises(ValidationError):
        reduced_stage_cost(rp, x[ii], u[base.cost.control_indices(inner)], 6)


def test_zero_frozen_trajectory_gives_plain_subproblem():
    base = chain_problem(4, i_star=3)
    rp = ReducedProblem(base, IndexSet([3, 4]), IndexSet([2]), np.zeros((1, 2)))
    assert rp.active_steps == 0 and not np.any(rp.linear_terms)
    rep = solve_reduced(rp, eps=1e-4, graph=chain_graph(4))
    assert rep.converged and rep.flags["restriction_exact"]
    assert not rep.flags["xhat_extended_by_zero"]


def test_restriction_of_open_loop_optimum_is_reduced_optimum():
    base = chain_problem(4, i_star=4)
    full = solve_open_loop(base, 300, eps=1e-4)
    rp = ReducedProblem.from_trajectory(base, [3, 4], [2], full.trajectory)
    red = solve_reduced(rp, eps=1e-4, graph=chain_graph(4))
    d = restricted_discrepancy(full.trajectory, base.cost, [3, 4], red.trajectory)
    assert red.flags["restriction_exact"]
    assert d <= 1e-5


def test_closure_failure_is_flagged():
    base = chain_problem(4, i_star=2)
    full = solve_mpc(base, eps=1e-3)
    rp = ReducedProblem.from_trajectory(base, [2, 3], [4], full.trajectory)
    red = solve_reduced(rp, eps=1e-3, graph=chain_graph(4))
    assert red.flags["restriction_exact"] is False and red.notes


def test_discrepancy_pads_with_zeros():
    a = TrajectoryBundle(1.0, np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]]), np.zeros((2, 1)), (2,), (1,))
    b = TrajectoryBundle(1.0, np.array([[1.0, 0.0], [1.0, 0.0]]), np.zeros((1, 1)), (2,), (1,))
    from sensdecay.cost import QuadraticCost

    c = QuadraticCost.from_dense(np.eye(2), np.eye(1), (2,), (1,))
    assert restricted_discrepancy(a, c, [1], b) == pytest.approx(1.0)
    assert restricted_discrepancy(a, c, [1], a) == 0.0


def test_unknown_method_rejected():
    base = chain_problem(3, i_star=3)
    rp = ReducedProblem(base, IndexSet([3]), IndexSet([2]), np.ones((3, 2)))
    with pytest.raises(ValidationError):
        solve_reduced(rp, method="newton")
