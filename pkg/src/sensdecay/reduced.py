"""Reduced problem on an index set with frozen neighbour trajectories."""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np

from .cost import QuadraticCost, restrict_cost
from .errors import StructuralError, ValidationError
from .model import TrajectoryBundle
from .solver import OcpProblem, SolveReport, solve_mpc, solve_open_loop
from .topology import IndexSet, InterconnectionGraph


def check_closure(g: InterconnectionGraph, inner, boundary) -> tuple[bool, int | None]:
    """Every neighbour of ``inner`` outside it must lie in ``boundary``.

    Returns ``(True, None)`` or ``(False, violating_node)``.
    """
    inner = IndexSet(inner).check(g.node_count)
    boundary = IndexSet(boundary).check(g.node_count)
    if set(inner) & set(boundary):
        raise ValidationError(f"index sets overlap on {sorted(set(inner) & set(boundary))}")
    inside = set(inner)
    for i in inner:
        for j in g.neighbors(i):
            if j not in inside and j not in boundary:
                return False, j
    return True, None


@dataclass(frozen=True, eq=False)
class ReducedProblem:
    """Reduced problem on ``inner_set`` with ``fixed_trajectories`` on ``boundary_set``.

    ``fixed_trajectories`` has shape ``(K, n_J)`` on the base grid, columns in
    ``boundary_set`` node order; values are held constant between samples.
    """

    base: OcpProblem
    inner_set: IndexSet
    boundary_set: IndexSet
    fixed_trajectories: np.ndarray

    def __post_init__(self):
        s = self.base.cost.node_count
        inner = IndexSet(self.inner_set).check(s)
        boundary = IndexSet(self.boundary_set).check(s)
        if not inner:
            raise ValidationError("inner set must be nonempty")
        if set(inner) & set(boundary):
            raise ValidationError("inner and boundary sets must be disjoint")
        object.__setattr__(self, "inner_set", inner)
        object.__setattr__(self, "boundary_set", boundary)
        n_j = sum(self.base.cost.state_dims[j - 1] for j in boundary)
        xh = np.asarray(self.fixed_trajectories, dtype=float)
        if xh.ndim == 1 and n_j == 0:
            xh = xh.reshape(-1, 0)
        xh = np.atleast_2d(xh)
        if xh.shape[1] != n_j:
            raise StructuralError(f"fixed trajectories need {n_j} columns, got {xh.shape[1]}")
        object.__setattr__(self, "fixed_trajectories", xh)

    @classmethod
    def from_trajectory(cls, base: OcpProblem, inner, boundary, traj: TrajectoryBundle) -> "ReducedProblem":
        """Freeze the boundary nodes of ``traj`` (e.g. a full closed-loop solve)."""
        boundary = IndexSet(boundary)
        cols = base.cost.state_indices(boundary)
        return cls(base, IndexSet(inner), boundary, traj.states[:, cols])

    @property
    def grid_length(self) -> int:
        return len(self.fixed_trajectories)

    @cached_property
    def inner_cost(self) -> QuadraticCost:
        return restrict_cost(self.base.cost, self.inner_set)

    @cached_property
    def coupling(self) -> np.ndarray:
        """``Q_IJ`` as a dense ``n_I x n_J`` matrix."""
        c = self.base.cost
        return c.dense_q[np.ix_(c.state_indices(self.inner_set), c.state_indices(self.boundary_set))]

    @cached_property
    def linear_terms(self) -> np.ndarray:
        """Rows ``Q_IJ xhat_J(t_k)``; the cross term contributes ``2 x_I' c_k``."""
        return self.fixed_trajectories @ self.coupling.T

    @cached_property
    def active_steps(self) -> int:
        """One past the last grid index with a nonzero frozen state."""
        nz = np.flatnonzero(np.any(self.fixed_trajectories != 0.0, axis=1))
        return int(nz[-1]) + 1 if nz.size else 0

    def inner_x0(self) -> np.ndarray:
        return self.base.x0[self.base.cost.state_indices(self.inner_set)]

    def as_problem(self, x0=None) -> OcpProblem:
        dyn = self.base.dynamics.restrict(self.inner_set)
        return replace(self.base, dynamics=dyn, cost=self.inner_cost,
                       x0=self.inner_x0() if x0 is None else np.asarray(x0, dtype=float),
                       control_box=_restrict_box(self.base, self.inner_set),
                       linear_terms=self.linear_terms)


def _restrict_box(base: OcpProblem, nodes):
    if base.control_box is None:
        return None
    idx = base.cost.control_indices(nodes)
    return base.control_box[0][idx], base.control_box[1][idx]


def reduced_stage_cost(rp: ReducedProblem, x_I, u_I, t_index: int) -> float:
    """Cross terms with the frozen states plus the inner state and control quadratics."""
    if not 0 <= t_index < rp.grid_length:
        raise ValidationError(f"t_index {t_index} outside grid 0..{rp.grid_length - 1}")
    x_I = np.asarray(x_I, dtype=float)
    u_I = np.asarray(u_I, dtype=float)
    c = rp.inner_cost
    if x_I.shape != (c.state_dim,) or u_I.shape != (c.control_dim,):
        raise StructuralError("inner state/control dimensions do not match the inner set")
    xh = rp.fixed_trajectories[t_index]
    cross = 2.0 * float(x_I @ rp.coupling @ xh)
    return cross + float(x_I @ c.dense_q @ x_I) + float(u_I @ c.dense_r @ u_I)


def solve_reduced(rp: ReducedProblem, eps: float = 1e-4, max_steps: int = 2000,
                  graph: InterconnectionGraph | None = None, method: str = "open_loop",
                  extra_steps: int = 0, max_inner: int = 5000) -> SolveReport:
    """Solve the reduced problem on the inner nodes.

    ``method="open_loop"`` transcribes the whole grid of the frozen
    trajectories (plus ``extra_steps``) as one window; this is the variant
    whose solution coincides with the restriction of a full solve on the
    same window. ``method="mpc"`` runs the receding-horizon loop, at least
    until the frozen trajectories are exhausted. Past their grid the frozen
    states are taken as zero. The objective is the reduced cost and is not
    clamped (it is typically negative).
    """
    p = rp.as_problem()
    if method == "open_loop":
        steps = max(rp.grid_length - 1, 0) + extra_steps
        if steps == 0 or (rp.active_steps == 0 and np.linalg.norm(p.x0) <= eps):
            report = solve_mpc(p, eps=eps, max_steps=max_steps)
        else:
            report = solve_open_loop(p, steps, eps=eps, max_inner=max_inner)
        needed = report.mpc_steps + 1
    elif method == "mpc":
        report = solve_mpc(p, eps=eps, max_steps=max_steps, min_steps=rp.active_steps)
        needed = report.mpc_steps + p.prediction_horizon + 1
    else:
        raise ValidationError(f"unknown method {method!r}")
    report.flags["xhat_extended_by_zero"] = needed > rp.grid_length and rp.active_steps > 0
    if report.flags["xhat_extended_by_zero"]:
        report.notes.append(f"frozen trajectories ({rp.grid_length} samples) extended by zero to {needed}")
    if graph is not None:
        ok, bad = check_closure(graph, rp.inner_set, rp.boundary_set)
        report.flags["restriction_exact"] = ok
        if not ok:
            report.notes.append(f"closure condition fails at node {bad}; not a restriction of the full optimum")
    return report


def restricted_discrepancy(full: TrajectoryBundle, cost: QuadraticCost, nodes, reduced: TrajectoryBundle) -> float:
    """Discrete L2 distance between the inner-node part of ``full`` and ``reduced``.

    The shorter record is padded with zeros (both runs end below ``eps``).
    """
    a = full.states[:, cost.state_indices(nodes)]
    b = reduced.states
    if a.shape[1] != b.shape[1]:
        raise StructuralError("trajectories cover different state dimensions")
    k = max(len(a), len(b))
    pa = np.zeros((k, a.shape[1]))
    pb = np.zeros((k, a.shape[1]))
    pa[:len(a)] = a
    pb[:len(b)] = b
    d = pa[1:] - pb[1:]
    return float(np.sqrt(full.time_step * np.sum(d * d)))
