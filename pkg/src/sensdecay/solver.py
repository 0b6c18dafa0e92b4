"""Receding-horizon approximation of the infinite-horizon optimal trajectory.

Each MPC step solves a finite-horizon direct-transcription problem

    min_U  h * sum_{k<H} l(x_k, u_k) + w * x_H' Q x_H,   x_{k+1} = RK4(x_k, u_k)

with an L-BFGS method whose gradient comes from the discrete adjoint of the
RK4 recursion.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .cost import QuadraticCost
from .errors import DivergenceError, SolverError, StructuralError, ValidationError
from .model import DEFAULT_BLOWUP, NetworkDynamics, TrajectoryBundle, VehicleFleet, rk4_step
from .optim import lbfgs

logger = logging.getLogger(__name__)

DEFAULT_HORIZON = 40
DEFAULT_TERMINAL_WEIGHT = 10.0
GRAD_TOL = 1e-12
MAX_INNER = 1000
LBFGS_MEMORY = 10
MAX_HALVINGS = 60


@dataclass(frozen=True)
class OcpProblem:
    """Discretized optimal control problem.

    ``control_box`` is ``(lower, upper)`` per control component, or ``None``
    for ``U = R^m``. ``linear_terms`` optionally adds ``2 x_k' c_k`` to the
    stage cost at absolute grid index ``k``; rows past the end count as zero.
    """

    dynamics: NetworkDynamics
    cost: QuadraticCost
    x0: np.ndarray
    step: float = 0.05
    prediction_horizon: int = DEFAULT_HORIZON
    terminal_weight: float = DEFAULT_TERMINAL_WEIGHT
    control_box: tuple[np.ndarray, np.ndarray] | None = None
    linear_terms: np.ndarray | None = None
    grad_tol: float = GRAD_TOL
    max_inner: int = MAX_INNER
    blowup: float = DEFAULT_BLOWUP

    def __post_init__(self):
        x0 = np.asarray(self.x0, dtype=float).ravel()
        object.__setattr__(self, "x0", x0)
        if tuple(self.dynamics.state_dims) != tuple(self.cost.state_dims) or \
                tuple(self.dynamics.control_dims) != tuple(self.cost.control_dims):
            raise StructuralError("dynamics and cost block dimensions differ")
        if x0.shape != (self.dynamics.state_dim,):
            raise StructuralError(f"x0 must have length {self.dynamics.state_dim}")
        if self.prediction_horizon < 1:
            raise ValidationError("prediction horizon must be >= 1")
        if not self.step > 0:
            raise ValidationError("step must be positive")
        if self.terminal_weight < 0:
            raise ValidationError("terminal weight must be nonnegative")
        if self.control_box is not None:
            lo, hi = (np.broadcast_to(np.asarray(b, dtype=float), (self.dynamics.control_dim,)).copy()
                      for b in self.control_box)
            if np.any(lo > hi) or np.any(lo > 0) or np.any(hi < 0):
                raise ValidationError("control box must contain the origin")
            object.__setattr__(self, "control_box", (lo, hi))
        if self.linear_terms is not None:
            c = np.atleast_2d(np.asarray(self.linear_terms, dtype=float))
            if c.shape[1] != self.dynamics.state_dim:
                raise StructuralError("linear_terms must have one column per state component")
            object.__setattr__(self, "linear_terms", c)

    @property
    def state_dim(self) -> int:
        return self.dynamics.state_dim

    @property
    def control_dim(self) -> int:
        return self.dynamics.control_dim

    def linear_window(self, start: int, length: int) -> np.ndarray:
        """Rows ``start .. start+length-1`` of the linear terms, zero-padded."""
        out = np.zeros((length, self.state_dim))
        c = self.linear_terms
        if c is not None and start < len(c):
            take = min(length, len(c) - start)
            out[:take] = c[start:start + take]
        return out

    def stage_value(self, x, u, k: int = 0) -> float:
        q, r = self.cost.dense_q, self.cost.dense_r
        val = x @ q @ x + u @ r @ u
        if self.linear_terms is not None and k < len(self.linear_terms):
            val += 2.0 * (x @ self.linear_terms[k])
        return float(val)


class HorizonObjective:
    """Objective and adjoint gradient of one finite-horizon subproblem."""

    def __init__(self, p: OcpProblem, x_start, t_index: int = 0):
        self.p = p
        self.x_start = np.asarray(x_start, dtype=float)
        self.t_index = t_index
        self.H = p.prediction_horizon
        self.C = np.ascontiguousarray(p.linear_window(t_index, self.H + 1))
        self.Q = np.ascontiguousarray(p.cost.dense_q)
        self.R = np.ascontiguousarray(p.cost.dense_r)
        self.fast = isinstance(p.dynamics, VehicleFleet)
        self.evaluations = 0

    def __call__(self, U) -> tuple[float, np.ndarray]:
        self.evaluations += 1
        U = np.ascontiguousarray(np.asarray(U, dtype=float).reshape(self.H, self.p.control_dim))
        if self.fast:
            prm = self.p.dynamics.params
            return _kernels.fleet_objective_gradient(
                self.x_start, U, self.p.step, prm.beta, prm.kappa, self.Q, self.R, self.C,
                self.p.terminal_weight, self.p.blowup)
        return self.generic(U)

    def rollout(self, U) -> np.ndarray:
        U = np.asarray(U, dtype=float).reshape(self.H, self.p.control_dim)
        X = np.empty((self.H + 1, self.p.state_dim))
        X[0] = self.x_start
        for k in range(self.H):
            X[k + 1] = rk4_step(self.p.dynamics.field, X[k], U[k], self.p.step)
        return X

    def generic(self, U) -> tuple[float, np.ndarray]:
        """Reference numpy path: forward RK4 sweep, then reverse-mode through each stage."""
        p, h, H = self.p, self.p.step, self.H
        f, vjp = p.dynamics.field, p.dynamics.vjp
        Q, R, C, w = self.Q, self.R, self.C, p.terminal_weight
        X = np.empty((H + 1, p.state_dim))
        stages = []
        X[0] = self.x_start
        with np.errstate(all="ignore"):
            for k in range(H):
                x, u = X[k], U[k]
                k1 = f(x, u)
                z2 = x + 0.5 * h * k1
                k2 = f(z2, u)
                z3 = x + 0.5 * h * k2
                k3 = f(z3, u)
                z4 = x + h * k3
                k4 = f(z4, u)
                X[k + 1] = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
                stages.append((x, z2, z3, z4))
                nrm = np.linalg.norm(X[k + 1])
                if not nrm <= p.blowup:
                    return np.inf, np.zeros_like(U)
        J = h * float(np.einsum("ki,ij,kj->", X[:H], Q, X[:H]) + 2.0 * np.sum(X[:H] * C[:H])
                      + np.einsum("ki,ij,kj->", U, R, U))
        xH = X[H]
        J += w * float(xH @ Q @ xH + 2.0 * xH @ C[H])
        grad = np.empty_like(U)
        lam = w * (2.0 * Q @ xH + 2.0 * C[H])
        for k in range(H - 1, -1, -1):
            z1, z2, z3, z4 = stages[k]
            u = U[k]
            g1, g2, g3, g4 = (h / 6.0) * lam, (h / 3.0) * lam, (h / 3.0) * lam, (h / 6.0) * lam
            gx = lam.copy()
            gu = np.zeros(p.control_dim)
            a, b = vjp(z4, u, g4)
            gx += a
            g3 = g3 + h * a
            gu += b
            a, b = vjp(z3, u, g3)
            gx += a
            g2 = g2 + 0.5 * h * a
            gu += b
            a, b = vjp(z2, u, g2)
            gx += a
            g1 = g1 + 0.5 * h * a
            gu += b
            a, b = vjp(z1, u, g1)
            gx += a
            gu += b
            grad[k] = gu + 2.0 * h * (R @ u)
            lam = gx + 2.0 * h * (Q @ X[k] + C[k])
        return J, grad


@dataclass
class HorizonSolution:
    controls: np.ndarray
    states: np.ndarray
    objective: float
    iterations: int
    converged: bool
    stalled: bool
    initial_objective: float
    history: list[float] = field(default_factory=list, repr=False)


def solve_finite_horizon(p: OcpProblem, u_init=None, x_start=None, t_index: int = 0) -> HorizonSolution:
    """Locally optimal control sequence for one prediction window.

    Raises:
        SolverError: the warm start already drives the rollout past the
            blow-up threshold.
    """
    H, m = p.prediction_horizon, p.control_dim
    U0 = np.zeros((H, m)) if u_init is None else np.array(u_init, dtype=float).reshape(H, m)
    obj = HorizonObjective(p, p.x0 if x_start is None else x_start, t_index)
    lower, upper = p.control_box if p.control_box is not None else (None, None)
    if lower is not None:
        lower = np.tile(lower, H)
        upper = np.tile(upper, H)
        U0 = np.clip(U0, lower.reshape(H, m), upper.reshape(H, m))
    # inverse of the control-weight curvature 2 h R; the state terms only add to it
    r_max = float(np.max(np.linalg.eigvalsh(obj.R))) if m else 1.0
    try:
        res = lbfgs(obj, U0, memory=LBFGS_MEMORY, gtol=p.grad_tol, max_iter=p.max_inner,
                    max_halvings=MAX_HALVINGS, lower=lower, upper=upper,
                    initial_scale=1.0 / (2.0 * p.step * r_max))
    except FloatingPointError as exc:
        raise SolverError(f"rollout diverged at the initial guess (t_index={t_index})") from exc
    U = np.asarray(res.x).reshape(H, m)
    return HorizonSolution(U, obj.rollout(U), float(res.fun), res.iterations, res.converged,
                           res.stalled, res.history[0], res.history)


@dataclass
class SolveReport:
    """Closed-loop MPC result; ``trajectory`` is the surrogate for the optimal ``x*``."""

    trajectory: TrajectoryBundle
    mpc_steps: int
    converged: bool
    objective_estimate: float
    per_step_inner_iterations: list[int]
    per_step_objective: list[float]
    per_step_warm_objective: list[float]
    stalled_steps: list[int]
    eps: float
    final_state_norm: float
    wall_time: float = 0.0
    notes: list[str] = field(default_factory=list)
    flags: dict = field(default_factory=dict)


def _shift(U: np.ndarray) -> np.ndarray:
    out = np.empty_like(U)
    out[:-1] = U[1:]
    out[-1] = U[-1]
    return out


def solve_mpc(p: OcpProblem, eps: float = 1e-4, max_steps: int = 2000, min_steps: int = 0,
              u_init=None) -> SolveReport:
    """Receding-horizon closed loop until ``||x(hN)|| <= eps`` (Euclidean, full state).

    ``min_steps`` forces the loop to continue while time-varying linear terms
    are still active even if the state is already small.
    """
    if not eps > 0:
        raise ValidationError("eps must be positive")
    t0 = time.perf_counter()
    H, m = p.prediction_horizon, p.control_dim
    x = p.x0.copy()
    U = np.zeros((H, m)) if u_init is None else np.array(u_init, dtype=float).reshape(H, m)
    states = [x.copy()]
    controls = []
    iters, objs, warm, stalled = [], [], [], []
    closed_loop = 0.0
    notes = []
    k = 0
    while (np.linalg.norm(x) > eps or k < min_steps) and k < max_steps:
        sol = solve_finite_horizon(p, U, x_start=x, t_index=k)
        u0 = sol.controls[0]
        closed_loop += p.step * p.stage_value(x, u0, k)
        x = rk4_step(p.dynamics.field, x, u0, p.step)
        if not np.linalg.norm(x) <= p.blowup:
            raise DivergenceError(f"closed loop diverged at MPC step {k}", step=k)
        states.append(x.copy())
        controls.append(u0.copy())
        iters.append(sol.iterations)
        objs.append(sol.objective)
        warm.append(sol.initial_objective)
        if sol.stalled or not sol.converged:
            stalled.append(k)
        U = _shift(sol.controls)
        k += 1
    final = float(np.linalg.norm(x))
    converged = final <= eps and k >= min_steps
    if not converged:
        notes.append(f"max_steps={max_steps} reached with ||x|| = {final:.3e}")
    if stalled:
        notes.append(f"inner solver did not reach gradient tolerance in {len(stalled)} step(s)")
    traj = TrajectoryBundle(p.step, np.array(states),
                            np.array(controls).reshape(-1, m), p.dynamics.state_dims, p.dynamics.control_dims)
    logger.info("MPC finished: N=%d, ||x(hN)||=%.3e, converged=%s", k, final, converged)
    return SolveReport(traj, k, converged, closed_loop, iters, objs, warm, stalled, eps, final,
                       time.perf_counter() - t0, notes)


def with_horizon(p: OcpProblem, horizon: int) -> OcpProblem:
    return replace(p, prediction_horizon=horizon)


def solve_open_loop(p: OcpProblem, steps: int, eps: float = 1e-4, u_init=None,
                    max_inner: int | None = None) -> SolveReport:
    """One transcription over the whole window ``[0, steps * h]``.

    Unlike :func:`solve_mpc` the result is the minimizer of a single fixed
    discretized problem, so restriction arguments between a problem and its
    sub-problems hold exactly up to the inner tolerance.
    """
    t0 = time.perf_counter()
    m = p.control_dim
    if steps < 1:
        raise ValidationError("open-loop window needs at least one step")
    q = replace(p, prediction_horizon=steps, max_inner=max_inner or p.max_inner)
    sol = solve_finite_horizon(q, u_init)
    final = float(np.linalg.norm(sol.states[-1]))
    traj = TrajectoryBundle(p.step, sol.states, sol.controls.reshape(-1, m),
                            p.dynamics.state_dims, p.dynamics.control_dims)
    notes = []
    if not sol.converged:
        notes.append(f"inner solver stopped at |grad| above {p.grad_tol:g} after {sol.iterations} iterations")
    if final > eps:
        notes.append(f"window too short: ||x(T)|| = {final:.3e} > eps")
    return SolveReport(traj, steps, sol.converged and final <= eps, sol.objective, [sol.iterations],
                       [sol.objective], [sol.initial_objective], [] if sol.converged else [0], eps, final,
                       time.perf_counter() - t0, notes, {"open_loop": True})
