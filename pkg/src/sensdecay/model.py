"""Decoupled subsystem dynamics, the drag-augmented vehicle model and RK4 simulation."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DivergenceError, NumericError, StructuralError, ValidationError

EQUILIBRIUM_TOL = 1e-14
DEFAULT_BLOWUP = 1e8
FD_STEP = 1e-7


@dataclass(frozen=True)
class SubsystemDynamics:
    """One node's vector field ``f_i(x_i, u_i)`` with ``f_i(0, 0) = 0``.

    ``jacobian`` returns ``(df/dx, df/du)``; when omitted, central
    differences are used.
    """

    state_dim: int
    control_dim: int
    vector_field: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]] | None = None
    name: str = "subsystem"

    def __post_init__(self):
        f0 = np.asarray(self.vector_field(np.zeros(self.state_dim), np.zeros(self.control_dim)), dtype=float)
        if f0.shape != (self.state_dim,):
            raise StructuralError(f"{self.name}: vector field returns shape {f0.shape}, expected ({self.state_dim},)")
        if np.max(np.abs(f0), initial=0.0) > EQUILIBRIUM_TOL:
            raise ValidationError(f"{self.name}: f(0, 0) = {f0} is not zero")

    def jacobians(self, x, u) -> tuple[np.ndarray, np.ndarray]:
        if self.jacobian is not None:
            a, b = self.jacobian(x, u)
            return np.asarray(a, dtype=float), np.asarray(b, dtype=float)
        a = np.empty((self.state_dim, self.state_dim))
        b = np.empty((self.state_dim, self.control_dim))
        for k in range(self.state_dim):
            e = np.zeros(self.state_dim)
            e[k] = FD_STEP
            a[:, k] = (self.vector_field(x + e, u) - self.vector_field(x - e, u)) / (2 * FD_STEP)
        for k in range(self.control_dim):
            e = np.zeros(self.control_dim)
            e[k] = FD_STEP
            b[:, k] = (self.vector_field(x, u + e) - self.vector_field(x, u - e)) / (2 * FD_STEP)
        return a, b


@dataclass(frozen=True)
class VehicleDragParams:
    beta: float = 5.0
    kappa: float = 10.0

    def __post_init__(self):
        if not (self.beta >= 0.0 and self.kappa >= 0.0):
            raise ValidationError("drag coefficients must be nonnegative")


def vehicle_field(p: VehicleDragParams, x_i, u_i) -> np.ndarray:
    """Double integrator with viscous and quadratic drag: ``(v, -beta v - kappa v|v| + u)``."""
    x_i = np.asarray(x_i, dtype=float)
    u = float(np.asarray(u_i, dtype=float).reshape(-1)[0])
    if not (np.all(np.isfinite(x_i)) and np.isfinite(u)):
        raise NumericError("non-finite input to vehicle field")
    v = x_i[1]
    return np.array([v, -p.beta * v - p.kappa * v * abs(v) + u])


def vehicle_subsystem(p: VehicleDragParams) -> SubsystemDynamics:
    def jac(x, u):
        v = x[1]
        return (np.array([[0.0, 1.0], [0.0, -p.beta - 2.0 * p.kappa * abs(v)]]),
                np.array([[0.0], [1.0]]))

    return SubsystemDynamics(2, 1, lambda x, u: vehicle_field(p, x, u), jac, name="vehicle")


class NetworkDynamics:
    """Aggregated field of decoupled subsystems, stacked in node order."""

    def __init__(self, subsystems: Sequence[SubsystemDynamics]):
        if not subsystems:
            raise StructuralError("need at least one subsystem")
        self.subsystems = tuple(subsystems)
        self.state_dims = tuple(d.state_dim for d in subsystems)
        self.control_dims = tuple(d.control_dim for d in subsystems)
        self._xo = np.concatenate([[0], np.cumsum(self.state_dims)]).astype(int)
        self._uo = np.concatenate([[0], np.cumsum(self.control_dims)]).astype(int)

    @property
    def node_count(self) -> int:
        return len(self.subsystems)

    @property
    def state_dim(self) -> int:
        return int(self._xo[-1])

    @property
    def control_dim(self) -> int:
        return int(self._uo[-1])

    def field(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        out = np.empty_like(x, dtype=float)
        xo, uo = self._xo, self._uo
        for k, d in enumerate(self.subsystems):
            out[xo[k]:xo[k + 1]] = d.vector_field(x[xo[k]:xo[k + 1]], u[uo[k]:uo[k + 1]])
        return out

    def vjp(self, x: np.ndarray, u: np.ndarray, lam: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``(lam' df/dx, lam' df/du)``, exploiting the block-diagonal Jacobian."""
        gx = np.empty(self.state_dim)
        gu = np.empty(self.control_dim)
        xo, uo = self._xo, self._uo
        for k, d in enumerate(self.subsystems):
            a, b = d.jacobians(x[xo[k]:xo[k + 1]], u[uo[k]:uo[k + 1]])
            lk = lam[xo[k]:xo[k + 1]]
            gx[xo[k]:xo[k + 1]] = lk @ a
            gu[uo[k]:uo[k + 1]] = lk @ b
        return gx, gu

    def restrict(self, nodes: Iterable[int]) -> "NetworkDynamics":
        return NetworkDynamics([self.subsystems[i - 1] for i in nodes])


class VehicleFleet(NetworkDynamics):
    """``s`` identical drag vehicles, evaluated with array operations."""

    def __init__(self, s: int, params: VehicleDragParams = VehicleDragParams()):
        super().__init__([vehicle_subsystem(params)] * s)
        self.params = params

    def field(self, x, u):
        v = x[1::2]
        out = np.empty_like(x, dtype=float)
        out[0::2] = v
        out[1::2] = -self.params.beta * v - self.params.kappa * v * np.abs(v) + u
        return out

    def vjp(self, x, u, lam):
        v = x[1::2]
        lv = lam[1::2]
        gx = np.empty_like(x, dtype=float)
        gx[0::2] = 0.0
        gx[1::2] = lam[0::2] - lv * (self.params.beta + 2.0 * self.params.kappa * np.abs(v))
        return gx, lv.copy()

    def restrict(self, nodes):
        return VehicleFleet(len(tuple(nodes)), self.params)


def rk4_step(f: Callable[[np.ndarray, np.ndarray], np.ndarray], x, u, h: float) -> np.ndarray:
    """Classical RK4 step with ``u`` held constant over ``[t, t + h]``."""
    if not h > 0:
        raise ValidationError("step size must be positive")
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    k1 = f(x, u)
    _finite(k1, 1)
    k2 = f(x + 0.5 * h * k1, u)
    _finite(k2, 2)
    k3 = f(x + 0.5 * h * k2, u)
    _finite(k3, 3)
    k4 = f(x + h * k3, u)
    _finite(k4, 4)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _finite(k, stage):
    if not np.all(np.isfinite(k)):
        raise NumericError(f"non-finite value in RK4 stage {stage}")


@dataclass
class TrajectoryBundle:
    """States at ``t_k = k h`` for ``k = 0..N`` and the ZOH controls for ``k = 0..N-1``."""

    time_step: float
    states: np.ndarray
    controls: np.ndarray
    state_dims: tuple[int, ...]
    control_dims: tuple[int, ...]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.controls = np.asarray(self.controls, dtype=float).reshape(-1, int(sum(self.control_dims)))
        if self.states.shape[1] != sum(self.state_dims):
            raise StructuralError("state width does not match state_dims")
        if len(self.controls) != len(self.states) - 1:
            raise StructuralError(f"{len(self.states)} state samples need {len(self.states) - 1} controls")
        if not self.time_step > 0:
            raise ValidationError("time step must be positive")

    @property
    def sample_count(self) -> int:
        return len(self.states)

    @property
    def steps(self) -> int:
        return len(self.states) - 1

    @property
    def times(self) -> np.ndarray:
        return self.time_step * np.arange(self.sample_count)

    @property
    def node_count(self) -> int:
        return len(self.state_dims)

    @property
    def initial_state(self) -> np.ndarray:
        return self.states[0]

    @cached_property
    def _xo(self):
        return np.concatenate([[0], np.cumsum(self.state_dims)]).astype(int)

    @cached_property
    def _uo(self):
        return np.concatenate([[0], np.cumsum(self.control_dims)]).astype(int)

    def node_states(self, i: int) -> np.ndarray:
        return self.states[:, self._xo[i - 1]:self._xo[i]]

    def node_controls(self, i: int) -> np.ndarray:
        return self.controls[:, self._uo[i - 1]:self._uo[i]]

    def block_norms(self) -> np.ndarray:
        """Euclidean norm of every node state at every sample, shape ``(N+1, s)``."""
        out = np.empty((self.sample_count, self.node_count))
        for i in range(self.node_count):
            out[:, i] = np.linalg.norm(self.states[:, self._xo[i]:self._xo[i + 1]], axis=1)
        return out


def discrete_l2(traj: TrajectoryBundle, target: Iterable[int]) -> float:
    """``sqrt(h * sum_{k=1..N} |x_target(hk)|^2)``; the ``k = 0`` sample is excluded."""
    target = sorted(set(int(i) for i in target))
    if not target:
        raise ValidationError("target set must be nonempty")
    for i in target:
        if not 1 <= i <= traj.node_count:
            raise ValidationError(f"node {i} outside 1..{traj.node_count}")
    sq = 0.0
    for i in target:
        xi = traj.node_states(i)[1:]
        sq += float(np.sum(xi * xi))
    return float(np.sqrt(traj.time_step * sq))


def simulate(dyn, x0, controls, h: float, blowup: float = DEFAULT_BLOWUP) -> TrajectoryBundle:
    """Roll the aggregated system forward under piecewise-constant controls."""
    x0 = np.asarray(x0, dtype=float)
    controls = np.asarray(controls, dtype=float).reshape(-1, dyn.control_dim)
    if x0.shape != (dyn.state_dim,):
        raise StructuralError(f"x0 must have length {dyn.state_dim}")
    states = np.empty((len(controls) + 1, dyn.state_dim))
    states[0] = x0
    for k, u in enumerate(controls):
        try:
            states[k + 1] = rk4_step(dyn.field, states[k], u, h)
        except NumericError as exc:
            raise DivergenceError(f"step {k}: {exc}", step=k) from exc
        if np.linalg.norm(states[k + 1]) > blowup:
            raise DivergenceError(f"state norm exceeded {blowup:g} at step {k + 1}", step=k + 1)
    return TrajectoryBundle(h, states, controls, dyn.state_dims, dyn.control_dims)
