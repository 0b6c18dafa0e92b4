"""Controllability certificate, decay constants and bound checks on trajectories."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .cost import SpectralBounds
from .errors import CertificateUnavailableError, NotPositiveDefiniteError, PreconditionError, ValidationError
from .model import TrajectoryBundle, VehicleDragParams, discrete_l2
from .topology import InterconnectionGraph, Unreachable, graph_distance, level_sets

SUPPORT_TOL = 1e-12
SIGMA_SAFETY = 0.95
C_SAFETY = 1.05


@dataclass(frozen=True)
class ControllabilityCertificate:
    """Constants ``(C, sigma)`` with ``|x(t)|, |u(t)| <= C exp(-sigma t) |x0|`` for ``x0`` in the box of radius ``omega_radius``."""

    c_overshoot: float
    sigma_rate: float
    witness: str
    omega_radius: float
    c_state: float | None = None
    c_control: float | None = None
    sample_horizon: float | None = None

    def __post_init__(self):
        if not self.c_overshoot >= 1.0:
            raise ValidationError("overshoot constant C must be >= 1")
        if not self.sigma_rate > 0.0:
            raise ValidationError("decay rate sigma must be positive")


def feedback_matrix(beta: float) -> np.ndarray:
    """Closed-loop matrix of one vehicle under ``u = -y + kappa v|v|``."""
    return np.array([[0.0, 1.0], [-1.0, -beta]])


def _sampled_envelope(a: np.ndarray, sigma: float, horizon: float, dt: float) -> tuple[float, float]:
    """``max_k ||exp(A t_k)||_2 exp(sigma t_k)`` on ``t_k = k dt <= horizon``; also returns the arg-max time."""
    step = expm(a * dt)
    e = np.eye(a.shape[0])
    best, at = 1.0, 0.0
    for k in range(1, int(math.floor(horizon / dt + 1e-9)) + 1):
        e = e @ step
        val = np.linalg.norm(e, 2) * math.exp(sigma * k * dt)
        if val > best:
            best, at = val, k * dt
    return best, at


def vehicle_certificate(p: VehicleDragParams, omega_radius: float = 2.0, sample_horizon: float = 60.0,
                        sample_step: float = 0.01, sigma_safety: float = SIGMA_SAFETY,
                        c_safety: float = C_SAFETY, node_state_dim: int = 2) -> ControllabilityCertificate:
    """Certificate for the drag vehicle from the drag-cancelling feedback ``u = -y + kappa v|v|``.

    The closed loop ``x' = A x`` is linear, so ``sigma`` is the (shrunk)
    spectral abscissa of ``A`` and the state overshoot is the sampled
    supremum of ``||exp(At)|| exp(sigma t)``. The sampling window is doubled
    until that supremum sits in its first half. The control bound
    ``C_x + kappa C_x^2 sup|x_i|`` uses ``sup|x_i| = omega_radius * sqrt(n_i)``.
    """
    if not p.beta > 0:
        raise CertificateUnavailableError("the feedback closed loop is only stable for beta > 0")
    if omega_radius <= 0 or sample_step <= 0 or sample_horizon <= 0:
        raise ValidationError("omega_radius, sample_step and sample_horizon must be positive")
    a = feedback_matrix(p.beta)
    rate = -float(np.max(np.linalg.eigvals(a).real))
    sigma = sigma_safety * rate
    horizon = sample_horizon
    while True:
        env, at = _sampled_envelope(a, sigma, horizon, sample_step)
        if at <= 0.5 * horizon or horizon > 1e5:
            break
        horizon *= 2.0
    c_state = c_safety * env
    sup_x = omega_radius * math.sqrt(node_state_dim)
    c_control = c_state + p.kappa * c_state ** 2 * sup_x
    return ControllabilityCertificate(
        c_overshoot=max(c_state, c_control),
        sigma_rate=sigma,
        witness=f"u_i = -y_i + {p.kappa:g} v_i|v_i|, closed loop [[0,1],[-1,-{p.beta:g}]]",
        omega_radius=omega_radius,
        c_state=c_state,
        c_control=c_control,
        sample_horizon=horizon,
    )


@dataclass
class BoundRecord:
    kind: str  # "node", "shell" or "all"
    target: tuple[int, ...]
    dist: int | None
    bound: float | None
    measured: float
    satisfied: bool | None
    status: str

    @property
    def ratio(self) -> float | None:
        if self.bound is None:
            return None
        return self.measured / self.bound if self.bound > 0 else math.inf


@dataclass
class DecayCertificate:
    cert: ControllabilityCertificate
    bounds: SpectralBounds
    c_init: float
    c_prop: float
    s_const: float
    q_exponent: int
    rho: float
    records: list[BoundRecord] = field(default_factory=list)

    def bound(self, dist: int, x0_norm: float) -> float:
        return self.s_const * self.rho ** dist * x0_norm

    def summary(self) -> dict:
        return {
            "C": self.cert.c_overshoot, "sigma": self.cert.sigma_rate,
            "mu": self.bounds.mu, "M_Q": self.bounds.m_q, "M_R": self.bounds.m_r,
            "C_init": self.c_init, "C_prop": self.c_prop, "S": self.s_const,
            "q": self.q_exponent, "rho": self.rho,
        }


def theorem_constants(cert: ControllabilityCertificate, sb: SpectralBounds) -> DecayCertificate:
    """``C_init = C sqrt((M_Q + M_R) / (2 sigma mu))``, ``C_prop = 2 M_Q / mu``,
    ``S = 2 max(C_init, C_prop)``, ``q = ceil(S)^2``, ``rho = 2^(-1/q)``."""
    if not sb.mu > 0:
        raise NotPositiveDefiniteError("mu must be positive")
    if not (cert.sigma_rate > 0 and cert.c_overshoot > 0 and sb.m_q > 0 and sb.m_r > 0):
        raise ValidationError("all constants must be positive")
    c_init = cert.c_overshoot * math.sqrt((sb.m_q + sb.m_r) / (2.0 * cert.sigma_rate * sb.mu))
    c_prop = 2.0 * sb.m_q / sb.mu
    s_const = 2.0 * max(c_init, c_prop)
    q = math.ceil(s_const) ** 2
    rho = 2.0 ** (-1.0 / q)
    return DecayCertificate(cert, sb, c_init, c_prop, s_const, q, rho)


def _perturbation_norm(traj: TrajectoryBundle, i_star: int) -> float:
    if not 1 <= i_star <= traj.node_count:
        raise PreconditionError(f"i* = {i_star} outside 1..{traj.node_count}")
    x0 = traj.initial_state
    for j in range(1, traj.node_count + 1):
        if j != i_star:
            xj = x0[traj._xo[j - 1]:traj._xo[j]]
            if np.max(np.abs(xj), initial=0.0) > SUPPORT_TOL:
                raise PreconditionError(f"initial state is not supported on node {i_star} alone (node {j} nonzero)")
    nrm = float(np.linalg.norm(traj.node_states(i_star)[0]))
    if nrm == 0.0:
        raise PreconditionError("the perturbation x0[i*] is zero")
    return nrm


def _status(measured, bound, slack):
    if measured <= bound:
        return True, "satisfied"
    if measured <= bound + slack:
        return False, "violated_within_solver_tolerance"
    return False, "violated"


def check_decay_bound(dc: DecayCertificate, g: InterconnectionGraph, traj: TrajectoryBundle, i_star: int,
                      x0_norm: float | None = None, solver_slack: float = 0.0) -> list[BoundRecord]:
    """Compare ``||x_W||_L2`` with ``S rho^dist(i*, W) |x0[i*]|`` for every node and every shell.

    ``solver_slack`` separates genuine violations from ones within the
    accuracy of the trajectory solver.
    """
    norm0 = _perturbation_norm(traj, i_star)
    if x0_norm is None:
        x0_norm = norm0
    records = []
    for j in g.nodes:
        d = graph_distance(g, i_star, [j])
        measured = discrete_l2(traj, [j])
        if d is Unreachable:
            records.append(BoundRecord("node", (j,), None, None, measured, None, "skipped_unreachable"))
            continue
        b = dc.bound(d, x0_norm)
        ok, status = _status(measured, b, solver_slack)
        records.append(BoundRecord("node", (j,), d, b, measured, ok, status))
    for k, shell in enumerate(level_sets(g, i_star)):
        measured = discrete_l2(traj, shell)
        b = dc.bound(k, x0_norm)
        ok, status = _status(measured, b, solver_slack)
        records.append(BoundRecord("shell", tuple(shell), k, b, measured, ok, status))
    dc.records.extend(records)
    return records


def lemma1_check(dc: DecayCertificate, traj: TrajectoryBundle, x0_norm: float | None = None,
                 i_star: int | None = None, solver_slack: float = 0.0) -> BoundRecord:
    """Whole-trajectory ``||x||_L2 <= C_init |x0[i*]|``."""
    if i_star is None:
        nz = [j for j in range(1, traj.node_count + 1) if np.any(traj.node_states(j)[0] != 0.0)]
        if len(nz) != 1:
            raise PreconditionError("initial state must be supported on exactly one node")
        i_star = nz[0]
    norm0 = _perturbation_norm(traj, i_star)
    if x0_norm is None:
        x0_norm = norm0
    measured = discrete_l2(traj, range(1, traj.node_count + 1))
    b = dc.c_init * x0_norm
    ok, status = _status(measured, b, solver_slack)
    return BoundRecord("all", tuple(range(1, traj.node_count + 1)), 0, b, measured, ok, status)


def feedback_rollout(p: VehicleDragParams, x0, horizon: float, dt: float = 0.01):
    """Closed loop of every vehicle under the certificate feedback.

    Returns times, states ``(K, n)`` and controls ``(K, s)``.
    """
    x = np.asarray(x0, dtype=float).copy()
    steps = int(round(horizon / dt))

    def ctrl(x):
        y, v = x[0::2], x[1::2]
        return -y + p.kappa * v * np.abs(v)

    def f(x):
        v = x[1::2]
        out = np.empty_like(x)
        out[0::2] = v
        out[1::2] = -p.beta * v - p.kappa * v * np.abs(v) + ctrl(x)
        return out

    xs = np.empty((steps + 1, len(x)))
    xs[0] = x
    for k in range(steps):
        k1 = f(x)
        k2 = f(x + 0.5 * dt * k1)
        k3 = f(x + 0.5 * dt * k2)
        k4 = f(x + dt * k3)
        x = x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        xs[k + 1] = x
    us = np.array([ctrl(row) for row in xs])
    return dt * np.arange(steps + 1), xs, us
