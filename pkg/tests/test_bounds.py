import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from sensdecay.bounds import (ControllabilityCertificate, check_decay_bound, feedback_matrix,
                              feedback_rollout, lemma1_check, theorem_constants, vehicle_certificate)
from sensdecay.cost import SpectralBounds, build_chain_cost, spectral_bounds
from sensdecay.errors import CertificateUnavailableError, PreconditionError, ValidationError
from sensdecay.model import TrajectoryBundle, VehicleDragParams
from sensdecay.topology import chain_graph


def test_sigma_for_default_drag():
    cert = vehicle_certificate(VehicleDragParams(5.0, 10.0))
    assert cert.sigma_rate == pytest.approx(0.95 * (5.0 - math.sqrt(21.0)) / 2.0, rel=1e-12)


def test_sigma_for_critically_damped_drag():
    # beta = 2: double eigenvalue -1
    cert = vehicle_certificate(VehicleDragParams(2.0, 10.0))
    assert cert.sigma_rate == pytest.approx(0.95, rel=1e-9)
    assert cert.c_overshoot >= 1.0


def test_overshoot_dominates_dense_grid():
    p = VehicleDragParams(5.0, 10.0)
    cert = vehicle_certificate(p)
    a = feedback_matrix(p.beta)
    t = np.linspace(0.0, 80.0, 2001)
    env = max(np.linalg.norm(expm(a * ti), 2) * math.exp(cert.sigma_rate * ti) for ti in t)
    assert cert.c_state >= env


def test_no_certificate_without_viscous_drag():
    with pytest.raises(CertificateUnavailableError):
        vehicle_certificate(VehicleDragParams(0.0, 10.0))


def test_certificate_invariants():
    with pytest.raises(ValidationError):
        ControllabilityCertificate(0.5, 1.0, "w", 1.0)
    with pytest.raises(ValidationError):
        ControllabilityCertificate(2.0, 0.0, "w", 1.0)


def test_theorem_constant_arithmetic():
    # C_init = 1 * sqrt(2 / 2) = 1, C_prop = 2 * 1 / 1 = 2
    cert = ControllabilityCertificate(1.0, 1.0, "test", 1.0)
    sb = SpectralBounds(mu=1.0, m_q=1.0, m_r=1.0)
    dc = theorem_constants(cert, sb)
    assert dc.c_init == pytest.approx(1.0)
    assert dc.c_prop == pytest.approx(2.0)
    assert dc.s_const == pytest.approx(4.0)
    assert dc.q_exponent == 16
    assert dc.rho == pytest.approx(2.0 ** (-1.0 / 16.0))
    assert dc.rho == pytest.approx(0.95760, abs=1e-5)


def test_default_constants_are_consistent():
    dc = theorem_constants(vehicle_certificate(VehicleDragParams()), spectral_bounds(build_chain_cost(25, 0.1, 0.1)))
    s = dc.summary()
    assert s["S"] == pytest.approx(2 * max(s["C_init"], s["C_prop"]))
    assert s["q"] == math.ceil(s["S"]) ** 2
    assert 0.0 < s["rho"] < 1.0
    assert s["mu"] == pytest.approx(0.1)


@settings(max_examples=50, deadline=None)
@given(st.floats(1.0, 50.0), st.floats(0.01, 5.0), st.floats(0.01, 1.0), st.floats(1.0, 10.0), st.floats(0.01, 5.0))
def test_constants_properties(c, sigma, mu, mq_factor, mr):
    dc = theorem_constants(ControllabilityCertificate(c, sigma, "h", 1.0), SpectralBounds(mu, mu * mq_factor, mr))
    assert dc.s_const >= 2.0 * dc.c_init and dc.s_const >= 2.0 * dc.c_prop
    assert dc.q_exponent >= dc.s_const ** 2
    assert 0.0 < dc.rho < 1.0
    # bound is nonincreasing in distance
    assert dc.bound(3, 1.0) <= dc.bound(2, 1.0)


def one_node_trajectory(s, i_star, x=(1.0, 1.0), samples=5):
    st_ = np.zeros((samples, 2 * s))
    st_[0, 2 * (i_star - 1):2 * i_star] = x
    return TrajectoryBundle(0.1, st_, np.zeros((samples - 1, s)), (2,) * s, (1,) * s)


def test_precondition_refusal():
    dc = theorem_constants(ControllabilityCertificate(1.0, 1.0, "t", 1.0), SpectralBounds(1.0, 1.0, 1.0))
    traj = one_node_trajectory(4, 2)
    traj.states[0, 6] = 1e-3
    with pytest.raises(PreconditionError):
        check_decay_bound(dc, chain_graph(4), traj, 2)
    with pytest.raises(PreconditionError):
        check_decay_bound(dc, chain_graph(4), one_node_trajectory(4, 2, x=(0.0, 0.0)), 2)
    with pytest.raises(PreconditionError):
        lemma1_check(dc, traj)


def test_bound_records_and_statuses():
    dc = theorem_constants(ControllabilityCertificate(1.0, 1.0, "t", 1.0), SpectralBounds(1.0, 1.0, 1.0))
    traj = one_node_trajectory(4, 1)
    traj.states[1:, 6] = 100.0  # node 4 far above its bound
    recs = check_decay_bound(dc, chain_graph(4), traj, 1, solver_slack=1e-9)
    nodes = {r.target: r for r in recs if r.kind == "node"}
    assert nodes[(1,)].status == "satisfied"
    assert nodes[(4,)].status == "violated" and nodes[(4,)].dist == 3
    assert nodes[(4,)].bound == pytest.approx(4.0 * dc.rho ** 3 * math.sqrt(2.0))
    shells = [r for r in recs if r.kind == "shell"]
    assert [r.target for r in shells] == [(1,), (2,), (3,), (4,)]


def test_status_within_solver_tolerance():
    dc = theorem_constants(ControllabilityCertificate(1.0, 1.0, "t", 1.0), SpectralBounds(1.0, 1.0, 1.0))
    traj = one_node_trajectory(2, 1, samples=2)
    b = dc.bound(1, math.sqrt(2.0))
    traj.states[1, 2] = (b + 1e-10) / math.sqrt(0.1)
    rec = [r for r in check_decay_bound(dc, chain_graph(2), traj, 1, solver_slack=1e-8) if r.target == (2,)][0]
    assert rec.status == "violated_within_solver_tolerance"


def test_certificate_holds_on_random_states(rng):
    p = VehicleDragParams()
    cert = vehicle_certificate(p)
    for _ in range(20):
        x0 = rng.uniform(-cert.omega_radius, cert.omega_radius, size=2)
        t, xs, us = feedback_rollout(p, x0, 30.0)
        env = cert.c_overshoot * np.exp(-cert.sigma_rate * t) * np.linalg.norm(x0)
        assert np.all(np.linalg.norm(xs, axis=1) <= env)
        assert np.all(np.abs(us[:, 0]) <= env)
