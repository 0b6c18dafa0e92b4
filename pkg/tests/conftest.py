import numpy as np
import pytest

from sensdecay.cost import build_chain_cost
from sensdecay.model import VehicleDragParams, VehicleFleet
from sensdecay.solver import OcpProblem


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def chain_problem(s, i_star=None, x_pert=(1.0, 1.0), horizon=40, h=0.05, gamma=0.1, delta=0.1, beta=5.0,
                  kappa=10.0, **kw):
    cost = build_chain_cost(s, gamma, delta)
    x0 = np.zeros(2 * s)
    if i_star is not None:
        x0[2 * (i_star - 1):2 * i_star] = x_pert
    return OcpProblem(VehicleFleet(s, VehicleDragParams(beta, kappa)), cost, x0, step=h,
                      prediction_horizon=horizon, **kw)


# criterion number -> (title, passed, detail); filled by the acceptance tests
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {title}: {detail}")
