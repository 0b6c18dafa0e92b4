import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sensdecay.errors import ConfigError
from sensdecay.lab import ExperimentConfig, fit_decay, load_config, run_experiment
from sensdecay.lab import io
from sensdecay.lab.cli import main
from sensdecay.lab.config import dump_config, from_dict
from sensdecay.lab.experiment import ExperimentError, FitUnavailable, resolve_i_star, sweep
from sensdecay.model import TrajectoryBundle

SMALL = ["--s", "4", "--i-star", "2", "--eps", "1e-3"]


def test_fit_recovers_synthetic_rate():
    d = np.arange(10)
    fit = fit_decay(3.0 * 0.4 ** d, d)
    assert fit.empirical_rho == pytest.approx(0.4, rel=1e-12)
    assert fit.r_squared == pytest.approx(1.0)
    assert fit.intercept == pytest.approx(np.log(3.0))


def test_fit_drops_tiny_and_unreachable_points():
    d = np.array([0, 1, 2, 3, 4], dtype=float)
    n = np.array([1.0, 0.5, 0.25, 0.0, np.nan])
    fit = fit_decay(n, d)
    assert fit.distances.tolist() == [0.0, 1.0, 2.0]
    assert fit.empirical_rho == pytest.approx(0.5)


def test_fit_needs_three_points():
    with pytest.raises(FitUnavailable):
        fit_decay([1.0, 0.5], [0, 1])
    with pytest.raises(FitUnavailable):
        fit_decay([1.0, 0.5, 0.2], [1, 1, 1])


@settings(max_examples=50, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(0.1, 10.0), st.integers(3, 30))
def test_fit_exact_geometric(rho, scale, n):
    d = np.arange(n)
    fit = fit_decay(scale * rho ** d, d)
    assert fit.empirical_rho == pytest.approx(rho, rel=1e-9)
    assert 0.0 <= fit.r_squared <= 1.0


def test_default_config_is_the_reference_chain():
    cfg = ExperimentConfig().validate()
    assert (cfg.model.s, cfg.model.beta, cfg.model.kappa, cfg.model.gamma, cfg.model.delta) == (25, 5.0, 10.0, 0.1, 0.1)
    assert (cfg.perturbation.i_star, list(cfg.perturbation.x0)) == (12, [1.0, 1.0])
    assert (cfg.solver.h, cfg.solver.eps, cfg.solver.horizon) == (0.05, 1e-4, 40)


def test_config_round_trip_and_overrides(tmp_path):
    cfg = ExperimentConfig().with_overrides(s=6, i_star=3, **{"model.beta": 2.0})
    dump_config(cfg, tmp_path / "c.yaml")
    back = load_config(tmp_path / "c.yaml")
    assert back.to_dict() == cfg.to_dict()
    assert back.model.s == 6 and back.model.beta == 2.0


@pytest.mark.parametrize("data", [
    {"model": {"s": 1}},
    {"model": {"s": 5}, "perturbation": {"i_star": 9}},
    {"perturbation": {"x0": [0.0, 0.0]}},
    {"solver": {"eps": 0.0}},
])
def test_config_validation(data):
    with pytest.raises(ConfigError):
        from_dict(data).validate()


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError):
        from_dict({"modle": {}})
    with pytest.raises(ConfigError):
        from_dict({"model": {"size": 3}})
    with pytest.raises(ConfigError):
        ExperimentConfig().with_overrides(**{"model.size": 3})


def test_resolve_i_star_tokens():
    assert [resolve_i_star(t, 25) for t in ("first", "middle", "last", 7)] == [1, 13, 25, 7]
    with pytest.raises(ConfigError):
        resolve_i_star("centre", 5)


def test_csv_round_trip_is_bit_exact(tmp_path):
    rows = [(1, 0, 0.1 + 0.2, 1e-300, True), (2, 1, np.float64(1 / 3), None, False)]
    io.write_node_csv(tmp_path / "n.csv", rows)
    back = io.read_csv(tmp_path / "n.csv")
    assert back[0]["l2_norm"] == 0.1 + 0.2 and back[1]["l2_norm"] == 1 / 3
    assert back[0]["satisfied"] is True and back[1]["bound_value"] is None


def test_trajectory_npz_round_trip(tmp_path, rng):
    traj = TrajectoryBundle(0.05, rng.normal(size=(4, 6)), rng.normal(size=(3, 3)), (2, 2, 2), (1, 1, 1))
    io.save_trajectory(tmp_path / "t.npz", traj)
    back = io.load_trajectory(tmp_path / "t.npz")
    assert np.array_equal(back.states, traj.states) and back.state_dims == (2, 2, 2)


def test_summary_handles_nonfinite(tmp_path):
    io.write_summary(tmp_path / "s.json", {"a": float("inf"), "b": np.int64(3), "c": [np.float64(0.5)]})
    assert io.read_summary(tmp_path / "s.json") == {"a": "inf", "b": 3, "c": [0.5]}


def test_run_experiment_small_chain(tmp_path):
    cfg = ExperimentConfig().with_overrides(s=5, i_star=3, eps=1e-3)
    res = run_experiment(cfg, tmp_path)
    assert res.all_satisfied and res.report.converged
    for name in ("nodes.csv", "shells.csv", "trajectory.csv", "trajectory.npz", "summary.json"):
        assert (tmp_path / name).exists()
    nodes = io.read_csv(tmp_path / "nodes.csv")
    assert [r["dist"] for r in nodes] == [2, 1, 0, 1, 2]
    summary = io.read_summary(tmp_path / "summary.json")
    assert summary["N"] == res.report.mpc_steps and summary["all_satisfied"] is True


def test_failed_stage_leaves_marker(tmp_path):
    cfg = ExperimentConfig().with_overrides(s=4, i_star=2, **{"model.beta": 0.0})
    with pytest.raises(ExperimentError) as info:
        run_experiment(cfg, tmp_path)
    assert info.value.stage == "certificate"
    assert (tmp_path / "FAILED").read_text().startswith("certificate")


def test_cli_run_and_check(tmp_path, capsys):
    assert main(["run", *SMALL, "--out-dir", str(tmp_path)]) == 0
    assert "N=" in capsys.readouterr().out
    assert main(["check", *SMALL, str(tmp_path / "trajectory.npz")]) == 0


def test_cli_check_flags_violation(tmp_path):
    traj = TrajectoryBundle(0.05, np.zeros((3, 8)), np.zeros((2, 4)), (2,) * 4, (1,) * 4)
    traj.states[0, 2:4] = 1.0
    traj.states[1:, 6] = 1e6
    io.save_trajectory(tmp_path / "bad.npz", traj)
    assert main(["check", *SMALL, str(tmp_path / "bad.npz")]) == 2


def test_cli_errors_exit_one(tmp_path, capsys):
    assert main(["run", "--s", "1", "--out-dir", str(tmp_path)]) == 1
    assert main(["run", "--config", str(tmp_path / "missing.yaml")]) == 1
    assert main(["certify", "--set", "model.beta=0", "--out-dir", str(tmp_path)]) == 1
    assert "error" in capsys.readouterr().err


def test_cli_certify_writes_constants(tmp_path):
    assert main(["certify", "--out-dir", str(tmp_path)]) == 0
    data = json.loads((tmp_path / "certificate.json").read_text())
    assert set(io.SUMMARY_KEYS[:10]) <= set(data)


def test_sweep_records_each_cell(tmp_path):
    cfg = ExperimentConfig().with_overrides(eps=1e-3, **{"sweep.s_values": [3, 4], "sweep.i_star_values": ["first", 9]})
    rows = sweep(cfg, tmp_path)
    assert len(rows) == 4
    assert [r["status"] for r in rows if r["i_star"] == 1] == ["ok", "ok"]
    assert all(r["status"].startswith("error") for r in rows if r["i_star"] != 1)
    assert (tmp_path / "sweep.csv").read_text().count("\n") == 5


def test_run_is_deterministic(tmp_path):
    for d in ("a", "b"):
        assert main(["run", *SMALL, "--out-dir", str(tmp_path / d)]) == 0
    for name in ("nodes.csv", "shells.csv", "trajectory.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
