"""Vehicle-chain experiment driver, decay fit and parameter sweeps."""

from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..bounds import BoundRecord, DecayCertificate, check_decay_bound, lemma1_check, theorem_constants, vehicle_certificate
from ..cost import QuadraticCost, build_chain_cost, spectral_bounds
from ..errors import ConfigError, SensDecayError, ValidationError
from ..model import TrajectoryBundle, VehicleDragParams, VehicleFleet, discrete_l2
from ..solver import OcpProblem, SolveReport, solve_mpc
from ..topology import InterconnectionGraph, build_graph, graph_distance
from . import io
from .config import ExperimentConfig

logger = logging.getLogger(__name__)

NORM_FLOOR = 1e-14
STATE_NORM_NOTE = "termination uses the Euclidean norm of the full aggregated state"


class FitUnavailable(ValidationError):
    """Too few usable points for a decay fit."""


class ExperimentError(SensDecayError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class DecayFit:
    distances: np.ndarray
    log_norms: np.ndarray
    slope: float
    intercept: float
    r_squared: float

    @property
    def empirical_rho(self) -> float:
        return math.exp(self.slope)


def fit_decay(norms, distances, floor: float = NORM_FLOOR) -> DecayFit:
    """Least squares of ``log(norm)`` on distance; every node is its own data point."""
    norms = np.asarray(norms, dtype=float)
    distances = np.asarray(distances, dtype=float)
    if norms.shape != distances.shape:
        raise ValidationError("norms and distances must have the same length")
    keep = np.isfinite(norms) & np.isfinite(distances) & (norms > floor)
    d, y = distances[keep], np.log(norms[keep])
    if d.size < 3:
        raise FitUnavailable(f"need at least 3 norms above {floor:g}, got {d.size}")
    if np.ptp(d) == 0:
        raise FitUnavailable("all usable points share one distance")
    a = np.column_stack([d, np.ones_like(d)])
    (slope, intercept), *_ = np.linalg.lstsq(a, y, rcond=None)
    resid = y - (slope * d + intercept)
    ss_res = float(resid @ resid)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    return DecayFit(d, y, float(slope), float(intercept), r2)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    cost: QuadraticCost
    graph: InterconnectionGraph
    certificate: DecayCertificate
    report: SolveReport
    node_norms: np.ndarray
    node_dists: list
    records: list[BoundRecord]
    whole_trajectory: BoundRecord
    fit: DecayFit | None
    summary: dict = field(default_factory=dict)

    @property
    def trajectory(self) -> TrajectoryBundle:
        return self.report.trajectory

    @property
    def all_satisfied(self) -> bool:
        return self.whole_trajectory.satisfied is not False and all(r.satisfied is not False for r in self.records)


def build_problem(cfg: ExperimentConfig, cost: QuadraticCost | None = None) -> OcpProblem:
    m, p, sv = cfg.model, cfg.perturbation, cfg.solver
    cost = cost or build_chain_cost(m.s, m.gamma, m.delta)
    x0 = np.zeros(2 * m.s)
    x0[2 * (p.i_star - 1):2 * p.i_star] = p.x0
    return OcpProblem(VehicleFleet(m.s, VehicleDragParams(m.beta, m.kappa)), cost, x0, step=sv.h,
                      prediction_horizon=sv.horizon, terminal_weight=sv.terminal_weight,
                      grad_tol=sv.grad_tol, max_inner=sv.max_inner)


def certify(cfg: ExperimentConfig, cost: QuadraticCost | None = None) -> DecayCertificate:
    m, c = cfg.model, cfg.certificate
    cost = cost or build_chain_cost(m.s, m.gamma, m.delta)
    cert = vehicle_certificate(VehicleDragParams(m.beta, m.kappa), omega_radius=c.omega_radius,
                               sample_horizon=c.sample_horizon, sample_step=c.sample_step,
                               sigma_safety=c.sigma_safety, c_safety=c.c_safety)
    return theorem_constants(cert, spectral_bounds(cost))


def evaluate(cfg: ExperimentConfig, cost, graph, dc: DecayCertificate, traj: TrajectoryBundle):
    """Bound checks, per-node norms and decay fit for a stored or fresh trajectory."""
    i_star = cfg.perturbation.i_star
    x0_norm = float(np.linalg.norm(traj.node_states(i_star)[0]))
    records = check_decay_bound(dc, graph, traj, i_star, x0_norm)
    lem1 = lemma1_check(dc, traj, x0_norm, i_star=i_star)
    norms = np.array([discrete_l2(traj, [j]) for j in graph.nodes])
    dists = [graph_distance(graph, i_star, [j]) for j in graph.nodes]
    usable = [(n, d) for n, d in zip(norms, dists) if isinstance(d, int)]
    try:
        fit = fit_decay([n for n, _ in usable], [d for _, d in usable])
    except FitUnavailable as exc:
        logger.warning("decay fit unavailable: %s", exc)
        fit = None
    return records, lem1, norms, dists, fit


def _summary(dc: DecayCertificate, report: SolveReport, fit: DecayFit | None, lem1: BoundRecord, records) -> dict:
    out = dc.summary()
    out.update({
        "N": report.mpc_steps,
        "slope": fit.slope if fit else None,
        "r2": fit.r_squared if fit else None,
        "empirical_rho": fit.empirical_rho if fit else None,
    })
    out["converged"] = report.converged
    out["final_state_norm"] = report.final_state_norm
    out["objective_estimate"] = report.objective_estimate
    out["whole_trajectory_measured"] = lem1.measured
    out["whole_trajectory_bound"] = lem1.bound
    out["max_bound_ratio"] = max((r.ratio for r in records if r.ratio is not None), default=None)
    out["all_satisfied"] = lem1.satisfied is not False and all(r.satisfied is not False for r in records)
    out["notes"] = [STATE_NORM_NOTE, "trajectory is a receding-horizon surrogate for the optimal one"] + report.notes
    return out


def write_outputs(out_dir: Path, result: ExperimentResult) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    node_rows = [r for r in result.records if r.kind == "node"]
    io.write_node_csv(out_dir / "nodes.csv",
                      [(r.target[0], r.dist, r.measured, r.bound, r.satisfied) for r in node_rows])
    io.write_node_csv(out_dir / "shells.csv",
                      [(r.dist, r.dist, r.measured, r.bound, r.satisfied) for r in result.records if r.kind == "shell"])
    io.write_trajectory_csv(out_dir / "trajectory.csv", result.trajectory, result.report.per_step_objective)
    io.save_trajectory(out_dir / "trajectory.npz", result.trajectory)
    io.write_summary(out_dir / "summary.json", result.summary)
    marker = out_dir / "FAILED"
    if marker.exists():
        marker.unlink()


def _fail(out_dir: Path | None, stage: str, exc: Exception, partial: dict) -> ExperimentError:
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "FAILED").write_text(f"{stage}: {type(exc).__name__}: {exc}\n")
        if partial:
            io.write_summary(out_dir / "partial_summary.json", partial)
    return ExperimentError(stage, exc)


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> ExperimentResult:
    """Build the chain, certify, solve by MPC, check every bound, fit the decay, and write outputs.

    Errors are re-raised as :class:`ExperimentError` naming the failed stage;
    a ``FAILED`` marker and whatever was computed so far are written to
    ``out_dir``.
    """
    out_dir = Path(out_dir) if out_dir is not None else None
    partial: dict = {}
    stage = "config"
    try:
        cfg.validate()
        stage = "cost"
        cost = build_chain_cost(cfg.model.s, cfg.model.gamma, cfg.model.delta)
        graph = build_graph(cost)
        stage = "certificate"
        dc = certify(cfg, cost)
        partial.update(dc.summary())
        stage = "solve"
        report = solve_mpc(build_problem(cfg, cost), eps=cfg.solver.eps, max_steps=cfg.solver.max_steps)
        partial["N"] = report.mpc_steps
        stage = "bounds"
        records, lem1, norms, dists, fit = evaluate(cfg, cost, graph, dc, report.trajectory)
        result = ExperimentResult(cfg, cost, graph, dc, report, norms, dists, records, lem1, fit)
        result.summary = _summary(dc, report, fit, lem1, records)
        stage = "output"
        if out_dir is not None:
            write_outputs(out_dir, result)
        return result
    except (SensDecayError, ArithmeticError, ValueError, OSError) as exc:
        raise _fail(out_dir, stage, exc, partial) from exc


def resolve_i_star(token, s: int) -> int:
    if isinstance(token, str):
        key = token.strip().lower()
        if key == "middle":
            return (s + 1) // 2
        if key in ("first", "start"):
            return 1
        if key in ("last", "end"):
            return s
        try:
            token = int(key)
        except ValueError:
            raise ConfigError(f"unknown i_star token {token!r}") from None
    i = int(token)
    if not 1 <= i <= s:
        raise ConfigError(f"i_star={i} outside 1..{s}")
    return i


SWEEP_COLUMNS = ("s", "i_star", "empirical_rho", "theoretical_rho", "slope", "r2", "N", "wall_time", "status")


def _sweep_cell(args):
    cfg, s, token = args
    t0 = time.perf_counter()
    try:
        i_star = resolve_i_star(token, s)
        cell = cfg.with_overrides(**{"model.s": s, "perturbation.i_star": i_star})
        res = run_experiment(cell)
        fit = res.fit
        return (s, i_star, fit.empirical_rho if fit else None, res.certificate.rho, fit.slope if fit else None,
                fit.r_squared if fit else None, res.report.mpc_steps, time.perf_counter() - t0,
                "ok" if res.all_satisfied else "bound_violated")
    except Exception as exc:  # recorded per cell, sweep continues
        logger.error("sweep cell s=%s i*=%s failed: %s", s, token, exc)
        return (s, token if isinstance(token, int) else None, None, None, None, None, None,
                time.perf_counter() - t0, f"error: {exc}")


def sweep(cfg: ExperimentConfig, out_dir: str | Path | None = None, workers: int | None = None) -> list[dict]:
    """One experiment per ``(s, i*)`` combination; failures are recorded per cell."""
    cfg.validate()
    cells = [(cfg, int(s), tok) for s in cfg.sweep.s_values for tok in cfg.sweep.i_star_values]
    workers = workers or cfg.sweep.workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_cell, cells))
    else:
        rows = [_sweep_cell(c) for c in cells]
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "sweep.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SWEEP_COLUMNS)
            for row in rows:
                w.writerow([io._fmt(v) if not isinstance(v, str) else v for v in row])
    return [dict(zip(SWEEP_COLUMNS, row)) for row in rows]
