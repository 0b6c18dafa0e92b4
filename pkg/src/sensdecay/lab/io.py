"""CSV/JSON/NPZ writers and readers for experiment artifacts.

Floats are written with ``repr`` so that reading them back is bit-exact.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from ..model import TrajectoryBundle

NODE_COLUMNS = ("node", "dist", "l2_norm", "bound_value", "satisfied")
TRAJECTORY_COLUMNS = ("step", "time", "state_norm", "control_norm", "objective")
SUMMARY_KEYS = ("C", "sigma", "mu", "M_Q", "M_R", "C_init", "C_prop", "S", "q", "rho",
                "N", "slope", "r2", "empirical_rho")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_node_csv(path, rows) -> None:
    """``rows``: iterables of ``(node, dist, l2_norm, bound_value, satisfied)``."""
    _write_csv(Path(path), NODE_COLUMNS, rows)


def write_trajectory_csv(path, traj: TrajectoryBundle, per_step_objective) -> None:
    rows = []
    snorm = np.linalg.norm(traj.states, axis=1)
    cnorm = np.linalg.norm(traj.controls, axis=1) if traj.steps else np.zeros(0)
    for k in range(traj.sample_count):
        has_u = k < traj.steps
        rows.append((k, k * traj.time_step, snorm[k], cnorm[k] if has_u else None,
                     per_step_objective[k] if has_u and k < len(per_step_objective) else None))
    _write_csv(Path(path), TRAJECTORY_COLUMNS, rows)


def _parse(v: str):
    if v == "":
        return None
    if v in ("true", "false"):
        return v == "true"
    try:
        return int(v)
    except ValueError:
        return float(v)


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: _parse(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def _json_safe(v):
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    return v


def write_summary(path, summary: dict) -> None:
    Path(path).write_text(json.dumps(_json_safe(summary), indent=2) + "\n")


def read_summary(path) -> dict:
    return json.loads(Path(path).read_text())


def save_trajectory(path, traj: TrajectoryBundle) -> None:
    np.savez(path, states=traj.states, controls=traj.controls, time_step=traj.time_step,
             state_dims=np.array(traj.state_dims), control_dims=np.array(traj.control_dims))


def load_trajectory(path) -> TrajectoryBundle:
    with np.load(path) as z:
        return TrajectoryBundle(float(z["time_step"]), z["states"], z["controls"],
                                tuple(int(d) for d in z["state_dims"]), tuple(int(d) for d in z["control_dims"]))
