"""Experiment configuration: YAML file with nested sections, defaults reproduce the vehicle-chain run."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from ..errors import ConfigError


@dataclass
class ModelSection:
    s: int = 25
    beta: float = 5.0
    kappa: float = 10.0
    gamma: float = 0.1
    delta: float = 0.1


@dataclass
class PerturbationSection:
    i_star: int = 12
    x0: list[float] = field(default_factory=lambda: [1.0, 1.0])


@dataclass
class SolverSection:
    h: float = 0.05
    horizon: int = 40
    eps: float = 1e-4
    terminal_weight: float = 10.0
    max_steps: int = 2000
    grad_tol: float = 1e-12
    max_inner: int = 1000


@dataclass
class CertificateSection:
    omega_radius: float = 2.0
    sigma_safety: float = 0.95
    c_safety: float = 1.05
    sample_horizon: float = 60.0
    sample_step: float = 0.01


@dataclass
class SweepSection:
    s_values: list[int] = field(default_factory=lambda: [25])
    i_star_values: list[Any] = field(default_factory=lambda: [1, "middle", "last"])
    workers: int = 1


@dataclass
class OutputSection:
    out_dir: str = "results"


@dataclass
class ExperimentConfig:
    model: ModelSection = field(default_factory=ModelSection)
    perturbation: PerturbationSection = field(default_factory=PerturbationSection)
    solver: SolverSection = field(default_factory=SolverSection)
    certificate: CertificateSection = field(default_factory=CertificateSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    output: OutputSection = field(default_factory=OutputSection)

    def validate(self) -> "ExperimentConfig":
        m, p, sv = self.model, self.perturbation, self.solver
        if m.s < 2:
            raise ConfigError("model.s must be at least 2 for a vehicle chain")
        if not 1 <= p.i_star <= m.s:
            raise ConfigError(f"perturbation.i_star={p.i_star} outside 1..{m.s}")
        if len(p.x0) != 2:
            raise ConfigError("perturbation.x0 must be a 2-vector (position, velocity)")
        if not any(v != 0 for v in p.x0):
            raise ConfigError("perturbation.x0 must be nonzero")
        if m.beta < 0 or m.kappa < 0 or m.gamma <= 0 or m.delta <= 0:
            raise ConfigError("need beta, kappa >= 0 and gamma, delta > 0")
        if not sv.eps > 0 or not sv.h > 0 or sv.horizon < 1 or sv.max_steps < 1:
            raise ConfigError("solver.eps, solver.h must be positive; horizon, max_steps >= 1")
        for s in self.sweep.s_values:
            if int(s) < 2:
                raise ConfigError(f"sweep value s={s} must be >= 2")
        if not self.sweep.s_values or not self.sweep.i_star_values:
            raise ConfigError("sweep lists must be nonempty")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def with_overrides(self, **flat) -> "ExperimentConfig":
        """Apply ``section.key`` or bare-key overrides; ``None`` values are ignored."""
        cfg = from_dict(self.to_dict())
        for key, value in flat.items():
            if value is None:
                continue
            section, name = _locate(cfg, key)
            setattr(section, name, value)
        return cfg


_ALIASES = {
    "s": "model.s", "i_star": "perturbation.i_star", "h": "solver.h", "eps": "solver.eps",
    "horizon": "solver.horizon", "out_dir": "output.out_dir",
}


def _locate(cfg: ExperimentConfig, key: str):
    key = key.replace("-", "_")
    key = _ALIASES.get(key, key)
    if "." not in key:
        raise ConfigError(f"unknown config key {key!r}")
    sec, name = key.split(".", 1)
    section = getattr(cfg, sec, None)
    if section is None or not hasattr(section, name):
        raise ConfigError(f"unknown config key {key!r}")
    return section, name


_SECTIONS = {
    "model": ModelSection, "perturbation": PerturbationSection, "solver": SolverSection,
    "certificate": CertificateSection, "sweep": SweepSection, "output": OutputSection,
}


def from_dict(data: dict | None) -> ExperimentConfig:
    data = data or {}
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    kwargs = {}
    for name, cls in _SECTIONS.items():
        values = data.get(name) or {}
        names = {f.name for f in dataclasses.fields(cls)}
        bad = set(values) - names
        if bad:
            raise ConfigError(f"unknown keys in [{name}]: {sorted(bad)}")
        kwargs[name] = cls(**values)
    return ExperimentConfig(**kwargs)


def load_config(path: str | Path | None = None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    return from_dict(data)


def dump_config(cfg: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
