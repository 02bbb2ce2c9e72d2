"""Experiment configuration: INI-style ``key = value`` sections plus overrides."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .fracnet import ActivationSpec, FracNetConfig


def _section(name):
    return {"section": name}


@dataclass
class ExperimentConfig:
    # grid / parameters
    m: int = field(default=64, metadata=_section("grid"))
    newton_tol: float = field(default=1e-6, metadata=_section("grid"))
    lower: float = field(default=0.01, metadata=_section("parameters"))
    upper: float = field(default=10.0, metadata=_section("parameters"))
    n_samples: int = field(default=900, metadata=_section("parameters"))
    # POD and network
    k: int = field(default=400, metadata=_section("pod"))
    L: int = field(default=4, metadata=_section("network"))
    hidden_width: int = field(default=15, metadata=_section("network"))
    gamma: float = field(default=0.5, metadata=_section("network"))
    T: float = field(default=1.0, metadata=_section("network"))
    h: float | None = field(default=None, metadata=_section("network"))
    epsilon: float = field(default=0.1, metadata=_section("network"))
    lam: float = field(default=1e-6, metadata=_section("network"))
    input_scaling: str = field(default="box", metadata=_section("network"))
    # training
    iterations: int = field(default=1600, metadata=_section("training"))
    gradient_tolerance: float = field(default=1e-8, metadata=_section("training"))
    # sampling
    M: int = field(default=20000, metadata=_section("mcmc"))
    burn_in: int = field(default=10000, metadata=_section("mcmc"))
    kappa: float = field(default=1e-2, metadata=_section("mcmc"))
    xi_true: tuple = field(default=(1.0, 0.1), metadata=_section("mcmc"))
    update_period: int = field(default=100, metadata=_section("mcmc"))
    scale: float | None = field(default=None, metadata=_section("mcmc"))
    jitter: float = field(default=1e-8, metadata=_section("mcmc"))
    # seeds
    seed_snapshots: int = field(default=0, metadata=_section("seeds"))
    seed_init: int = field(default=0, metadata=_section("seeds"))
    seed_noise: int = field(default=0, metadata=_section("seeds"))
    seed_chain: int = field(default=0, metadata=_section("seeds"))
    # paths
    workdir: str = field(default="run", metadata=_section("paths"))

    def __post_init__(self):
        self.xi_true = tuple(float(v) for v in self.xi_true)
        self.validate()

    @property
    def step_size(self) -> float:
        """``h`` if set explicitly, else ``T / (L - 1)``."""
        return self.h if self.h is not None else self.T / (self.L - 1)

    @property
    def n_x(self) -> int:
        return self.m * self.m

    @property
    def effective_k(self) -> int:
        return min(self.k, self.n_samples, self.n_x)

    def validate(self) -> None:
        if not 0 < self.gamma < 1:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.m < 2:
            raise ValueError("grid needs m >= 2")
        if not self.lower < self.upper:
            raise ValueError("parameter box needs lower < upper")
        if self.k < 1 or self.n_samples < 1:
            raise ValueError("k and n_samples must be >= 1")
        if self.M <= self.burn_in:
            raise ValueError(f"M={self.M} must exceed burn_in={self.burn_in}")
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")
        if len(self.xi_true) != 2 or not all(self.lower <= v <= self.upper for v in self.xi_true):
            raise ValueError(f"xi_true {self.xi_true} must be a point in the parameter box")
        if self.input_scaling not in ("box", "none"):
            raise ValueError("input_scaling must be 'box' or 'none'")
        if self.update_period < 1:
            raise ValueError("update_period must be >= 1")
        self.network_config()

    def network_config(self) -> FracNetConfig:
        return FracNetConfig(L=self.L, input_dim=2, hidden_width=self.hidden_width,
                             output_dim=self.effective_k, gamma=self.gamma, h=self.step_size,
                             lam=self.lam, activation=ActivationSpec(self.epsilon))

    @property
    def bounds(self) -> np.ndarray:
        return np.array([[self.lower, self.upper]] * 2)

    def path(self, name: str) -> Path:
        return Path(self.workdir) / name

    # serialization

    def to_ini(self) -> str:
        cp = _parser()
        for f in fields(self):
            sec = f.metadata["section"]
            if not cp.has_section(sec):
                cp.add_section(sec)
            cp.set(sec, f.name, _format(getattr(self, f.name)))
        from io import StringIO
        buf = StringIO()
        cp.write(buf)
        return buf.getvalue()

    def save(self, path) -> None:
        Path(path).write_text(self.to_ini())

    @classmethod
    def from_ini(cls, text: str, base: "ExperimentConfig | None" = None) -> "ExperimentConfig":
        cp = _parser()
        cp.read_string(text)
        known = {f.name: f for f in fields(cls)}
        values = {}
        for sec in cp.sections():
            for key, raw in cp.items(sec):
                if key not in known:
                    raise ValueError(f"unknown configuration key [{sec}] {key}")
                if known[key].metadata["section"] != sec:
                    raise ValueError(f"key {key} belongs in section [{known[key].metadata['section']}]")
                values[key] = raw
        return (base or cls()).with_overrides(values)

    @classmethod
    def load(cls, path, base=None) -> "ExperimentConfig":
        return cls.from_ini(Path(path).read_text(), base)

    def with_overrides(self, values: dict) -> "ExperimentConfig":
        known = {f.name: f for f in fields(self)}
        updates = {}
        for key, raw in values.items():
            if key not in known:
                raise ValueError(f"unknown configuration key {key!r}")
            updates[key] = _parse(getattr(ExperimentConfig(), key) if key not in _OPTIONAL_FLOAT else None,
                                  raw, key)
        return dataclasses.replace(self, **updates)


_OPTIONAL_FLOAT = {"h", "scale"}


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    cp.optionxform = str  # keys are case-sensitive (m vs M)
    return cp


def _format(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, tuple):
        return ", ".join(repr(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(template, raw, key):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    if key in _OPTIONAL_FLOAT:
        return None if raw.lower() in ("auto", "none", "") else float(raw)
    if isinstance(template, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(template, int):
        return int(raw)
    if isinstance(template, float):
        return float(raw)
    if isinstance(template, tuple):
        return tuple(float(v) for v in raw.split(","))
    return raw


PRESETS = {
    "standard": {},
    "desk": {"m": 32, "n_samples": 300, "k": 100, "M": 5000, "burn_in": 2500},
}


def preset(name: str, **overrides) -> ExperimentConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    values = dict(PRESETS[name])
    values.update(overrides)
    return ExperimentConfig(**values)
