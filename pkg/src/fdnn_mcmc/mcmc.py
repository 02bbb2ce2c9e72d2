"""Adaptive Metropolis sampling of the parameter posterior.

The posterior is the uniform prior on a box times the Gaussian likelihood
``exp(-||d - Φ(ξ)||² / (2κ²))``. ``Φ`` is either the full Newton-GMRES solve
or the surrogate ``V · net(ξ)``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import fracnet, pde
from .pod import PodBasis

logger = logging.getLogger(__name__)

NEG_INF = -math.inf


class ForwardFailure(RuntimeError):
    pass


class FullForwardMap:
    """Parameter-to-solution map backed by the high-fidelity solver."""

    identity = "full"

    def __init__(self, grid: pde.GridConfig, newton_tol: float = 1e-6):
        self.grid = grid
        self.newton_tol = newton_tol

    def __call__(self, xi) -> np.ndarray:
        try:
            return pde.solve_forward(xi, self.grid, self.newton_tol).values
        except pde.SolverError as exc:
            raise ForwardFailure(str(exc)) from exc


class SurrogateForwardMap:
    """``ξ ↦ V · net((ξ - shift) / scale)``; exposes the reduced coefficients directly."""

    def __init__(self, theta: fracnet.Theta, cfg: fracnet.FracNetConfig, basis: PodBasis,
                 input_shift=0.0, input_scale=1.0, identity: str = "surrogate"):
        if cfg.output_dim != basis.k:
            raise ValueError(f"network emits {cfg.output_dim} coefficients but basis has rank {basis.k}")
        self.theta, self.cfg, self.basis = theta, cfg, basis
        self.input_shift = np.asarray(input_shift, dtype=float)
        self.input_scale = np.asarray(input_scale, dtype=float)
        self.identity = identity

    def network_input(self, xi) -> np.ndarray:
        return (np.asarray(xi, dtype=float) - self.input_shift) / self.input_scale

    def coefficients(self, xi) -> np.ndarray:
        try:
            return fracnet.predict(self.theta, self.network_input(xi), self.cfg)
        except FloatingPointError as exc:
            raise ForwardFailure(str(exc)) from exc

    def __call__(self, xi) -> np.ndarray:
        return self.basis.V @ self.coefficients(xi)


@dataclass
class PosteriorSpec:
    data: np.ndarray
    noise_std: float
    forward_map: Callable
    lower: float = pde.XI_LOWER
    upper: float = pde.XI_UPPER
    dim: int = 2

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if not self.noise_std > 0:
            raise ValueError("noise standard deviation must be positive")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("data contains non-finite entries")
        self._reduced = None
        if isinstance(self.forward_map, SurrogateForwardMap):
            V = self.forward_map.basis.V
            dr = V.T @ self.data
            # ||d - Vc||² = ||Vᵀd - c||² + ||(I - VVᵀ)d||²
            self._reduced = (dr, float(self.data @ self.data - dr @ dr))

    def in_box(self, xi) -> bool:
        xi = np.asarray(xi, dtype=float)
        return bool(np.all(np.isfinite(xi)) and np.all(xi >= self.lower) and np.all(xi <= self.upper))

    def misfit(self, xi) -> float:
        if self._reduced is not None:
            dr, tail = self._reduced
            r = dr - self.forward_map.coefficients(xi)
            return float(r @ r) + tail
        r = self.data - self.forward_map(xi)
        return float(r @ r)

    def log_posterior(self, xi) -> float:
        """Log density up to a constant; ``-inf`` outside the prior box."""
        if not self.in_box(xi):
            return NEG_INF
        return -self.misfit(xi) / (2.0 * self.noise_std**2)

    __call__ = log_posterior

    @property
    def midpoint(self) -> np.ndarray:
        return np.full(self.dim, 0.5 * (self.lower + self.upper))


def generate_observations(xi_true, grid: pde.GridConfig, kappa: float, seed=None,
                          newton_tol: float = 1e-6) -> np.ndarray:
    """``d = Φ(ξᵉ) + η`` with ``η ~ N(0, κ² I)``."""
    u = pde.solve_forward(xi_true, grid, newton_tol).values
    if kappa == 0:
        return u
    rng = np.random.default_rng(seed)
    return u + kappa * rng.standard_normal(u.shape)


@dataclass
class ProposalState:
    dim: int
    scale: float | None = None
    jitter: float = 1e-8
    update_period: float = 100
    count: int = 0
    mean: np.ndarray = None
    m2: np.ndarray = None
    cov: np.ndarray = None

    def __post_init__(self):
        if self.scale is None:
            self.scale = 2.4**2 / self.dim
        if self.mean is None:
            self.mean = np.zeros(self.dim)
        if self.m2 is None:
            self.m2 = np.zeros((self.dim, self.dim))
        if self.cov is None:
            self.cov = np.eye(self.dim)
        self._refresh_factor()

    def _refresh_factor(self):
        self.chol = np.linalg.cholesky(self.scale * self.cov)

    def observe(self, xi) -> None:
        """Welford update of the running mean and scatter matrix."""
        xi = np.asarray(xi, dtype=float)
        self.count += 1
        delta = xi - self.mean
        self.mean = self.mean + delta / self.count
        self.m2 = self.m2 + np.outer(delta, xi - self.mean)

    def empirical_cov(self) -> np.ndarray:
        return self.m2 / self.count + self.jitter * np.eye(self.dim)


def update_proposal(state: ProposalState, history=None) -> ProposalState:
    """Refresh ``C = (1/i) Σ_j (ξʲ - ξ̄)(ξʲ - ξ̄)ᵀ + ϑI`` from the running sums.

    When ``history`` is given, the running statistics are rebuilt from it first.
    """
    if history is not None:
        history = np.atleast_2d(np.asarray(history, dtype=float))
        state.count, state.mean, state.m2 = 0, np.zeros(state.dim), np.zeros((state.dim, state.dim))
        for row in history:
            state.observe(row)
    if state.count < 1:
        raise ValueError("covariance update needs at least one sample")
    cov = state.empirical_cov()
    state.cov = 0.5 * (cov + cov.T)
    state._refresh_factor()
    return state


def am_step(log_target, state: ProposalState, current, current_logp: float, rng):
    """One Metropolis step with proposal ``N(current, s·C)``.

    Returns ``(next, next_logp, accepted)``. The Gaussian proposal is
    symmetric, so acceptance uses only the posterior ratio.
    """
    z = rng.standard_normal(state.dim)
    proposal = current + state.chol @ z
    u = rng.random()
    if not np.all(np.isfinite(proposal)):
        return current, current_logp, False
    logp = log_target(proposal)
    if logp == NEG_INF or math.isnan(logp):
        return current, current_logp, False
    log_alpha = logp - current_logp
    if log_alpha >= 0 or u < math.exp(log_alpha):
        return proposal, logp, True
    return current, current_logp, False


@dataclass
class Chain:
    samples: np.ndarray
    accepted: np.ndarray
    log_posterior: np.ndarray
    burn_in: int = 0
    covariance_history: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def post_burn_in(self) -> np.ndarray:
        return self.samples[self.burn_in:]

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.accepted[self.burn_in:])) if len(self.accepted) > self.burn_in else float("nan")

    def to_csv(self, path) -> None:
        """Comment lines ``# key = value`` carry run metadata, then a header row."""
        d = self.samples.shape[1]
        with open(path, "w", newline="") as fh:
            for key, value in self.meta.items():
                fh.write(f"# {key} = {value}\n")
            fh.write(f"# burn_in = {self.burn_in}\n")
            w = csv.writer(fh)
            w.writerow(["step"] + [f"xi_{i + 1}" for i in range(d)] + ["log_posterior", "accepted"])
            for i, (x, lp, a) in enumerate(zip(self.samples, self.log_posterior, self.accepted)):
                w.writerow([i + 1] + [repr(float(v)) for v in x] + [repr(float(lp)), int(a)])

    @classmethod
    def from_csv(cls, path) -> "Chain":
        meta, rows, header = {}, [], None
        with open(path, newline="") as fh:
            for lineno, line in enumerate(fh, start=1):
                if line.startswith("#"):
                    key, sep, value = line[1:].strip().partition(" = ")
                    if not sep:
                        raise ValueError(f"{path}:{lineno}: malformed metadata line")
                    meta[key] = value
                    continue
                cells = next(csv.reader([line]))
                if header is None:
                    header = cells
                    if header[0] != "step" or header[-2:] != ["log_posterior", "accepted"]:
                        raise ValueError(f"{path}:{lineno}: unexpected chain header {header}")
                    continue
                if len(cells) != len(header):
                    raise ValueError(f"{path}:{lineno}: expected {len(header)} columns, got {len(cells)}")
                try:
                    rows.append([float(c) for c in cells])
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: non-numeric entry") from None
        if header is None or not rows:
            raise ValueError(f"{path}: no chain rows")
        arr = np.array(rows)
        burn_in = int(meta.pop("burn_in", 0))
        return cls(arr[:, 1:-2], arr[:, -1].astype(bool), arr[:, -2], burn_in, meta=meta)


def run_chain(target, M: int, burn_in: int = 0, seed=None, *, initial=None,
              scale: float | None = None, update_period: float = 100, jitter: float = 1e-8,
              initial_cov=None, max_consecutive_failures: int = 10) -> Chain:
    """Adaptive Metropolis chain of ``M`` steps.

    ``target`` is a :class:`PosteriorSpec` or any callable returning a log
    density. The proposal covariance starts at ``initial_cov`` (identity by
    default) and is re-estimated from all samples so far (initial state
    included) after every ``update_period`` steps; pass ``math.inf`` to
    freeze it.
    """
    if M <= burn_in:
        raise ValueError(f"chain length {M} must exceed burn-in {burn_in}")
    log_target = target.log_posterior if isinstance(target, PosteriorSpec) else target
    if initial is None:
        if not isinstance(target, PosteriorSpec):
            raise ValueError("initial state required for a bare log density")
        initial = target.midpoint
    current = np.array(initial, dtype=float)
    dim = current.size
    state = ProposalState(dim, scale=scale, jitter=jitter, update_period=update_period,
                          cov=None if initial_cov is None else np.array(initial_cov, dtype=float))
    rng = np.random.default_rng(seed)

    current_logp = log_target(current)
    if current_logp == NEG_INF:
        raise ValueError("initial state has zero posterior density")
    state.observe(current)

    samples = np.empty((M, dim))
    accepted = np.zeros(M, dtype=bool)
    logps = np.empty(M)
    cov_history = [state.cov.copy()]
    failures = 0
    for i in range(M):
        try:
            current, current_logp, acc = am_step(log_target, state, current, current_logp, rng)
            failures = 0
        except ForwardFailure as exc:
            failures += 1
            logger.warning("forward failure at step %d: %s", i + 1, exc)
            if failures > max_consecutive_failures:
                raise ForwardFailure(f"{failures} consecutive forward failures; last: {exc}") from exc
            acc = False
        samples[i] = current
        accepted[i] = acc
        logps[i] = current_logp
        state.observe(current)
        if math.isfinite(update_period) and (i + 1) % int(update_period) == 0:
            update_proposal(state)
            cov_history.append(state.cov.copy())
    meta = {"M": M, "scale": state.scale, "update_period": update_period, "jitter": jitter}
    if seed is not None:
        meta["seed"] = seed
    return Chain(samples, accepted, logps, burn_in, cov_history, meta)
