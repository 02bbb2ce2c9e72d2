"""Offline/online stages: snapshots, POD + training, sampling, held-out error."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import fileio, fracnet, mcmc, optim, pde
from .config import ExperimentConfig
from .pod import PodBasis, SnapshotSet, compute_pod

logger = logging.getLogger(__name__)


@dataclass
class SnapshotRun:
    snapshots: SnapshotSet
    newton_iterations: list[int]
    failures: list[int]
    seconds: float


def _solve_one(args):
    xi, m, tol = args
    stats = pde.SolveStats()
    try:
        u = pde.solve_forward(xi, pde.GridConfig(m), tol, stats=stats).values
        return u, stats.newton_iterations, None
    except pde.SolverError as exc:
        return None, exc.iterations, str(exc)


def generate_snapshots(cfg: ExperimentConfig, workers: int = 1) -> SnapshotRun:
    """Latin-hypercube parameters and one forward solve per sample.

    Results land in sample order regardless of ``workers``. More than 1%
    failed solves aborts the run.
    """
    t0 = time.perf_counter()
    params = pde.latin_hypercube(cfg.n_samples, cfg.bounds, cfg.seed_snapshots)
    jobs = [(p, cfg.m, cfg.newton_tol) for p in params]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_solve_one, jobs, chunksize=8))
    else:
        results = [_solve_one(j) for j in jobs]
    failures = [i for i, r in enumerate(results) if r[0] is None]
    if len(failures) > 0.01 * len(results):
        raise pde.SolverError(f"{len(failures)} of {len(results)} snapshot solves failed "
                              f"(first: {results[failures[0]][2]})")
    keep = [i for i in range(len(results)) if results[i][0] is not None]
    S = np.column_stack([results[i][0] for i in keep])
    return SnapshotRun(SnapshotSet(params[keep], S), [r[1] for r in results], failures,
                       time.perf_counter() - t0)


def input_transform(cfg: ExperimentConfig):
    """``(shift, scale)`` mapping the parameter box onto [-1, 1]², or the identity."""
    if cfg.input_scaling == "box":
        return np.full(2, 0.5 * (cfg.lower + cfg.upper)), np.full(2, 0.5 * (cfg.upper - cfg.lower))
    return np.zeros(2), np.ones(2)


@dataclass
class TrainRun:
    theta: fracnet.Theta
    net: fracnet.FracNetConfig
    basis: PodBasis
    result: optim.OptimResult
    shift: np.ndarray
    scale: np.ndarray
    snapshots_at: dict = field(default_factory=dict)
    seconds: float = 0.0
    svd_seconds: float = 0.0

    def surrogate(self) -> mcmc.SurrogateForwardMap:
        return mcmc.SurrogateForwardMap(self.theta, self.net, self.basis, self.shift, self.scale)

    def surrogate_at(self, iteration: int) -> mcmc.SurrogateForwardMap:
        theta = self.snapshots_at[iteration]
        return mcmc.SurrogateForwardMap(theta, self.net, self.basis, self.shift, self.scale)


def train_surrogate(snapshots: SnapshotSet, cfg: ExperimentConfig, keep_iterates=()) -> TrainRun:
    """POD of the snapshots, then BFGS on ``ξ_j ↦ Vᵀu_j``.

    ``keep_iterates`` lists iteration counts whose parameters are retained,
    so one run yields the models for several iteration budgets.
    """
    t0 = time.perf_counter()
    basis = compute_pod(snapshots.snapshots, cfg.effective_k)
    svd_seconds = time.perf_counter() - t0
    targets = (basis.V.T @ snapshots.snapshots).T
    net = cfg.network_config()
    shift, scale = input_transform(cfg)
    inputs = (snapshots.parameters - shift) / scale
    theta0 = fracnet.Theta.initialize(net, cfg.seed_init)

    def objective(x):
        value, grad = fracnet.gradient(fracnet.Theta.from_flat(x, net), inputs, targets, net)
        return value, grad.flatten()

    kept = {}
    wanted = set(keep_iterates)

    def keep(k, x, f):
        if k in wanted:
            kept[k] = fracnet.Theta.from_flat(x, net)

    t1 = time.perf_counter()
    result = optim.bfgs_minimize(objective, theta0.flatten(),
                                 optim.BfgsConfig(max_iterations=cfg.iterations,
                                                  gradient_tolerance=cfg.gradient_tolerance),
                                 callback=keep)
    theta = fracnet.Theta.from_flat(result.theta_final, net)
    # a run that stops early keeps serving its final iterate for larger budgets
    for k in wanted - set(kept):
        if k >= result.iterations_used:
            kept[k] = theta
    logger.info("trained %d iterations, loss %.4e (%s)", result.iterations_used,
                result.loss_history[-1], result.message)
    return TrainRun(theta, net, basis, result, shift, scale, kept,
                    time.perf_counter() - t1, svd_seconds)


def held_out_error(surrogate: mcmc.SurrogateForwardMap, xi, grid: pde.GridConfig,
                   newton_tol: float = 1e-6, reference=None) -> float:
    """``||u(ξ) - Φ̂(ξ)||_∞ / ||u(ξ)||_∞``."""
    u = pde.solve_forward(xi, grid, newton_tol).values if reference is None else reference
    return float(np.max(np.abs(u - surrogate(xi))) / np.max(np.abs(u)))


def save_training(run: TrainRun, cfg: ExperimentConfig, checkpoint_path, basis_path) -> None:
    fileio.write_basis(basis_path, run.basis.V, run.basis.singular_values,
                       {"m": cfg.m, "seed_snapshots": cfg.seed_snapshots})
    fileio.write_checkpoint(checkpoint_path, run.theta, run.net, {
        "seed_init": cfg.seed_init,
        "input_shift": ", ".join(repr(float(v)) for v in run.shift),
        "input_scale": ", ".join(repr(float(v)) for v in run.scale),
        "iterations": run.result.iterations_used,
        "basis_sha256": fileio.file_hash(basis_path),
    })


def load_surrogate(checkpoint_path, basis_path) -> mcmc.SurrogateForwardMap:
    theta, net, header = fileio.read_checkpoint(checkpoint_path)
    V, sv, bheader = fileio.read_basis(basis_path)
    expected = header.get("basis_sha256")
    if expected and expected != fileio.file_hash(basis_path):
        raise fileio.FormatError(f"{basis_path} does not match the basis recorded in {checkpoint_path}")
    shift = np.array([float(v) for v in header.get("input_shift", "0, 0").split(",")])
    scale = np.array([float(v) for v in header.get("input_scale", "1, 1").split(",")])
    identity = f"surrogate:{fileio.file_hash(checkpoint_path)[:16]}"
    return mcmc.SurrogateForwardMap(theta, net, PodBasis(V, sv), shift, scale, identity)


@dataclass
class McmcRun:
    chain: mcmc.Chain
    data: np.ndarray
    seconds: float


def run_inverse_problem(cfg: ExperimentConfig, forward_map, data=None) -> McmcRun:
    """Sample the posterior for data generated at ``cfg.xi_true`` (seeded noise)."""
    grid = pde.GridConfig(cfg.m)
    if data is None:
        data = mcmc.generate_observations(cfg.xi_true, grid, cfg.kappa, cfg.seed_noise, cfg.newton_tol)
    spec = mcmc.PosteriorSpec(data, cfg.kappa, forward_map, cfg.lower, cfg.upper)
    t0 = time.perf_counter()
    chain = mcmc.run_chain(spec, cfg.M, cfg.burn_in, cfg.seed_chain, scale=cfg.scale,
                           update_period=cfg.update_period, jitter=cfg.jitter)
    seconds = time.perf_counter() - t0
    chain.meta.update({"forward_map": getattr(forward_map, "identity", "custom"),
                       "kappa": cfg.kappa, "seed_noise": cfg.seed_noise,
                       "xi_true": ", ".join(map(repr, cfg.xi_true))})
    return McmcRun(chain, data, seconds)
