"""Nonlinear diffusion-reaction forward model on the unit square.

Solves ``-Δu + g(u; ξ) = f`` with homogeneous Dirichlet data, where
``g(u; ξ) = (ξ2/ξ1)(exp(ξ1 u) - 1)`` and ``f = 100 sin(2πx1) sin(2πx2)``,
using the 5-point centered-difference Laplacian and inexact Newton-GMRES.

Interior unknowns use row-major ordering: ``values.reshape(m, m)[i, j]`` is
the node ``(x1, x2) = ((i + 1) h, (j + 1) h)`` with ``h = 1 / (m + 1)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import gmres

logger = logging.getLogger(__name__)

XI_LOWER = 0.01
XI_UPPER = 10.0
EXP_LIMIT = 700.0


class SolverError(RuntimeError):
    """Raised when the Newton iteration fails; carries the last residual norm."""

    def __init__(self, message: str, residual_norm: float = float("nan"), iterations: int = 0):
        super().__init__(message)
        self.residual_norm = residual_norm
        self.iterations = iterations


@dataclass(frozen=True)
class GridConfig:
    m: int = 64

    def __post_init__(self):
        if self.m < 2:
            raise ValueError(f"grid needs m >= 2 interior points per direction, got {self.m}")

    @property
    def h(self) -> float:
        return 1.0 / (self.m + 1)

    @property
    def n_dof(self) -> int:
        return self.m * self.m

    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """Interior node coordinates ``(x1, x2)`` flattened in solver order."""
        x = self.h * np.arange(1, self.m + 1)
        x1, x2 = np.meshgrid(x, x, indexing="ij")
        return x1.ravel(), x2.ravel()


@dataclass(frozen=True)
class PdeParams:
    xi1: float
    xi2: float

    def __post_init__(self):
        for name, v in (("xi1", self.xi1), ("xi2", self.xi2)):
            if not (XI_LOWER <= v <= XI_UPPER):
                raise ValueError(f"{name}={v} outside admissible box [{XI_LOWER}, {XI_UPPER}]")

    @classmethod
    def from_vector(cls, xi) -> "PdeParams":
        xi = np.asarray(xi, dtype=float)
        return cls(float(xi[0]), float(xi[1]))

    def as_array(self) -> np.ndarray:
        return np.array([self.xi1, self.xi2])


@dataclass
class DiscreteField:
    values: np.ndarray
    grid: GridConfig

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_dof,):
            raise ValueError(f"field has shape {self.values.shape}, grid needs ({self.grid.n_dof},)")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")

    def as_grid(self) -> np.ndarray:
        return self.values.reshape(self.grid.m, self.grid.m)


@dataclass
class SolveStats:
    newton_iterations: int = 0
    residual_norm: float = float("nan")
    gmres_iterations: list[int] = field(default_factory=list)
    gmres_relative_residuals: list[float] = field(default_factory=list)


_LAPLACIAN_CACHE: dict[int, sp.csr_matrix] = {}


def laplacian(grid: GridConfig) -> sp.csr_matrix:
    """Negative 5-point Laplacian ``A`` (SPD) with Dirichlet boundary, scaled by 1/h²."""
    A = _LAPLACIAN_CACHE.get(grid.m)
    if A is None:
        m = grid.m
        T = sp.diags([-np.ones(m - 1), 2.0 * np.ones(m), -np.ones(m - 1)], [-1, 0, 1])
        I = sp.identity(m)
        A = ((sp.kron(T, I) + sp.kron(I, T)) / grid.h**2).tocsr()
        _LAPLACIAN_CACHE[grid.m] = A
    return A


def source_term(grid: GridConfig) -> DiscreteField:
    x1, x2 = grid.coordinates()
    return DiscreteField(100.0 * np.sin(2 * np.pi * x1) * np.sin(2 * np.pi * x2), grid)


def _check_exponent(u, xi1):
    worst = np.max(np.abs(xi1 * np.asarray(u)))
    if worst > EXP_LIMIT:
        raise SolverError(f"reaction term overflow: |xi1*u| reached {worst:.3g} > {EXP_LIMIT}")


def reaction(u, xi: PdeParams):
    _check_exponent(u, xi.xi1)
    return (xi.xi2 / xi.xi1) * np.expm1(xi.xi1 * np.asarray(u, dtype=float))


def reaction_deriv(u, xi: PdeParams):
    _check_exponent(u, xi.xi1)
    return xi.xi2 * np.exp(xi.xi1 * np.asarray(u, dtype=float))


def residual(u, xi: PdeParams | None, grid: GridConfig, f: np.ndarray | None = None) -> np.ndarray:
    """``F(u; ξ) = A u + g(u; ξ) - f``. Passing ``xi=None`` drops the reaction (linear case)."""
    u = np.asarray(getattr(u, "values", u), dtype=float)
    if f is None:
        f = source_term(grid).values
    F = laplacian(grid) @ u - f
    if xi is not None:
        F = F + reaction(u, xi)
    return F


def jacobian(u, xi: PdeParams | None, grid: GridConfig) -> sp.csr_matrix:
    A = laplacian(grid)
    if xi is None:
        return A
    return (A + sp.diags(reaction_deriv(u, xi))).tocsr()


def solve_forward(
    xi,
    grid: GridConfig,
    newton_tol: float = 1e-6,
    *,
    forcing: float = 1e-4,
    restart: int = 50,
    max_newton: int = 50,
    max_halvings: int = 10,
    linear: bool = False,
    stats: SolveStats | None = None,
) -> DiscreteField:
    """Inexact Newton-GMRES solve of ``F(u; ξ) = 0`` from ``u0 = 0``.

    Stops when ``||F(u)||_2 <= newton_tol``. Each Newton correction solves
    ``J s = -F`` with unpreconditioned restarted GMRES to relative residual
    ``forcing``. A step is halved (at most ``max_halvings`` times) when it
    fails to reduce the residual norm.

    ``linear=True`` drops the reaction term; this is the test hook used for
    the manufactured-solution convergence study.
    """
    params = None if linear else (xi if isinstance(xi, PdeParams) else PdeParams.from_vector(xi))
    stats = stats if stats is not None else SolveStats()
    f = source_term(grid).values
    u = np.zeros(grid.n_dof)
    F = residual(u, params, grid, f)
    rnorm = float(np.linalg.norm(F))

    for it in range(max_newton + 1):
        stats.newton_iterations = it
        stats.residual_norm = rnorm
        if rnorm <= newton_tol:
            return DiscreteField(u, grid)
        if it == max_newton:
            break
        J = jacobian(u, params, grid)
        counter = [0]

        def _count(_):
            counter[0] += 1

        # maxiter counts restart cycles in scipy
        s, info = gmres(J, -F, rtol=forcing, atol=0.0, restart=restart, maxiter=1000,
                        callback=_count, callback_type="pr_norm")
        if info < 0 or not np.all(np.isfinite(s)):
            raise SolverError("GMRES breakdown", rnorm, it)
        stats.gmres_iterations.append(counter[0])
        stats.gmres_relative_residuals.append(float(np.linalg.norm(J @ s + F) / rnorm))

        step = 1.0
        for _ in range(max_halvings + 1):
            trial = u + step * s
            try:
                F_trial = residual(trial, params, grid, f)
            except SolverError:
                F_trial = None
            if F_trial is not None:
                trial_norm = float(np.linalg.norm(F_trial))
                if trial_norm < rnorm:
                    break
            step *= 0.5
        else:
            raise SolverError("step halving failed to reduce the residual", rnorm, it)
        u, F, rnorm = trial, F_trial, trial_norm
        logger.debug("newton it=%d |F|=%.3e gmres=%d step=%g", it + 1, rnorm, counter[0], step)

    raise SolverError(f"Newton did not converge in {max_newton} iterations (|F|={rnorm:.3e})",
                      rnorm, max_newton)


def latin_hypercube(n_samples: int, bounds, seed=None) -> np.ndarray:
    """Latin hypercube design: each column puts exactly one point in each of
    ``n_samples`` equal-width strata, with strata randomly permuted per column."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    bounds = np.asarray(bounds, dtype=float)
    if bounds.ndim != 2 or bounds.shape[1] != 2:
        raise ValueError("bounds must be a sequence of (low, high) pairs")
    rng = np.random.default_rng(seed)
    dim = bounds.shape[0]
    unit = np.empty((n_samples, dim))
    for d in range(dim):
        strata = rng.permutation(n_samples)
        unit[:, d] = (strata + rng.random(n_samples)) / n_samples
    lo, hi = bounds[:, 0], bounds[:, 1]
    return lo + unit * (hi - lo)
