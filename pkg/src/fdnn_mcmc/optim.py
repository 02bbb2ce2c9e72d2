"""Dense BFGS with a strong-Wolfe line search."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import blas

logger = logging.getLogger(__name__)

Objective = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


class OptimizationError(RuntimeError):
    pass


@dataclass(frozen=True)
class BfgsConfig:
    max_iterations: int = 1600
    gradient_tolerance: float = 1e-8
    c1: float = 1e-4
    c2: float = 0.9
    initial_step: float = 1.0
    max_line_search: int = 40
    curvature_floor: float = 1e-12

    def __post_init__(self):
        if not 0 < self.c1 < self.c2 < 1:
            raise ValueError(f"need 0 < c1 < c2 < 1, got c1={self.c1}, c2={self.c2}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.gradient_tolerance < 0:
            raise ValueError("gradient_tolerance must be nonnegative")


@dataclass
class OptimResult:
    theta_final: np.ndarray
    loss_history: list[float] = field(default_factory=list)
    gradient_norm_history: list[float] = field(default_factory=list)
    step_history: list[float] = field(default_factory=list)
    iterations_used: int = 0
    converged: bool = False
    message: str = ""

    def write_log(self, path) -> None:
        """CSV with columns iteration, loss, gradient_norm, step_length (row 0 is the start point)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "loss", "gradient_norm", "step_length"])
            steps = [0.0] + list(self.step_history)
            for i, (f, g, s) in enumerate(zip(self.loss_history, self.gradient_norm_history, steps)):
                w.writerow([i, repr(f), repr(g), repr(s)])


def _cubic_min(a, fa, ga, b, fb, gb):
    """Minimizer of the cubic interpolating (f, f') at a and b, or None."""
    d1 = ga + gb - 3 * (fa - fb) / (a - b)
    disc = d1 * d1 - ga * gb
    if disc < 0:
        return None
    d2 = np.sign(b - a) * np.sqrt(disc)
    denom = gb - ga + 2 * d2
    if denom == 0:
        return None
    return b - (b - a) * (gb + d2 - d1) / denom


def _interpolate(lo, f_lo, g_lo, hi, f_hi, g_hi):
    x = _cubic_min(lo, f_lo, g_lo, hi, f_hi, g_hi)
    left, right = min(lo, hi), max(lo, hi)
    width = right - left
    # keep the trial safely inside the bracket
    if x is None or not np.isfinite(x) or x < left + 0.1 * width or x > right - 0.1 * width:
        x = 0.5 * (lo + hi)
    return x


def strong_wolfe(phi, f0, g0, cfg: BfgsConfig, alpha1=None):
    """Line search along a descent direction satisfying the strong Wolfe conditions.

    ``phi(alpha)`` returns ``(f, dphi, payload)``. Follows the bracketing/zoom
    scheme with cubic interpolation. Returns ``(alpha, f, payload)`` or
    ``None`` after ``cfg.max_line_search`` trial evaluations.
    """
    c1, c2 = cfg.c1, cfg.c2
    alpha_prev, f_prev, g_prev = 0.0, f0, g0
    alpha = cfg.initial_step if alpha1 is None else alpha1
    evals = 0

    def zoom(lo, f_lo, g_lo, hi, f_hi, g_hi):
        nonlocal evals
        while evals < cfg.max_line_search:
            a = _interpolate(lo, f_lo, g_lo, hi, f_hi, g_hi)
            f, g, payload = phi(a)
            evals += 1
            if not np.isfinite(f) or f > f0 + c1 * a * g0 or f >= f_lo:
                hi, f_hi, g_hi = a, f, g
            else:
                if abs(g) <= -c2 * g0:
                    return a, f, payload
                if g * (hi - lo) >= 0:
                    hi, f_hi, g_hi = lo, f_lo, g_lo
                lo, f_lo, g_lo = a, f, g
            if abs(hi - lo) < 1e-16 * max(1.0, abs(lo)):
                break
        return None

    first = True
    while evals < cfg.max_line_search:
        f, g, payload = phi(alpha)
        evals += 1
        if not np.isfinite(f):
            # shrink into the finite region before bracketing
            alpha = 0.5 * (alpha_prev + alpha)
            continue
        if f > f0 + c1 * alpha * g0 or (not first and f >= f_prev):
            return zoom(alpha_prev, f_prev, g_prev, alpha, f, g)
        if abs(g) <= -c2 * g0:
            return alpha, f, payload
        if g >= 0:
            return zoom(alpha, f, g, alpha_prev, f_prev, g_prev)
        alpha_prev, f_prev, g_prev = alpha, f, g
        alpha = 2.0 * alpha
        first = False
    return None


def bfgs_minimize(objective: Objective, theta0, cfg: BfgsConfig = BfgsConfig(), *,
                  callback: Callable[[int, np.ndarray, float], None] | None = None,
                  track_hessian: Callable[[np.ndarray], None] | None = None) -> OptimResult:
    """Minimize ``objective(x) -> (f, grad)`` with full-matrix inverse-Hessian BFGS.

    The inverse Hessian starts at the identity and is rescaled by
    ``sᵀy / yᵀy`` before the first update. Updates with ``sᵀy`` below
    ``cfg.curvature_floor`` are skipped. ``callback(k, x, f)`` runs after every
    accepted iterate; ``track_hessian`` receives the inverse Hessian (testing aid).
    """
    x = np.array(theta0, dtype=float, copy=True)
    f, g = objective(x)
    g = np.asarray(g, dtype=float)
    if not (np.isfinite(f) and np.all(np.isfinite(g))):
        raise OptimizationError("objective is non-finite at the starting point")
    n = x.size
    # only the upper triangle of H is maintained (symmetric BLAS kernels)
    H = np.asfortranarray(np.eye(n))
    scaled = False
    res = OptimResult(x, [float(f)], [float(np.max(np.abs(g)))])

    for k in range(cfg.max_iterations):
        gnorm = res.gradient_norm_history[-1]
        if gnorm <= cfg.gradient_tolerance:
            res.converged, res.message = True, "gradient tolerance reached"
            break
        p = -blas.dsymv(1.0, H, g, lower=0)
        slope = float(g @ p)
        if slope >= 0:
            # lost descent (should not happen with an SPD H); restart from steepest descent
            H = np.asfortranarray(np.eye(n))
            scaled = False
            p, slope = -g, -float(g @ g)

        def phi(alpha, x=x, p=p):
            fa, ga = objective(x + alpha * p)
            ga = np.asarray(ga, dtype=float)
            return float(fa), float(ga @ p), ga

        found = strong_wolfe(phi, float(f), slope, cfg)
        if found is None:
            res.message = f"line search failed at iteration {k}"
            logger.info(res.message)
            break
        alpha, f_new, g_new = found
        if not np.all(np.isfinite(g_new)):
            raise OptimizationError(f"non-finite gradient at iteration {k}")

        s = alpha * p
        y = g_new - g
        sy = float(s @ y)
        if sy > cfg.curvature_floor:
            if not scaled:
                H *= sy / float(y @ y)
                scaled = True
            rho = 1.0 / sy
            Hy = blas.dsymv(1.0, H, y, lower=0)
            # H += c s sᵀ - ρ (Hy sᵀ + s Hyᵀ) written as one symmetric rank-2 update
            c = rho * rho * float(y @ Hy) + rho
            H = blas.dsyr2(1.0, s, 0.5 * c * s - rho * Hy, a=H, lower=0, overwrite_a=1)
        x = x + s
        f, g = f_new, g_new
        res.loss_history.append(float(f))
        res.gradient_norm_history.append(float(np.max(np.abs(g))))
        res.step_history.append(float(alpha))
        res.iterations_used = k + 1
        if track_hessian is not None:
            track_hessian(np.triu(H) + np.triu(H, 1).T)
        if callback is not None:
            callback(k + 1, x, float(f))
    else:
        res.message = "iteration budget exhausted"
    if res.gradient_norm_history[-1] <= cfg.gradient_tolerance:
        res.converged, res.message = True, "gradient tolerance reached"
    res.theta_final = x
    return res
