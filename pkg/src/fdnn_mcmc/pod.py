"""Proper orthogonal decomposition of a snapshot matrix."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class SnapshotSet:
    parameters: np.ndarray  # (N_s, N_xi)
    snapshots: np.ndarray   # (N_x, N_s); column j solves the PDE at parameters[j]

    def __post_init__(self):
        self.parameters = np.atleast_2d(np.asarray(self.parameters, dtype=float))
        self.snapshots = np.asarray(self.snapshots, dtype=float)
        if self.snapshots.ndim != 2 or self.snapshots.shape[1] != self.parameters.shape[0]:
            raise ValueError(f"{self.parameters.shape[0]} parameters for "
                             f"{self.snapshots.shape[-1]} snapshot columns")
        if not (np.all(np.isfinite(self.snapshots)) and np.all(np.isfinite(self.parameters))):
            raise ValueError("snapshot data contains non-finite entries")


@dataclass(frozen=True)
class PodBasis:
    V: np.ndarray
    singular_values: np.ndarray

    @property
    def k(self) -> int:
        return self.V.shape[1]

    @property
    def n_x(self) -> int:
        return self.V.shape[0]


def compute_pod(S, k: int) -> PodBasis:
    """First ``k`` left singular vectors of ``S`` (no mean subtraction).

    Signs are fixed so each basis vector's largest-magnitude entry is positive.
    ``singular_values`` holds all ``min(N_x, N_s)`` values, non-increasing.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2:
        raise ValueError("snapshot matrix must be 2-D")
    if not 1 <= k <= min(S.shape):
        raise ValueError(f"rank k={k} outside [1, {min(S.shape)}]")
    U, sv, _ = np.linalg.svd(S, full_matrices=False)
    V = U[:, :k].copy()
    pivot = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[pivot, np.arange(k)])
    signs[signs == 0] = 1.0
    V *= signs
    return PodBasis(V, sv)


def project(basis: PodBasis, u) -> np.ndarray:
    """Reduced coordinates ``Vᵀu``; ``u`` may be a vector or an (N_x, n) matrix."""
    u = np.asarray(u, dtype=float)
    if u.shape[0] != basis.n_x:
        raise ValueError(f"vector length {u.shape[0]} does not match basis dimension {basis.n_x}")
    return basis.V.T @ u


def reconstruct(basis: PodBasis, c) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    if c.shape[0] != basis.k:
        raise ValueError(f"coefficient length {c.shape[0]} does not match rank {basis.k}")
    return basis.V @ c


def projection_error(basis_or_V, S) -> float:
    """Sum over snapshot columns of ``||u_j - V Vᵀ u_j||²``."""
    V = basis_or_V.V if isinstance(basis_or_V, PodBasis) else np.asarray(basis_or_V)
    S = np.asarray(S, dtype=float)
    R = S - V @ (V.T @ S)
    return float(np.sum(R * R))
