"""Chain diagnostics: autocorrelation, integrated autocorrelation time, intervals."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np


class DegenerateSeries(ValueError):
    """Raised for a constant series, whose autocorrelation is undefined."""


@dataclass
class AcfResult:
    lags: np.ndarray
    rho: np.ndarray

    @property
    def J(self) -> int:
        return int(self.lags[-1])


@dataclass
class IactResult:
    tau_int: float
    window: int
    converged: bool = True


def default_max_lag(n: int) -> int:
    return max(1, int(math.floor(10 * math.log10(n))))


def _autocov(series: np.ndarray, max_lag: int) -> np.ndarray:
    """``B(j) = (1/(N-j)) Σ_{k=1}^{N-j} (δ_k - δ̄)(δ_{k+j} - δ̄)`` for j = 0..max_lag."""
    x = series - series.mean()
    n = x.size
    size = 1 << (2 * n - 1).bit_length()
    fx = np.fft.rfft(x, size)
    sums = np.fft.irfft(fx * np.conj(fx), size)[: max_lag + 1]
    return sums / (n - np.arange(max_lag + 1))


def acf(series, J: int | None = None) -> AcfResult:
    """Autocorrelation ``ϱ(j) = B(j)/B(0)`` for lags 0..J (per-lag 1/(N-j) normalization)."""
    x = np.asarray(series, dtype=float).ravel()
    n = x.size
    if J is None:
        J = default_max_lag(n)
    if not 1 <= J < n:
        raise ValueError(f"need 1 <= J < len(series), got J={J}, len={n}")
    B = _autocov(x, J)
    if B[0] <= 0 or np.ptp(x) == 0:
        raise DegenerateSeries("constant series has no autocorrelation")
    rho = B / B[0]
    rho[0] = 1.0
    return AcfResult(np.arange(J + 1), rho)


def iact(series, c: float = 3.0) -> IactResult:
    """Integrated autocorrelation time ``1 + 2 Σ_{j=1}^{Ĵ} ϱ(j)`` with the
    smallest window ``Ĵ >= c · τ_int(Ĵ)``.

    The window search stops at ``len(series) // 3``; a result reached there
    is flagged ``converged=False``.
    """
    x = np.asarray(series, dtype=float).ravel()
    n = x.size
    if n < 100:
        raise ValueError(f"IACT needs at least 100 samples, got {n}")
    max_window = n // 3
    B = _autocov(x, max_window)
    if B[0] <= 0 or np.ptp(x) == 0:
        raise DegenerateSeries("constant series has no autocorrelation")
    taus = 1.0 + 2.0 * np.cumsum(B[1:] / B[0])
    for window in range(1, max_window + 1):
        tau = taus[window - 1]
        if window >= c * tau:
            return IactResult(float(tau), window, True)
    return IactResult(float(taus[-1]), max_window, False)


def credible_interval(series, level: float = 0.95) -> tuple[float, float]:
    x = np.asarray(series, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("empty series")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    tail = 100.0 * (1.0 - level) / 2.0
    lo, hi = np.percentile(x, [tail, 100.0 - tail])
    return float(lo), float(hi)


def histogram(series, bins: int = 20):
    if bins < 1:
        raise ValueError("bins must be >= 1")
    counts, edges = np.histogram(np.asarray(series, dtype=float).ravel(), bins=bins)
    return edges, counts


REPORT_COLUMNS = ["coordinate", "mean", "sd", "ci_lo", "ci_hi", "tau_int", "window", "acceptance_rate"]


def summarize(samples, accepted=None, level: float = 0.95) -> list[dict]:
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    rate = float(np.mean(accepted)) if accepted is not None and len(accepted) else float("nan")
    rows = []
    for i in range(samples.shape[1]):
        x = samples[:, i]
        lo, hi = credible_interval(x, level)
        try:
            res = iact(x)
            tau, window = res.tau_int, res.window
        except (DegenerateSeries, ValueError):
            tau, window = float("nan"), 0
        rows.append({"coordinate": f"xi_{i + 1}", "mean": float(x.mean()), "sd": float(x.std(ddof=1)) if x.size > 1 else 0.0,
                     "ci_lo": lo, "ci_hi": hi, "tau_int": tau, "window": window, "acceptance_rate": rate})
    return rows


def write_report(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow(row)


def write_acf_table(path, samples, J: int | None = None) -> None:
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    J = default_max_lag(samples.shape[0]) if J is None else J
    cols = []
    for i in range(samples.shape[1]):
        try:
            cols.append(acf(samples[:, i], J).rho)
        except DegenerateSeries:
            cols.append(np.full(J + 1, np.nan))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lag"] + [f"rho_xi_{i + 1}" for i in range(samples.shape[1])])
        for j in range(J + 1):
            w.writerow([j] + [repr(float(c[j])) for c in cols])
