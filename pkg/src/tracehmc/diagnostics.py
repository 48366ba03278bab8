"""Posterior-quality metrics for sampler output."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import logsumexp


@dataclass(frozen=True)
class Histogram:
    """Normalized masses over discrete ``labels`` or over bins given by ``edges``."""

    masses: np.ndarray
    labels: Optional[tuple] = None
    edges: Optional[np.ndarray] = None

    def __post_init__(self):
        m = np.asarray(self.masses, dtype=float)
        object.__setattr__(self, "masses", m)
        if (self.labels is None) == (self.edges is None):
            raise ValueError("give exactly one of labels or edges")
        if np.any(m < 0) or abs(m.sum() - 1.0) > 1e-12:
            raise ValueError("masses must be nonnegative and sum to 1")
        if self.edges is not None:
            e = np.asarray(self.edges, dtype=float)
            object.__setattr__(self, "edges", e)
            if len(e) != len(m) + 1 or np.any(np.diff(e) <= 0):
                raise ValueError("edges must be ascending with one more entry than masses")
        elif len(self.labels) != len(m):
            raise ValueError("one label per mass")

    def same_support(self, other: "Histogram") -> bool:
        if self.labels is not None:
            return other.labels is not None and tuple(self.labels) == tuple(other.labels)
        return other.edges is not None and np.array_equal(self.edges, other.edges)


def _normalize(counts: np.ndarray) -> np.ndarray:
    counts = np.asarray(counts, dtype=float)
    total = counts.sum()
    if total <= 0:
        raise ValueError("histogram has no mass")
    m = counts / total
    # absorb rounding so the masses sum to one to within an ulp
    m[np.argmax(m)] += 1.0 - m.sum()
    return m


def discrete_histogram(values: Sequence[int], support: Sequence, tail: bool = True,
                       weights: Optional[Sequence[float]] = None) -> Histogram:
    """Histogram over ``support``; with ``tail`` an extra ``"tail"`` bucket takes the rest."""
    values = np.asarray(values)
    w = np.ones(len(values)) if weights is None else np.asarray(weights, dtype=float)
    support = list(support)
    index = {s: i for i, s in enumerate(support)}
    counts = np.zeros(len(support) + (1 if tail else 0))
    for v, wi in zip(values.tolist(), w):
        i = index.get(v)
        if i is None:
            if not tail:
                raise ValueError(f"value {v!r} outside the support")
            i = len(support)
        counts[i] += wi
    labels = tuple(support) + (("tail",) if tail else ())
    return Histogram(_normalize(counts), labels=labels)


def pmf_histogram(pmf: Callable[[int], float], support: Sequence[int]) -> Histogram:
    """Exact histogram of a pmf on ``support`` plus a tail bucket holding the remainder."""
    masses = np.array([pmf(k) for k in support], dtype=float)
    masses = np.append(masses, max(0.0, 1.0 - masses.sum()))
    return Histogram(_normalize(masses), labels=tuple(support) + ("tail",))


def binned_histogram(values: Sequence[float], edges: Sequence[float],
                     weights: Optional[Sequence[float]] = None) -> Histogram:
    """Histogram over fixed bins; values outside the edges are clipped into the end bins."""
    edges = np.asarray(edges, dtype=float)
    v = np.clip(np.asarray(values, dtype=float), edges[0], edges[-1])
    counts, _ = np.histogram(v, bins=edges, weights=weights)
    return Histogram(_normalize(counts), edges=edges)


def tvd(a: Histogram, b: Histogram) -> float:
    """Total variation distance between histograms on the same support."""
    if not a.same_support(b):
        raise ValueError("histograms have different supports")
    return float(min(1.0, 0.5 * np.abs(a.masses - b.masses).sum()))


@dataclass(frozen=True)
class ESS:
    value: float  # clamped to (0, n]
    raw: float
    clamped: bool


def _autocorr(x: np.ndarray) -> np.ndarray:
    n = len(x)
    x = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n] / n
    return acov / acov[0]


def ess_autocorr_detail(series: Sequence[float]) -> ESS:
    """Autocorrelation ESS with Geyer's initial positive sequence truncation.

    Lags are summed in pairs ``rho_2k + rho_2k+1``, stopping at the first
    negative pair; ``ESS = n / (2 * sum(pairs) - 1)``.
    """
    x = np.asarray(series, dtype=float)
    n = len(x)
    if n < 10:
        raise ValueError("need at least 10 draws")
    if np.ptp(x) == 0:
        return ESS(float(n), float(n), False)
    rho = _autocorr(x)
    m = n // 2
    pairs = rho[0:2 * m:2] + rho[1:2 * m:2]
    neg = np.flatnonzero(pairs < 0)
    keep = pairs[: neg[0]] if len(neg) else pairs
    tau = 2.0 * float(keep.sum()) - 1.0
    raw = n / tau if tau > 0 else math.inf
    return ESS(min(raw, float(n)), raw, raw > n)


def ess_autocorr(series: Sequence[float]) -> float:
    return ess_autocorr_detail(series).value


def ess_weighted(weights: Sequence[float]) -> float:
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    if not np.any(w > 0):
        raise ValueError("need at least one positive weight")
    w = w / w.max()  # scale-free; avoids underflow in w @ w
    s = w.sum()
    return float(s * s / (w @ w))


def ess_log_weights(log_weights: Sequence[float]) -> float:
    lw = np.asarray(log_weights, dtype=float)
    return ess_weighted(np.exp(lw - lw.max()))


def lppd_pointwise(param_samples: Sequence, test_points: np.ndarray,
                   loglik: Callable[[object, np.ndarray], np.ndarray]) -> np.ndarray:
    """``log (1/M) sum_j p(y_i | theta_j)`` for each test point ``y_i``."""
    if len(param_samples) < 1:
        raise ValueError("need at least one parameter sample")
    if len(test_points) < 1:
        raise ValueError("need a nonempty test set")
    table = np.stack([np.asarray(loglik(theta, test_points), dtype=float)
                      for theta in param_samples])
    return logsumexp(table, axis=0) - math.log(len(param_samples))


def lppd(param_samples: Sequence, test_points: np.ndarray,
         loglik: Callable[[object, np.ndarray], np.ndarray]) -> float:
    return float(lppd_pointwise(param_samples, test_points, loglik).sum())


def scott_bandwidth(samples: Sequence[float]) -> float:
    x = np.asarray(samples, dtype=float)
    return 1.06 * float(np.std(x, ddof=1)) * len(x) ** (-0.2)


def kde(samples: Sequence[float], grid: Sequence[float],
        bandwidth: Optional[float] = None) -> np.ndarray:
    """Gaussian kernel density estimate evaluated on ``grid``."""
    x = np.asarray(samples, dtype=float)
    g = np.asarray(grid, dtype=float)
    if bandwidth is None:
        if len(x) < 2:
            raise ValueError("need at least two samples")
        bandwidth = scott_bandwidth(x)
        if bandwidth == 0:
            raise ValueError("samples have zero variance; pass a bandwidth")
    elif not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    h = bandwidth
    z = (g[:, None] - x[None, :]) / h
    return np.exp(-0.5 * z * z).sum(axis=1) / (len(x) * h * math.sqrt(2 * math.pi))


def metric_record(name: str, value: float, stderr: Optional[float] = None, **extra) -> str:
    """One metric as a JSON line."""
    rec = {"name": name, "value": value}
    if stderr is not None:
        rec["stderr"] = stderr
    rec.update(extra)
    return json.dumps(rec, sort_keys=True)
