"""Histogram estimates of node value distributions and Jensen-Shannon divergence.

All divergences are in nats, so ``jsd`` is bounded by ``ln 2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_BINS = 64
SMOOTHING = 1e-6


@dataclass(frozen=True, eq=False)
class Histogram:
    bin_edges: np.ndarray
    mass: np.ndarray

    def __post_init__(self):
        edges = np.array(self.bin_edges, dtype=np.float64)
        mass = np.array(self.mass, dtype=np.float64)
        if edges.ndim != 1 or mass.ndim != 1 or edges.size != mass.size + 1:
            raise ValueError("bin_edges must have exactly one more entry than mass")
        if np.any(np.diff(edges) <= 0):
            raise ValueError("bin_edges must be strictly increasing")
        if np.any(mass < 0) or abs(mass.sum() - 1.0) > 1e-9:
            raise ValueError("mass must be nonnegative and sum to 1")
        edges.setflags(write=False)
        mass.setflags(write=False)
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "mass", mass)

    @property
    def n_bins(self) -> int:
        return self.mass.size


def build_histogram(samples, bins: int = DEFAULT_BINS, range: tuple[float, float] | None = None,
                    alpha: float = SMOOTHING) -> Histogram:
    """Equal-width histogram over ``range``, Laplace smoothed by ``alpha`` per bin.

    Samples outside the range are clipped into the boundary bins.
    """
    samples = np.asarray(samples, dtype=np.float64).ravel()
    if samples.size == 0:
        raise ValueError("cannot build a histogram from an empty sample")
    if bins < 1:
        raise ValueError("bins must be positive")
    lo, hi = (samples.min(), samples.max()) if range is None else range
    if not lo < hi:
        raise ValueError(f"histogram range requires lo < hi, got ({lo}, {hi})")
    edges = np.linspace(lo, hi, bins + 1)
    idx = np.floor((np.clip(samples, lo, hi) - lo) / (hi - lo) * bins).astype(np.intp)
    counts = np.bincount(np.minimum(idx, bins - 1), minlength=bins).astype(np.float64)
    p = counts / samples.size + alpha
    return Histogram(edges, p / p.sum())


def _check_support(p: Histogram, q: Histogram) -> None:
    if p.bin_edges.shape != q.bin_edges.shape or not np.array_equal(p.bin_edges, q.bin_edges):
        raise ValueError("histograms must share identical bin edges")


def kl_to_midpoint(p: Histogram, mid: Histogram) -> float:
    """Discrete KL divergence ``sum p log(p / mid)`` in nats."""
    _check_support(p, mid)
    return _kl(p.mass, mid.mass)


def _kl(p: np.ndarray, m: np.ndarray) -> float:
    nz = p > 0
    return max(float(np.sum(p[nz] * np.log(p[nz] / m[nz]))), 0.0)


def jsd(p: Histogram, q: Histogram) -> float:
    _check_support(p, q)
    return _jsd_mass(p.mass, q.mass)


def _jsd_mass(p: np.ndarray, q: np.ndarray) -> float:
    m = 0.5 * (p + q)  # (p + q) and (q + p) are bit-identical in IEEE arithmetic
    a, b = _kl(p, m), _kl(q, m)
    # sorted summation keeps jsd(p, q) == jsd(q, p) bit-exactly
    lo, hi = (a, b) if a <= b else (b, a)
    return min(0.5 * lo + 0.5 * hi, np.log(2.0))


def jsd_samples(a, b, bins: int = DEFAULT_BINS, alpha: float = SMOOTHING) -> float:
    """JSD between the empirical distributions of two samples on their shared range."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    if not hi > lo:
        return 0.0
    return jsd(build_histogram(a, bins, (lo, hi), alpha), build_histogram(b, bins, (lo, hi), alpha))
