"""Synthetic end-to-end delay generation for Y = AX experiments.

Each path gets its own RNG substream derived from a single master seed via
``numpy.random.SeedSequence.spawn``, so per-path generation is reproducible,
independent across paths (no shared link draws), and identical whether paths
are generated serially or in parallel.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .model import GhMix, RoutingMatrix, is_one_identifiable

__all__ = ["SampleSet", "sample_mix", "sample_paths"]

_INV_CDF_TOL = 1e-12


@dataclass(frozen=True)
class SampleSet:
    """Per-path IID end-to-end delay samples plus the master seed used."""

    samples: tuple[np.ndarray, ...]
    seed: int

    def __post_init__(self):
        for i, y in enumerate(self.samples):
            if y.size == 0:
                raise ValueError(f"path {i} has no samples")
            if y.min() < 0:
                raise ValueError(f"path {i} has negative samples")
            y.setflags(write=False)

    @property
    def n_paths(self) -> int:
        return len(self.samples)

    def counts(self) -> tuple[int, ...]:
        return tuple(y.size for y in self.samples)


def sample_mix(mix: GhMix, rng: np.random.Generator, size: int = 1) -> np.ndarray:
    """Draw ``size`` IID delays from a mixture.

    Proper mixtures (nonnegative weights) use stage selection followed by an
    exponential draw.  Signed mixtures fall back to bisection inverse-CDF,
    since no universal rejection envelope exists for signed mixtures.
    """
    if size < 1:
        raise ValueError("size must be >= 1")
    if mix.is_proper_mixture():
        stages = rng.choice(mix.n_stages, size=size, p=mix.weights)
        scales = 1.0 / np.asarray(mix.rates)
        return rng.exponential(scale=scales[stages])
    u = rng.random(size)
    return _inverse_cdf(mix, u)


def _inverse_cdf(mix: GhMix, u: np.ndarray) -> np.ndarray:
    """Vectorized bisection solve of gh_cdf(x) = u."""
    rates = np.asarray(mix.rates)
    weights = np.asarray(mix.weights)

    def cdf(x):
        return (1.0 - np.exp(-np.outer(x, rates))) @ weights

    hi = np.full_like(u, 1.0 / rates.min())
    # Grow the bracket until the CDF exceeds every target quantile.
    while np.any(cdf(hi) < u):
        hi = np.where(cdf(hi) < u, hi * 2.0, hi)
    lo = np.zeros_like(u)
    while np.max(hi - lo) > _INV_CDF_TOL:
        mid = 0.5 * (lo + hi)
        below = cdf(mid) < u
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def sample_paths(
    a: RoutingMatrix, mixes: list[GhMix], n_samples: int, seed: int
) -> SampleSet:
    """Generate ``n_samples`` IID end-to-end delays for every path of ``a``.

    Every path uses fresh link draws: sample l of path i is the sum of
    independent draws of the link delays on that path, never reusing draws
    from another path.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if len(mixes) != a.n_links:
        raise ValueError(
            f"got {len(mixes)} link distributions for {a.n_links} links"
        )
    if not is_one_identifiable(a):
        warnings.warn("routing matrix is not 1-identifiable; links may be "
                      "indistinguishable from path data", stacklevel=2)
    streams = np.random.SeedSequence(seed).spawn(a.n_paths)
    per_path = []
    for i in range(a.n_paths):
        rng = np.random.default_rng(streams[i])
        total = np.zeros(n_samples)
        for j in sorted(a.path_links(i)):
            total += sample_mix(mixes[j], rng, n_samples)
        per_path.append(total)
    return SampleSet(samples=tuple(per_path), seed=seed)
