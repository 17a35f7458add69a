"""Smallest 1-alpha set extraction from a kernel density estimate.

Finds the density cutoff whose sublevel set carries mass alpha, the
disjoint intervals where the density exceeds the cutoff, and each
interval's tail-mass pair under the smoothed CDF.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from conformal_hpd.kde import KdeModel, kde_cdf, kde_eval

__all__ = ["HpdResult", "find_cutoff", "extract_intervals", "quantile_pairs", "smallest_mass_region"]

# Intervals holding less smoothed mass than this are treated as tail
# wiggles: their conformal indices would clamp and blow up region size.
MIN_COMPONENT_MASS = 1e-3

_REFINE_ITERATIONS = 20


def _sublevel_mass(grid: np.ndarray, density: np.ndarray, lam: float) -> float:
    return float(np.trapezoid(np.where(density <= lam, density, 0.0), grid))


def find_cutoff(model: KdeModel, alpha: float) -> float:
    """Density height whose sublevel set carries mass ``alpha``.

    Bisection on the cutoff against the trapezoid mass over the cached
    grid; the mass is monotone in the cutoff, so the bracket always
    converges.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    grid, density = model.grid, model.grid_density
    lo, hi = 0.0, float(density.max())
    while hi - lo > 1e-10:
        mid = 0.5 * (lo + hi)
        mass = _sublevel_mass(grid, density, mid)
        if abs(mass - alpha) < 1e-6:
            return mid
        if mass < alpha:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _refine_crossing(model: KdeModel, lam: float, z_below: float, z_above: float) -> float:
    # Bisect f(z) - lam between a grid point at-or-below the cutoff and an
    # adjacent one above it; 20 halvings localize to span * 2**-20.
    a, b = z_below, z_above
    for _ in range(_REFINE_ITERATIONS):
        mid = 0.5 * (a + b)
        if kde_eval(model, mid) > lam:
            b = mid
        else:
            a = mid
    return 0.5 * (a + b)


def extract_intervals(model: KdeModel, lambda_hat: float) -> list[tuple[float, float]]:
    """Maximal disjoint intervals where the density exceeds ``lambda_hat``.

    Scans the cached grid for runs above the cutoff and refines each run
    boundary by bisection on the exact density between adjacent grid
    points. Raises if the cutoff is at or above the density maximum.
    """
    if lambda_hat < 0:
        raise ValueError("cutoff must be non-negative")
    grid, density = model.grid, model.grid_density
    above = density > lambda_hat
    if not above.any():
        raise ValueError("empty HPD set")
    padded = np.concatenate(([False], above, [False]))
    starts = np.flatnonzero(padded[1:] & ~padded[:-1])
    ends = np.flatnonzero(~padded[1:] & padded[:-1]) - 1
    intervals = []
    for s, e in zip(starts, ends):
        lo = grid[s] if s == 0 else _refine_crossing(model, lambda_hat, grid[s - 1], grid[s])
        n = grid.size
        hi = grid[e] if e == n - 1 else _refine_crossing(model, lambda_hat, grid[e + 1], grid[e])
        intervals.append((float(lo), float(hi)))
    return intervals


def quantile_pairs(model: KdeModel, intervals) -> list[tuple[float, float]]:
    """Tail-mass pair (lower mass below lo, upper mass above hi) per interval."""
    pairs = []
    for lo, hi in intervals:
        pairs.append((float(kde_cdf(model, lo)), float(1.0 - kde_cdf(model, hi))))
    return pairs


@dataclass(frozen=True)
class HpdResult:
    """Cutoff, retained intervals, and their tail-mass pairs for one level."""

    lambda_hat: float
    intervals: tuple
    pairs: tuple
    alpha: float


def smallest_mass_region(model: KdeModel, alpha: float) -> HpdResult:
    """Full extraction: cutoff, intervals, sliver suppression, tail pairs."""
    lam = find_cutoff(model, alpha)
    intervals = extract_intervals(model, lam)
    kept = [
        (lo, hi)
        for lo, hi in intervals
        if kde_cdf(model, hi) - kde_cdf(model, lo) >= MIN_COMPONENT_MASS
    ]
    if not kept:  # every component was a sliver; keep the widest instead
        kept = [max(intervals, key=lambda iv: iv[1] - iv[0])]
    pairs = quantile_pairs(model, kept)
    return HpdResult(
        lambda_hat=lam,
        intervals=tuple(kept),
        pairs=tuple(pairs),
        alpha=alpha,
    )
