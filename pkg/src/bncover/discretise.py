"""Partitioning of feature components into right-open intervals.

Every partition covers the whole real line: with boundaries
c_1 < ... < c_{m-1} the intervals are (-inf, c_1), [c_1, c_2), ...,
[c_{m-1}, +inf).  Values exactly on a boundary belong to the interval on
the right; in particular the training maximum of an *extended* strategy
lands in the right extension interval.
"""

from __future__ import annotations

import bisect
import warnings
from dataclasses import dataclass, replace

import numpy as np

KDE_GRID_SIZE = 512
KDE_GRID_PAD_BANDWIDTHS = 3.0
PROMINENCE_FRACTION = 0.10  # of the global density maximum
DEFAULT_DMIN_FRACTION = 0.01


class DegeneratePartitionWarning(UserWarning):
    """A strategy could not produce its nominal bin structure."""


@dataclass(frozen=True)
class Partition:
    """Ordered right-open interval partition of one feature component."""

    boundaries: tuple[float, ...]
    strategy: str
    extended: bool = False
    layer: int | None = None
    component: int | None = None

    def __post_init__(self):
        bounds = tuple(float(b) for b in self.boundaries)
        if any(not np.isfinite(b) for b in bounds):
            raise ValueError("boundaries must be finite")
        if any(a >= b for a, b in zip(bounds, bounds[1:])):
            raise ValueError("boundaries must be strictly increasing")
        object.__setattr__(self, "boundaries", bounds)

    @property
    def size(self) -> int:
        """Number of intervals m."""
        return len(self.boundaries) + 1

    def bounds(self, k: int) -> tuple[float, float]:
        """(lower, upper) of interval k (1-based); infinities at the ends."""
        if not 1 <= k <= self.size:
            raise IndexError(f"interval index {k} outside 1..{self.size}")
        lb = self.boundaries[k - 2] if k >= 2 else -np.inf
        ub = self.boundaries[k - 1] if k <= self.size - 1 else np.inf
        return lb, ub

    def at(self, layer: int, component: int) -> "Partition":
        return replace(self, layer=layer, component=component)


def interval_of(p: Partition, value: float) -> int:
    """1-based index of the unique interval containing ``value``."""
    value = float(value)
    if not np.isfinite(value):
        raise ValueError(f"value must be finite, got {value}")
    return bisect.bisect_right(p.boundaries, value) + 1


def elicited_combination(partitions, feature_values) -> tuple[int, ...]:
    """Component-wise interval indices of one layer's feature vector."""
    fv = np.asarray(feature_values, dtype=np.float64).ravel()
    if len(fv) != len(partitions):
        raise ValueError(f"expected {len(partitions)} feature values, got {len(fv)}")
    return tuple(interval_of(p, v) for p, v in zip(partitions, fv))


def _checked_values(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("cannot discretise an empty sample")
    if not np.all(np.isfinite(v)):
        raise ValueError("sample contains non-finite values")
    return v


def _degenerate(value: float, extended: bool, strategy: str, why: str) -> Partition:
    warnings.warn(f"degenerate partition ({why})", DegeneratePartitionWarning,
                  stacklevel=3)
    bounds = (value,) if extended else ()
    return Partition(boundaries=bounds, strategy=strategy, extended=extended)


def discretise_kbins_uniform(values, k: int, extended: bool = False) -> Partition:
    """k equal-width bins spanning [min, max] of the sample.

    Extended partitions additionally use min and max themselves as
    boundaries, so the two open end intervals hold no training value
    (except the exact maximum, which the right-open convention puts in
    the right extension).
    """
    if k < 1:
        raise ValueError(f"bin count must be >= 1, got {k}")
    v = _checked_values(values)
    lo, hi = float(v.min()), float(v.max())
    if lo == hi:
        return _degenerate(lo, extended, "uniform", "all values identical")
    interior = np.linspace(lo, hi, k + 1)[1:-1]
    bounds = np.concatenate(([lo], interior, [hi])) if extended else interior
    return Partition(boundaries=tuple(np.unique(bounds)), strategy="uniform",
                     extended=extended)


def discretise_kbins_quantile(values, k: int, extended: bool = False) -> Partition:
    """k bins holding similar counts of training projections.

    Boundaries sit at the empirical 1/k ... (k-1)/k quantiles; duplicated
    quantiles collapse (the partition may end up with fewer bins).
    """
    if k < 1:
        raise ValueError(f"bin count must be >= 1, got {k}")
    v = _checked_values(values)
    lo, hi = float(v.min()), float(v.max())
    if lo == hi:
        return _degenerate(lo, extended, "quantile", "all values identical")
    qs = np.quantile(v, np.arange(1, k) / k)
    interior = np.unique(qs)
    # quantiles equal to the extremes carry no information under the
    # right-open convention; extension re-adds the extremes when asked
    interior = interior[(interior > lo) & (interior < hi)]
    if len(interior) < k - 1:
        warnings.warn(
            f"quantile collapse: {k - 1} requested boundaries, {len(interior)} distinct",
            DegeneratePartitionWarning, stacklevel=2)
    bounds = np.concatenate(([lo], interior, [hi])) if extended else interior
    return Partition(boundaries=tuple(np.unique(bounds)), strategy="quantile",
                     extended=extended)


def silverman_bandwidth(v: np.ndarray) -> float:
    n = v.size
    sd = float(v.std())
    q75, q25 = np.percentile(v, [75, 25])
    iqr = float(q75 - q25)
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    return 0.9 * spread * n ** (-0.2)


def kde_on_grid(v: np.ndarray, bandwidth: float, grid_size: int = KDE_GRID_SIZE):
    """Gaussian-kernel density estimate on a fixed grid spanning the data."""
    lo, hi = float(v.min()), float(v.max())
    pad = KDE_GRID_PAD_BANDWIDTHS * bandwidth
    grid = np.linspace(lo - pad, hi + pad, grid_size)
    z = (grid[:, None] - v[None, :]) / bandwidth
    dens = np.exp(-0.5 * z * z).sum(axis=1) / (v.size * bandwidth * np.sqrt(2 * np.pi))
    return grid, dens


def discretise_density(values, d_min: float | None = None,
                       bandwidth: float | None = None) -> Partition:
    """Boundaries where the estimated density crosses d_min, plus prominent
    local minima above d_min.

    d_min defaults to 1% of the global density maximum.  Falls back to a
    1-bin-uniform-extended partition (with a warning) when no boundary
    can be derived, e.g. when the threshold exceeds the whole density.
    """
    v = _checked_values(values)
    if bandwidth is not None and bandwidth <= 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    if d_min is not None and d_min <= 0:
        raise ValueError(f"d_min must be positive, got {d_min}")
    h = bandwidth if bandwidth is not None else silverman_bandwidth(v)
    if h <= 0:
        return _degenerate(float(v[0]), True, "kde", "zero bandwidth")

    grid, dens = kde_on_grid(v, h)
    gmax = float(dens.max())
    thr = d_min if d_min is not None else DEFAULT_DMIN_FRACTION * gmax

    bounds: list[float] = []
    # (i) threshold crossings, located by linear interpolation between the
    # two flanking grid points
    s = dens - thr
    for i in range(len(grid) - 1):
        if s[i] == 0.0 or s[i] * s[i + 1] >= 0.0:
            continue
        frac = s[i] / (s[i] - s[i + 1])
        bounds.append(float(grid[i] + frac * (grid[i + 1] - grid[i])))
    # (ii) prominent local minima above the threshold
    for i in range(1, len(grid) - 1):
        if not (dens[i] < dens[i - 1] and dens[i] <= dens[i + 1]):
            continue
        if dens[i] <= thr:
            continue
        lift = PROMINENCE_FRACTION * gmax
        if dens[:i].max() >= dens[i] + lift and dens[i + 1:].max() >= dens[i] + lift:
            bounds.append(float(grid[i]))

    if not bounds:
        lo, hi = float(v.min()), float(v.max())
        if lo == hi:
            return _degenerate(lo, True, "kde", "all density below threshold")
        warnings.warn("all density below threshold; falling back to 1-bin-uniform-extended",
                      DegeneratePartitionWarning, stacklevel=2)
        return Partition(boundaries=(lo, hi), strategy="kde", extended=True)
    return Partition(boundaries=tuple(sorted(set(bounds))), strategy="kde",
                     extended=False)
