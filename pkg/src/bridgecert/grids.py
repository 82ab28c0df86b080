"""Uniform 1-D grids and grid-sampled functions.

Everything downstream (heat-kernel smoothing, Sinkhorn sweeps, envelope
estimation, PDE sweeps) operates on a shared uniform grid.  Quadrature is
trapezoidal throughout, so weights are ``h`` in the interior and ``h/2`` at
the two endpoints; differencing is second-order centered, which keeps the
spatial accuracy of every certified quantity at O(h^2).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = ["Grid1D", "GridFunction"]


@dataclass(frozen=True)
class Grid1D:
    """Uniform grid of ``n`` points on the closed interval [lo, hi]."""

    lo: float
    hi: float
    n: int

    def __post_init__(self) -> None:
        if not self.lo < self.hi:
            raise ValueError(f"need lo < hi, got [{self.lo}, {self.hi}]")
        if self.n < 16:
            raise ValueError(f"grid needs at least 16 points, got {self.n}")

    @property
    def h(self) -> float:
        return (self.hi - self.lo) / (self.n - 1)

    @cached_property
    def x(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n)

    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoid quadrature weights (sum to hi - lo)."""
        w = np.full(self.n, self.h)
        w[0] *= 0.5
        w[-1] *= 0.5
        return w

    def interior_mask(self, margin: float) -> np.ndarray:
        """Boolean mask of points at least ``margin`` away from both ends."""
        if margin < 0:
            raise ValueError("margin must be nonnegative")
        return (self.x >= self.lo + margin) & (self.x <= self.hi - margin)

    def default_margin(self, horizon: float) -> float:
        """Boundary band excluded from certification at diffusion scale ``horizon``.

        Wide enough that Gaussian tails of width sqrt(horizon) reaching past
        the cut carry negligible relative mass, never thinner than ten grid
        cells, and capped at a quarter of the interval so the interior stays
        nonempty even when the horizon outgrows the grid.
        """
        margin = max(4.0 * np.sqrt(horizon), 10.0 * self.h)
        return min(margin, 0.25 * (self.hi - self.lo))


@dataclass(frozen=True)
class GridFunction:
    """Real values sampled on a :class:`Grid1D`."""

    grid: Grid1D
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if values.shape != (self.grid.n,):
            raise ValueError(
                f"values shape {values.shape} does not match grid size {self.grid.n}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("grid function values must be finite")

    @classmethod
    def from_callable(cls, grid: Grid1D, f) -> "GridFunction":
        return cls(grid, np.asarray(f(grid.x), dtype=float))

    def gradient(self) -> np.ndarray:
        """Centered first differences; one-sided at the two boundary points."""
        return np.gradient(self.values, self.grid.h, edge_order=2)

    def second_difference(self) -> np.ndarray:
        """Centered second differences on the interior, replicated at the ends."""
        v = self.values
        h2 = self.grid.h**2
        out = np.empty_like(v)
        out[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / h2
        out[0] = out[1]
        out[-1] = out[-2]
        return out

    def interior_mean(self, margin: float) -> float:
        mask = self.grid.interior_mask(margin)
        return float(np.mean(self.values[mask]))

    def shifted(self, c: float) -> "GridFunction":
        return GridFunction(self.grid, self.values + c)
