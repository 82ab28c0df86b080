"""Weak convexity profiles measured through gradient difference quotients.

For a potential U with gradient g, the integrated curvature seen between two
points x != y is the difference quotient (g(x) - g(y)) / (x - y).  Collecting
the per-distance infimum and supremum of that quotient gives a lower
(semiconvexity) and an upper (semiconcavity) envelope of U as a function of
the pair distance r.

The reference shape for admissible dips below plain alpha-convexity is the
saturating tanh perturbation

    f(r) = 2 sqrt(L) tanh(r sqrt(L) / 2),   L >= 0,

the solution of f f' + 2 f'' = 0 with f(0) = 0, f'(0) = L.  A lower envelope
of the form  r -> alpha - f(r)/r  tolerates a curvature dip of depth L at
short range while guaranteeing level alpha at long range.  Flat-bottomed
piecewise profiles (level alpha outside radius R, dip depth L' inside) are
converted to the smallest tanh dip constant that dominates them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grids import GridFunction
from .validation import check_finite, check_nonnegative

__all__ = [
    "ConvexityProfile",
    "PiecewiseProfile",
    "PairwiseEnvelope",
    "EnvelopeReport",
    "tanh_perturbation",
    "tanh_perturbation_over_r",
    "pairwise_envelope",
    "smooth_dip_constant",
    "piecewise_floor",
    "certify_envelope",
]

# tanh(x) is within one ulp of +/-1 beyond this point; saturate explicitly.
_TANH_SATURATION = 20.0


@dataclass(frozen=True)
class ConvexityProfile:
    """Envelope parameters (alpha, L) for the bound r -> alpha - f_L(r)/r."""

    alpha: float
    L: float

    def __post_init__(self) -> None:
        check_finite("alpha", self.alpha)
        check_nonnegative("L", self.L)

    def lower_bound(self, r) -> np.ndarray:
        """Evaluate alpha - f_L(r)/r (continuous value alpha - L at r = 0)."""
        return self.alpha - tanh_perturbation_over_r(self.L, r)


@dataclass(frozen=True)
class PiecewiseProfile:
    """Flat-bottomed curvature floor: alpha for r > R, alpha - Lprime for r <= R."""

    alpha: float
    Lprime: float
    R: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        check_nonnegative("Lprime", self.Lprime)
        check_nonnegative("R", self.R)


@dataclass(frozen=True)
class PairwiseEnvelope:
    """Distance-bucketed extrema of gradient difference quotients.

    ``distances`` stores, per bucket, the largest pair distance that fell into
    the bucket; with the default bucket width of one grid spacing every bucket
    holds a single exact distance.  ``counts`` records how many grid pairs
    contributed to each bucket.
    """

    distances: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    counts: np.ndarray

    def __post_init__(self) -> None:
        d = np.asarray(self.distances, dtype=float)
        if d.size == 0:
            raise ValueError("envelope needs at least one distance bucket")
        if np.any(d <= 0) or np.any(np.diff(d) <= 0):
            raise ValueError("distances must be positive and strictly increasing")
        if np.any(self.lower > self.upper):
            raise ValueError("lower envelope exceeds upper envelope")


@dataclass(frozen=True)
class EnvelopeReport:
    """Outcome of checking a measured envelope against a profile bound."""

    side: str
    passed: bool
    worst_margin: float
    worst_distance: float
    tol: float
    n_buckets: int
    violations: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "side": self.side,
            "passed": self.passed,
            "worst_margin": self.worst_margin,
            "worst_distance": self.worst_distance,
            "tol": self.tol,
            "n_buckets": self.n_buckets,
            "violations": self.violations,
        }


def tanh_perturbation(L: float, r):
    """Value, slope and curvature of f(r) = 2 sqrt(L) tanh(r sqrt(L)/2).

    Vectorized over ``r``.  Returns the triple (f, f', f''); the identities
    f'(0) = L and f f' + 2 f'' = 0 hold exactly.  For L = 0 all three parts
    vanish identically.  Negative ``L`` or ``r`` is a domain error.
    """
    check_nonnegative("L", L)
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("r must be nonnegative")
    if L == 0.0:
        zero = np.zeros_like(r)
        return zero, zero, zero

    root = np.sqrt(L)
    arg = np.minimum(0.5 * r * root, _TANH_SATURATION)
    # sech^2 via exp(-2x) stays overflow-free for every argument.
    e2 = np.exp(-2.0 * arg)
    tanh = (1.0 - e2) / (1.0 + e2)
    sech2 = 4.0 * e2 / (1.0 + e2) ** 2
    value = 2.0 * root * tanh
    slope = L * sech2
    curvature = -L * root * tanh * sech2
    return value, slope, curvature


def tanh_perturbation_over_r(L: float, r):
    """f_L(r) / r extended continuously by its limit L at r = 0."""
    check_nonnegative("L", L)
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("r must be nonnegative")
    if L == 0.0:
        out = np.zeros_like(r)
        return out if out.ndim else float(out)

    root = np.sqrt(L)
    x = 0.5 * r * root
    small = x < 1e-4
    out = np.empty_like(r)
    # tanh(x)/x ~ 1 - x^2/3 for small x; exact ratio elsewhere.
    out[small] = L * (1.0 - x[small] ** 2 / 3.0)
    xs = np.minimum(x[~small], _TANH_SATURATION)
    out[~small] = 2.0 * root * np.tanh(xs) / r[~small]
    return out if out.ndim else float(out)


def pairwise_envelope(
    gradient: GridFunction,
    bucket_width: float | None = None,
    mask: np.ndarray | None = None,
) -> PairwiseEnvelope:
    """Bucketed min/max of (g(x_i) - g(x_j)) / (x_i - x_j) over all grid pairs.

    ``bucket_width`` defaults to one grid spacing, making buckets exact lag
    classes.  ``mask`` restricts the pairs to grid points where it is True
    (both endpoints must be inside).
    """
    grid = gradient.grid
    h = grid.h
    if bucket_width is None:
        bucket_width = h
    if bucket_width < h * (1.0 - 1e-12):
        raise ValueError("bucket_width must be at least the grid spacing")

    values = gradient.values
    if mask is None:
        mask = np.ones(grid.n, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (grid.n,):
            raise ValueError("mask shape must match the grid")
    if int(mask.sum()) < 2:
        raise ValueError("need at least two grid points to form pairs")

    idx = np.flatnonzero(mask)
    lo_idx, hi_idx = idx[0], idx[-1]
    max_lag = hi_idx - lo_idx

    n_buckets = int(np.ceil(max_lag * h / bucket_width - 1e-12))
    lower = np.full(n_buckets, np.inf)
    upper = np.full(n_buckets, -np.inf)
    dist = np.zeros(n_buckets)
    counts = np.zeros(n_buckets, dtype=int)

    for lag in range(1, max_lag + 1):
        pair_ok = mask[:-lag] & mask[lag:]
        if not pair_ok.any():
            continue
        dq = (values[lag:] - values[:-lag]) / (lag * h)
        dq = dq[pair_ok]
        r = lag * h
        b = int(np.ceil(r / bucket_width - 1e-12)) - 1
        lower[b] = min(lower[b], float(dq.min()))
        upper[b] = max(upper[b], float(dq.max()))
        dist[b] = max(dist[b], r)
        counts[b] += dq.size

    occupied = counts > 0
    return PairwiseEnvelope(
        distances=dist[occupied],
        lower=lower[occupied],
        upper=upper[occupied],
        counts=counts[occupied],
    )


def piecewise_floor(profile: PiecewiseProfile, r):
    """Evaluate the flat-bottomed floor of ``profile`` at distances ``r``."""
    r = np.asarray(r, dtype=float)
    return np.where(r > profile.R, profile.alpha, profile.alpha - profile.Lprime)


def smooth_dip_constant(
    profile: PiecewiseProfile,
    rel_tol: float = 1e-12,
    max_iter: int = 200,
) -> float:
    """Smallest L with f_L(R)/R >= Lprime, i.e. the tanh dip dominating ``profile``.

    The map L -> f_L(R)/R is continuous and strictly increasing from 0 to
    infinity, so the threshold is found by monotone bisection; the upper end
    of the final bracket is returned, guaranteeing the inequality.  A zero dip
    (Lprime = 0) or an empty dip region (R = 0, where the short-range branch
    constrains no positive distance) needs no perturbation and maps to 0.
    """
    if profile.Lprime == 0.0 or profile.R == 0.0:
        return 0.0

    R, target = profile.R, profile.Lprime

    def ratio(L: float) -> float:
        return float(tanh_perturbation_over_r(L, np.asarray(R)))

    hi = max(target, 1.0)
    for _ in range(max_iter):
        if ratio(hi) >= target:
            break
        hi *= 2.0
    else:  # pragma: no cover - ratio(L) -> infinity in L, cannot trigger
        raise ValueError("no finite dip constant dominates the profile")

    lo = 0.0
    for _ in range(max_iter):
        if hi - lo <= rel_tol * hi:
            break
        mid = 0.5 * (lo + hi)
        if ratio(mid) >= target:
            hi = mid
        else:
            lo = mid
    return hi


def certify_envelope(
    env: PairwiseEnvelope,
    profile: ConvexityProfile,
    side: str,
    offset: float = 0.0,
    tol: float = 0.0,
    f_scale: float = 1.0,
) -> EnvelopeReport:
    """Check a measured envelope against a profile bound, bucket by bucket.

    side="lower": flag buckets where env.lower < alpha - f_scale * f_L(r)/r - tol.
    side="upper": flag buckets where env.upper > offset + f_scale * f_L(r)/r + tol
    (the profile's alpha is unused on the upper side; the additive level comes
    from ``offset``).  ``f_scale`` scales the tanh term, which is needed when
    the bound carries a contraction factor that cannot be folded into L.

    Margins are signed distances to the bound; a bucket passes when its margin
    is >= -tol, and the report carries the worst margin over all buckets.
    """
    check_nonnegative("tol", tol)
    ratio = f_scale * tanh_perturbation_over_r(profile.L, env.distances)
    if side == "lower":
        bound = profile.alpha - ratio
        margins = env.lower - bound
        measured = env.lower
    elif side == "upper":
        bound = offset + ratio
        margins = bound - env.upper
        measured = env.upper
    else:
        raise ValueError(f"side must be 'lower' or 'upper', got {side!r}")

    bad = margins < -tol
    violations = [
        {
            "distance": float(env.distances[i]),
            "measured": float(measured[i]),
            "bound": float(bound[i]),
            "margin": float(margins[i]),
        }
        for i in np.flatnonzero(bad)
    ]
    worst = int(np.argmin(margins))
    return EnvelopeReport(
        side=side,
        passed=not bool(bad.any()),
        worst_margin=float(margins[worst]),
        worst_distance=float(env.distances[worst]),
        tol=float(tol),
        n_buckets=int(env.distances.size),
        violations=violations,
    )
