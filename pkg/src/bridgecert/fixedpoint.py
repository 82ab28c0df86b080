"""Curvature transfer map and the fixed point of the two-marginal recursion.

Given a time horizon T, an upper curvature bound beta on the source
potential and a target-side floor parameterized by (alpha_nu, L), the
transfer map

    F(alpha, s) = beta s + s / (T (1 + T alpha)) + sqrt(s) f_L(sqrt(s)) / (1 + T alpha)^2

converts a semiconvexity level alpha of the dual potential into a
semiconcavity bound for its conjugate; F(alpha, .) is increasing and concave,
so its inverse G(alpha, u) = inf{s >= 0 : F(alpha, s) >= u} is well defined
and computed here by monotone bisection.  The dual potential's own
semiconvexity level is the smallest solution of

    alpha = alpha_nu - 1/T + G(alpha, 2) / (2 T^2),

reached by upward iteration from alpha_nu - 1/T; the iterates are
nondecreasing and bounded since G(., 2) <= 2 / beta.  An explicit algebraic
bracket for any solution is available when alpha_nu > 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .validation import ConvergenceError, check_finite, check_nonnegative, check_positive
from .weakconvex import tanh_perturbation, tanh_perturbation_over_r

__all__ = [
    "ProblemParams",
    "FixedPointSolution",
    "transfer_map",
    "transfer_inverse",
    "solve_fixed_point",
    "fixed_point_bracket",
    "curvature_envelopes",
]


@dataclass(frozen=True)
class ProblemParams:
    """Scalar inputs of the curvature recursion.

    T       : diffusion horizon (> 0)
    beta_mu : uniform upper bound on the source potential's curvature (> 0)
    alpha_nu: long-range curvature level of the target potential
    L       : short-range dip constant of the target potential (>= 0)
    C_mu    : log-Sobolev constant of the source marginal, if needed downstream
    """

    T: float
    beta_mu: float
    alpha_nu: float
    L: float = 0.0
    C_mu: float | None = None

    def __post_init__(self) -> None:
        check_positive("T", self.T)
        check_positive("beta_mu", self.beta_mu)
        check_finite("alpha_nu", self.alpha_nu)
        check_nonnegative("L", self.L)
        if self.C_mu is not None:
            check_positive("C_mu", self.C_mu)


@dataclass(frozen=True)
class FixedPointSolution:
    """Smallest fixed point of the curvature recursion plus its iterate trace."""

    alpha_star: float
    iterates: np.ndarray
    residual: float
    bracket: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if self.bracket is not None:
            lo, hi = self.bracket
            if not (lo - 1e-9 <= self.alpha_star <= hi + 1e-9):
                raise ValueError("fixed point escaped its algebraic bracket")


def _check_alpha(p: ProblemParams, alpha: float) -> float:
    alpha = check_finite("alpha", alpha)
    if alpha <= -1.0 / p.T:
        raise ValueError(f"alpha must exceed -1/T = {-1.0 / p.T}, got {alpha}")
    return alpha


def transfer_map(p: ProblemParams, alpha: float, s):
    """F(alpha, s); increasing and concave in s, vanishing at s = 0."""
    alpha = _check_alpha(p, alpha)
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("s must be nonnegative")
    c = 1.0 + p.T * alpha
    root = np.sqrt(s)
    f, _, _ = tanh_perturbation(p.L, root)
    out = p.beta_mu * s + s / (p.T * c) + root * f / c**2
    return out if out.ndim else float(out)


def transfer_inverse(
    p: ProblemParams,
    alpha: float,
    u: float,
    rel_tol: float = 1e-12,
    max_iter: int = 200,
) -> float:
    """G(alpha, u): the s with F(alpha, s) = u, by bisection on the increasing map.

    F(alpha, s) >= beta_mu * s makes [0, u / beta_mu] a valid starting
    bracket for every admissible alpha, which also proves the uniform bound
    G(alpha, u) <= u / beta_mu.
    """
    alpha = _check_alpha(p, alpha)
    u = float(u)
    if not np.isfinite(u) or u <= 0:
        raise ValueError(f"u must be positive, got {u}")

    lo, hi = 0.0, u / p.beta_mu
    for _ in range(max_iter):
        if hi - lo <= rel_tol * max(hi, 1.0):
            break
        mid = 0.5 * (lo + hi)
        if transfer_map(p, alpha, mid) >= u:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def solve_fixed_point(
    p: ProblemParams,
    rel_tol: float = 1e-12,
    max_iter: int = 10_000,
) -> FixedPointSolution:
    """Smallest solution of alpha = alpha_nu - 1/T + G(alpha, 2) / (2 T^2).

    Iterates upward from alpha_nu - 1/T, which requires alpha_nu > 0 so that
    the whole trajectory stays inside the admissible half line alpha > -1/T.
    The sequence is nondecreasing and bounded above by
    alpha_nu - 1/T + 1/(T^2 beta_mu), hence convergent; the returned residual
    is the absolute defect of the limit in the fixed point equation.
    """
    if p.alpha_nu <= 0:
        raise ValueError(
            "the upward iteration needs alpha_nu > 0 so its start exceeds -1/T"
        )
    base = p.alpha_nu - 1.0 / p.T
    alpha = base
    iterates = [alpha]
    for _ in range(max_iter):
        nxt = base + transfer_inverse(p, alpha, 2.0) / (2.0 * p.T**2)
        iterates.append(nxt)
        if abs(nxt - alpha) < rel_tol * max(1.0, abs(alpha)):
            alpha = nxt
            break
        alpha = nxt
    else:
        raise ConvergenceError(
            f"fixed point iteration did not settle in {max_iter} steps",
            trace=iterates,
        )

    residual = abs(alpha - (base + transfer_inverse(p, alpha, 2.0) / (2.0 * p.T**2)))
    bracket = fixed_point_bracket(p)
    return FixedPointSolution(
        alpha_star=alpha,
        iterates=np.asarray(iterates),
        residual=residual,
        bracket=bracket,
    )


def fixed_point_bracket(p: ProblemParams) -> tuple[float, float]:
    """Closed-form lower/upper bounds containing every fixed point.

    Derived by sandwiching F between its linear minorant and majorant and
    solving the resulting quadratics; both expressions divide by alpha_nu, so
    the bracket is only available for alpha_nu > 0.  The two ends coincide
    when L = 0.
    """
    if p.alpha_nu <= 0:
        raise ValueError("the algebraic bracket requires alpha_nu > 0")
    T, beta, an, L = p.T, p.beta_mu, p.alpha_nu, p.L
    ratio = L / (T**2 * beta * an)
    lower = (
        0.5 * an
        - 1.0 / T
        - 0.5 * ratio
        + 0.5 * np.sqrt((an + ratio) ** 2 + 4.0 * an / (T**2 * beta))
    )
    upper = 0.5 * an - 1.0 / T + 0.5 * np.sqrt(an**2 + 4.0 * an / (T**2 * beta))
    return float(lower), float(upper)


@dataclass(frozen=True)
class _EnvelopePair:
    """Callable envelopes produced by :func:`curvature_envelopes`."""

    lower: object = field(repr=False)
    upper: object = field(repr=False)

    def __iter__(self):
        return iter((self.lower, self.upper))


def curvature_envelopes(p: ProblemParams, alpha_star: float) -> _EnvelopePair:
    """Distance-indexed envelopes implied by a semiconvexity level alpha_star.

    lower(r) = alpha_star - f_L(r)/r bounds the dual potential's
    semiconvexity profile from below; upper(r) = beta_mu - alpha_star/(1 + T
    alpha_star) + f_L(r) / (r (1 + T alpha_star)^2) bounds the conjugate
    potential's semiconcavity profile from above, and coincides with
    F(alpha_star, r^2)/r^2 - 1/T.
    """
    alpha_star = _check_alpha(p, alpha_star)
    c = 1.0 + p.T * alpha_star

    def lower(r):
        return alpha_star - tanh_perturbation_over_r(p.L, r)

    def upper(r):
        return p.beta_mu - alpha_star / c + tanh_perturbation_over_r(p.L, r) / c**2

    return _EnvelopePair(lower=lower, upper=upper)
