"""Entropic optimal transport between two grid marginals, with certification.

Marginals enter as potentials on a shared grid; the coupling that minimizes
relative entropy against the Wiener pair measure at horizon T has density
exp(-phi(x) - psi(y)) times the Gaussian kernel, where the dual potentials
(phi, psi) solve

    phi = U_mu - A_T psi,      psi = U_nu - A_T phi,

with A_T the log-domain heat smoothing of :mod:`bridgecert.heatflow`.  The
solver alternates those two updates (a Sinkhorn iteration carried out
entirely in log space), fixing the additive gauge by keeping psi mean-zero on
the interior.  After each full sweep the y-marginal of the induced coupling
is exact by construction, so convergence is monitored through the
total-variation gap of the x-marginal.

Downstream of the solve, this module materializes the coupling and its
conditional slices, exposes the convexified dual potential whose second
derivative equals the conditional variance over T, and certifies the
two-sided curvature envelopes predicted by the fixed point of
:mod:`bridgecert.fixedpoint`.

A scikit-learn style estimator (:class:`SchrodingerBridge`) wraps the solver
for pipeline composition; the functional API underneath is stateless.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator

from .fixedpoint import (
    FixedPointSolution,
    ProblemParams,
    solve_fixed_point,
    transfer_inverse,
)
from .grids import Grid1D, GridFunction
from .heatflow import LogHeatOperator
from .validation import ConvergenceError, check_positive
from .weakconvex import (
    ConvexityProfile,
    EnvelopeReport,
    PiecewiseProfile,
    certify_envelope,
    pairwise_envelope,
)

__all__ = [
    "MarginalSpec",
    "SinkhornState",
    "BridgeDensity",
    "ConditionalSlice",
    "sinkhorn_solve",
    "system_residual",
    "bridge_density",
    "conditional_distribution",
    "convex_potential_transform",
    "convex_potential_inverse",
    "HessianCovReport",
    "hessian_covariance_check",
    "PotentialEnvelopeReport",
    "certify_potential_envelopes",
    "entropic_cost",
    "SchrodingerBridge",
]


@dataclass(frozen=True)
class MarginalSpec:
    """A probability density e^(-U)/Z sampled on a grid.

    ``potential`` holds the raw (unnormalized) potential; ``density`` the
    normalized density values; ``log_norm`` the log of the trapezoid
    normalizer, so that ``potential + log_norm`` is the potential of the
    normalized density.  ``curvature`` optionally records what is known about
    the potential's curvature profile, and ``beta_upper`` a uniform upper
    curvature bound.
    """

    grid: Grid1D
    potential: GridFunction
    density: GridFunction
    log_norm: float
    curvature: ConvexityProfile | PiecewiseProfile | None = None
    beta_upper: float | None = None

    def __post_init__(self) -> None:
        if self.potential.grid != self.grid or self.density.grid != self.grid:
            raise ValueError("potential and density must live on the declared grid")
        d = self.density.values
        if np.any(d < 0):
            raise ValueError("density must be nonnegative")
        total = float(np.sum(self.grid.weights * d))
        if abs(total - 1.0) > 1e-10:
            raise ValueError(f"density must integrate to 1, got {total}")
        # Below ~1e-250 the exp/log round trip loses precision (subnormals),
        # so proportionality is only checkable on cells with genuine mass.
        pos = d > 1e-250
        gap = np.log(d[pos]) + self.potential.values[pos] + self.log_norm
        if np.max(np.abs(gap)) > 1e-8:
            raise ValueError("density is not proportional to exp(-potential)")

    @classmethod
    def from_potential(
        cls,
        grid: Grid1D,
        potential,
        curvature=None,
        beta_upper: float | None = None,
    ) -> "MarginalSpec":
        if callable(potential):
            pot = GridFunction.from_callable(grid, potential)
        elif isinstance(potential, GridFunction):
            pot = potential
        else:
            pot = GridFunction(grid, np.asarray(potential, dtype=float))
        log_norm = float(logsumexp(-pot.values + np.log(grid.weights)))
        density = GridFunction(grid, np.exp(-pot.values - log_norm))
        return cls(
            grid=grid,
            potential=pot,
            density=density,
            log_norm=log_norm,
            curvature=curvature,
            beta_upper=beta_upper,
        )

    @property
    def normalized_potential(self) -> np.ndarray:
        """Potential of the normalized density (finite even where it underflows)."""
        return self.potential.values + self.log_norm

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Inverse-CDF draws from the trapezoid-discretized density.

        The CDF is the running trapezoid integral anchored at the left edge
        (a plain cumulative sum of cell masses would shift every draw by
        half a cell).
        """
        d = self.density.values
        cdf = np.concatenate(
            [[0.0], np.cumsum(0.5 * (d[1:] + d[:-1]) * self.grid.h)]
        )
        cdf /= cdf[-1]
        u = rng.random(size)
        return np.interp(u, cdf, self.grid.x)


@dataclass(frozen=True)
class SinkhornState:
    """Converged dual potentials plus the recorded convergence trace."""

    phi: GridFunction
    psi: GridFunction
    iterations: int
    marginal_err: tuple[float, float]
    gauge: str
    history: np.ndarray
    T: float

    def __post_init__(self) -> None:
        worst = np.maximum(self.history[:, 0], self.history[:, 1])
        if np.any(np.diff(worst) > 1e-13):
            raise ValueError("recorded marginal errors must be nonincreasing")


def sinkhorn_solve(
    mu: MarginalSpec,
    nu: MarginalSpec,
    T: float,
    tol: float = 1e-9,
    max_iter: int = 500,
) -> SinkhornState:
    """Alternate the two dual updates until both coupling marginals match.

    Convergence is declared when the total-variation distance between each
    marginal of the induced coupling and its target falls below ``tol`` and
    the dual-system defect (interior sup norm, mean removed) falls below
    ``10 * tol``.  The additive gauge is fixed after every sweep by
    re-centering psi to interior mean zero (phi takes the opposite shift,
    which leaves the coupling and both equations untouched).  Raises
    :class:`ConvergenceError` carrying the error trace if ``max_iter`` sweeps
    do not suffice.
    """
    check_positive("T", T)
    check_positive("tol", tol)
    if mu.grid != nu.grid:
        raise ValueError("marginals must share one grid")
    grid = mu.grid
    op = LogHeatOperator(grid)
    margin = grid.default_margin(T)
    inner = grid.interior_mask(margin)
    logw = np.log(grid.weights)
    u_mu = mu.normalized_potential
    u_nu = nu.normalized_potential
    target_x = grid.weights * mu.density.values
    target_y = grid.weights * nu.density.values

    psi = np.zeros(grid.n)
    phi = None
    tv_y = np.inf
    history = []
    for it in range(max_iter):
        a_psi = op.apply(psi, T)
        if phi is not None:
            tv_x = 0.5 * float(np.abs(np.exp(logw - phi - a_psi) - target_x).sum())
            defect = phi - (u_mu - a_psi)
            defect = defect[inner] - defect[inner].mean()
            history.append((tv_x, tv_y))
            if tv_x < tol and tv_y < tol and np.max(np.abs(defect)) < 10.0 * tol:
                return SinkhornState(
                    phi=GridFunction(grid, phi),
                    psi=GridFunction(grid, psi),
                    iterations=it,
                    marginal_err=(tv_x, tv_y),
                    gauge="psi-interior-mean-zero",
                    history=np.asarray(history),
                    T=float(T),
                )
        phi = u_mu - a_psi
        a_phi = op.apply(phi, T)
        psi_raw = u_nu - a_phi
        shift = float(np.mean(psi_raw[inner]))
        psi = psi_raw - shift
        phi = phi + shift
        tv_y = 0.5 * float(np.abs(np.exp(logw - psi - (a_phi + shift)) - target_y).sum())

    raise ConvergenceError(
        f"marginals did not reach TV {tol:g} within {max_iter} sweeps",
        trace=history,
    )


def system_residual(
    state: SinkhornState,
    mu: MarginalSpec,
    nu: MarginalSpec,
    T: float,
    margin: float | None = None,
) -> tuple[float, float]:
    """Interior sup-norm defects of the two dual equations, after gauge alignment."""
    grid = mu.grid
    if margin is None:
        margin = grid.default_margin(T)
    mask = grid.interior_mask(margin)
    op = LogHeatOperator(grid)
    r_phi = state.phi.values - (mu.normalized_potential - op.apply(state.psi.values, T))
    r_psi = state.psi.values - (nu.normalized_potential - op.apply(state.phi.values, T))
    r_phi = r_phi[mask] - r_phi[mask].mean()
    r_psi = r_psi[mask] - r_psi[mask].mean()
    return float(np.max(np.abs(r_phi))), float(np.max(np.abs(r_psi)))


@dataclass(frozen=True)
class BridgeDensity:
    """Probability masses of the discretized coupling on the product grid.

    ``mass[i, j]`` is the mass of cell (x_i, y_j), quadrature weights
    included, so the matrix sums to 1 up to solver tolerance.
    """

    grid: Grid1D
    T: float
    mass: np.ndarray

    def __post_init__(self) -> None:
        if self.mass.shape != (self.grid.n, self.grid.n):
            raise ValueError("mass matrix must be n x n for the grid")
        if np.any(self.mass < 0):
            raise ValueError("coupling masses must be nonnegative")

    def row_mass(self) -> np.ndarray:
        return self.mass.sum(axis=1)

    def col_mass(self) -> np.ndarray:
        return self.mass.sum(axis=0)

    def total(self) -> float:
        return float(self.mass.sum())

    def correlation(self) -> float:
        """Pearson correlation of the two coordinates under the coupling."""
        m = self.mass / self.total()
        x = self.grid.x
        px, py = m.sum(axis=1), m.sum(axis=0)
        mx, my = float(px @ x), float(py @ x)
        vx = float(px @ (x - mx) ** 2)
        vy = float(py @ (x - my) ** 2)
        cov = float((x - mx) @ m @ (x - my))
        return cov / np.sqrt(vx * vy)


def bridge_density(
    state: SinkhornState,
    mu: MarginalSpec,
    nu: MarginalSpec,
    T: float,
) -> BridgeDensity:
    """Materialize the coupling masses from the dual potentials."""
    grid = mu.grid
    x = grid.x
    logw = np.log(grid.weights)
    log_mass = (
        (logw - state.phi.values)[:, None]
        + (logw - state.psi.values)[None, :]
        - (x[:, None] - x[None, :]) ** 2 / (2.0 * T)
        - 0.5 * np.log(2.0 * np.pi * T)
    )
    return BridgeDensity(grid=grid, T=float(T), mass=np.exp(log_mass))


@dataclass(frozen=True)
class ConditionalSlice:
    """Normalized conditional masses of the coupling given y = grid.x[index]."""

    y: float
    index: int
    weights: np.ndarray
    mean: float
    variance: float

    def __post_init__(self) -> None:
        total = float(self.weights.sum())
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"conditional weights must sum to 1, got {total}")
        if np.any(self.weights < 0):
            raise ValueError("conditional weights must be nonnegative")


def conditional_distribution(bridge: BridgeDensity, j: int) -> ConditionalSlice:
    """Column ``j`` of the coupling, normalized into a conditional law."""
    col = bridge.mass[:, j]
    total = col.sum()
    if total <= 0.0:
        raise ValueError(f"column {j} carries no mass")
    p = col / total
    x = bridge.grid.x
    mean = float(p @ x)
    var = float(p @ (x - mean) ** 2)
    return ConditionalSlice(
        y=float(x[j]), index=int(j), weights=p, mean=mean, variance=var
    )


def convex_potential_transform(
    psi: GridFunction, nu: MarginalSpec, T: float
) -> GridFunction:
    """Convexified dual potential T (psi - U_nu + |y|^2 / (2T)).

    Uses the potential of the normalized target density.  The result is
    convex, with second derivative equal to the conditional variance of the
    coupling divided by T.
    """
    check_positive("T", T)
    grid = nu.grid
    vals = T * (psi.values - nu.normalized_potential + grid.x**2 / (2.0 * T))
    return GridFunction(grid, vals)


def convex_potential_inverse(
    psi_bar: GridFunction, nu: MarginalSpec, T: float
) -> GridFunction:
    """Invert :func:`convex_potential_transform`."""
    check_positive("T", T)
    grid = nu.grid
    vals = nu.normalized_potential - grid.x**2 / (2.0 * T) + psi_bar.values / T
    return GridFunction(grid, vals)


@dataclass(frozen=True)
class HessianCovReport:
    """Agreement of the convexified potential's curvature with conditional variance."""

    max_rel_err: float
    n_checked: int
    tol: float
    margin: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def hessian_covariance_check(
    psi_bar: GridFunction,
    bridge: BridgeDensity,
    T: float,
    tol: float = 1e-3,
    margin: float | None = None,
    edge_cells: int = 3,
    edge_mass: float = 1e-8,
) -> HessianCovReport:
    """Compare the centered second difference of psi_bar with Var(x | y) / T.

    Only interior conditioning points are used, and among those only columns
    whose conditional mass in the outermost ``edge_cells`` cells stays below
    ``edge_mass`` (columns leaking mass off the grid would compare a
    truncated variance against an untruncated curvature).
    """
    grid = bridge.grid
    if margin is None:
        margin = grid.default_margin(T)
    mask = grid.interior_mask(margin)
    d2 = psi_bar.second_difference()

    rel_errs = []
    for j in np.flatnonzero(mask):
        col = bridge.mass[:, j]
        total = col.sum()
        if total <= 0.0:
            continue
        p = col / total
        if p[:edge_cells].sum() + p[-edge_cells:].sum() > edge_mass:
            continue
        mean = float(p @ grid.x)
        var = float(p @ (grid.x - mean) ** 2)
        rel_errs.append(abs(d2[j] - var / T) / (var / T))
    if not rel_errs:
        raise ValueError("no interior conditioning points satisfied the mass criterion")
    return HessianCovReport(
        max_rel_err=float(np.max(rel_errs)),
        n_checked=len(rel_errs),
        tol=float(tol),
        margin=float(margin),
    )


@dataclass(frozen=True)
class PotentialEnvelopeReport:
    """Certification of the two-sided curvature envelopes of the dual potentials."""

    solution: FixedPointSolution
    semiconvexity: EnvelopeReport
    semiconvexity_crude: EnvelopeReport
    semiconcavity: EnvelopeReport
    variance_floor: float
    variance_min: float
    variance_floor_ok: bool
    margin: float
    tol: float
    assumptions: tuple = (
        "source-marginal exponential moment assumed, not verified numerically",
    )

    @property
    def passed(self) -> bool:
        return (
            self.semiconvexity.passed
            and self.semiconvexity_crude.passed
            and self.semiconcavity.passed
            and self.variance_floor_ok
        )


def certify_potential_envelopes(
    state: SinkhornState,
    mu: MarginalSpec,
    nu: MarginalSpec,
    params: ProblemParams,
    tol: float = 1e-3,
    margin: float | None = None,
    bridge: BridgeDensity | None = None,
) -> PotentialEnvelopeReport:
    """Check the solved potentials against the fixed-point envelopes.

    Three envelope inequalities are certified on interior pair buckets: the
    semiconvexity floor alpha_star - f_L(r)/r for psi, the cruder floor
    alpha_nu - 1/T - f_L(r)/r, and the semiconcavity ceiling
    beta_mu - alpha_star/(1+T alpha_star) + f_L(r)/(r (1+T alpha_star)^2)
    for phi.  The conditional variance floor G(alpha_star, 2)/2 is checked on
    the same interior conditioning points.
    """
    grid = mu.grid
    T = params.T
    if margin is None:
        margin = grid.default_margin(T)
    mask = grid.interior_mask(margin)

    solution = solve_fixed_point(params)
    a_star = solution.alpha_star
    c = 1.0 + T * a_star

    env_psi = pairwise_envelope(GridFunction(grid, state.psi.gradient()), mask=mask)
    kappa_report = certify_envelope(
        env_psi, ConvexityProfile(alpha=a_star, L=params.L), "lower", tol=tol
    )
    crude_report = certify_envelope(
        env_psi,
        ConvexityProfile(alpha=params.alpha_nu - 1.0 / T, L=params.L),
        "lower",
        tol=tol,
    )

    env_phi = pairwise_envelope(GridFunction(grid, state.phi.gradient()), mask=mask)
    ell_report = certify_envelope(
        env_phi,
        ConvexityProfile(alpha=0.0, L=params.L),
        "upper",
        offset=params.beta_mu - a_star / c,
        f_scale=1.0 / c**2,
        tol=tol,
    )

    if bridge is None:
        bridge = bridge_density(state, mu, nu, T)
    floor = 0.5 * transfer_inverse(params, a_star, 2.0)
    variances = []
    for j in np.flatnonzero(mask):
        col = bridge.mass[:, j]
        total = col.sum()
        if total <= 0.0:
            continue
        p = col / total
        mean = float(p @ grid.x)
        variances.append(float(p @ (grid.x - mean) ** 2))
    var_min = float(np.min(variances))

    return PotentialEnvelopeReport(
        solution=solution,
        semiconvexity=kappa_report,
        semiconvexity_crude=crude_report,
        semiconcavity=ell_report,
        variance_floor=floor,
        variance_min=var_min,
        variance_floor_ok=bool(var_min >= floor - tol),
        margin=float(margin),
        tol=float(tol),
    )


def entropic_cost(bridge: BridgeDensity, mu: MarginalSpec, T: float) -> float:
    """Relative entropy of the coupling against mu times the heat kernel.

    Cells where the reference vanishes but the coupling does not make the
    entropy infinite; a diagnostic warning reports how many such cells were
    hit.  Zero-mass coupling cells contribute zero.
    """
    grid = bridge.grid
    x = grid.x
    logw = np.log(grid.weights)
    log_ref = (
        (logw + np.log(np.maximum(mu.density.values, 1e-300)))[:, None]
        + logw[None, :]
        - (x[:, None] - x[None, :]) ** 2 / (2.0 * T)
        - 0.5 * np.log(2.0 * np.pi * T)
    )
    ref_zero = mu.density.values[:, None] * np.ones_like(bridge.mass) <= 0.0
    m = bridge.mass
    pos = m > 0
    if np.any(pos & ref_zero):
        count = int(np.sum(pos & ref_zero))
        warnings.warn(
            f"coupling puts mass on {count} cells with zero reference mass",
            RuntimeWarning,
            stacklevel=2,
        )
        return float("inf")
    out = np.zeros_like(m)
    out[pos] = m[pos] * (np.log(m[pos]) - log_ref[pos])
    return float(out.sum())


class SchrodingerBridge(BaseEstimator):
    """Entropic coupling solver with a scikit-learn estimator surface.

    Parameters
    ----------
    T : float
        Diffusion horizon of the reference kernel.
    tol : float
        Total-variation tolerance on both coupling marginals.
    max_iter : int
        Sweep budget for the alternating dual updates.

    After :meth:`fit`, the dual potentials are available as ``phi_`` and
    ``psi_`` and the full solver state as ``state_``.
    """

    def __init__(self, T: float = 1.0, tol: float = 1e-9, max_iter: int = 500):
        self.T = T
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, mu: MarginalSpec, nu: MarginalSpec) -> "SchrodingerBridge":
        state = sinkhorn_solve(mu, nu, self.T, tol=self.tol, max_iter=self.max_iter)
        self.mu_ = mu
        self.nu_ = nu
        self.state_ = state
        self.phi_ = state.phi
        self.psi_ = state.psi
        self.n_iter_ = state.iterations
        self.marginal_err_ = state.marginal_err
        return self

    def _require_fitted(self) -> None:
        if not hasattr(self, "state_"):
            raise RuntimeError("this estimator is not fitted; call fit(mu, nu) first")

    def bridge(self) -> BridgeDensity:
        self._require_fitted()
        return bridge_density(self.state_, self.mu_, self.nu_, self.T)

    def conditional(self, j: int) -> ConditionalSlice:
        return conditional_distribution(self.bridge(), j)

    def convex_potential(self) -> GridFunction:
        self._require_fitted()
        return convex_potential_transform(self.psi_, self.nu_, self.T)

    def residual(self, margin: float | None = None) -> tuple[float, float]:
        self._require_fitted()
        return system_residual(self.state_, self.mu_, self.nu_, self.T, margin=margin)

    def certify(
        self, params: ProblemParams, tol: float = 1e-3
    ) -> PotentialEnvelopeReport:
        self._require_fitted()
        return certify_potential_envelopes(
            self.state_, self.mu_, self.nu_, params, tol=tol
        )

    def cost(self) -> float:
        self._require_fitted()
        return entropic_cost(self.bridge(), self.mu_, self.T)
