"""Log-domain heat smoothing and the backward flow it solves.

The central object is the operator

    (A_tau g)(x) = -log integral (2 pi tau)^(-1/2) exp(-(x-y)^2/(2 tau) - g(y)) dy,

evaluated with trapezoid quadrature on the grid and log-sum-exp reduction, so
no exponential ever overflows.  Propagating a terminal datum g through
u(t) = A_{T-t} g yields the classical solution of the backward flow

    du/dt + (1/2) u'' - (1/2) (u')^2 = 0,   u(T) = g,

whose gradient fields drive every diffusion used elsewhere in the package.
The exact x-derivative of the discrete operator has the posterior-mean form
grad (A_tau g)(x) = (x - m(x)) / tau with m the Gaussian-weighted mean of the
grid points, which this module uses instead of differencing the output.

Kernel widths below one grid spacing cannot be resolved by the quadrature;
for tau < h^2 the operator is within discretization error of the identity and
is short-circuited to it (the trapezoid error at the crossover is already
below 1e-8 relative).

A companion Crank-Nicolson stepper solves the linear backward equation

    du/ds + (1/2) u'' - U_s' u' = 0

for a time-indexed family of drift potentials U_s, with homogeneous Neumann
walls; it is the quadrature-free route used to cross-check semigroup
inequalities.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import solve_banded
from scipy.special import logsumexp

from .grids import Grid1D, GridFunction
from .validation import PreconditionError, check_nonnegative, check_positive
from .weakconvex import (
    ConvexityProfile,
    EnvelopeReport,
    certify_envelope,
    pairwise_envelope,
)

__all__ = [
    "LogHeatOperator",
    "log_heat_apply",
    "hjb_propagate",
    "hjb_gradient",
    "InvarianceReport",
    "invariance_check",
    "SpaceTimeReport",
    "space_time_scaling_check",
    "backward_semigroup_apply",
    "backward_semigroup_sweep",
]


class LogHeatOperator:
    """Caches per-grid pair distances so repeated smoothing calls stay cheap."""

    def __init__(self, grid: Grid1D):
        self.grid = grid
        x = grid.x
        self._d2 = (x[:, None] - x[None, :]) ** 2
        self._logw = np.log(grid.weights)
        # Quadrature resolves the kernel once its std spans a grid cell.
        self.tau_floor = grid.h**2

    def _exponent(self, values: np.ndarray, tau: float) -> np.ndarray:
        return (self._logw - values)[None, :] - self._d2 / (2.0 * tau)

    def apply(self, values: np.ndarray, tau: float) -> np.ndarray:
        """-log of the Gaussian smoothing of exp(-values) at width sqrt(tau)."""
        check_positive("tau", tau)
        values = np.asarray(values, dtype=float)
        if tau < self.tau_floor:
            return values.copy()
        lse = logsumexp(self._exponent(values, tau), axis=1)
        if not np.all(np.isfinite(lse)):
            raise ValueError("all quadrature mass underflowed; datum is effectively +inf")
        return -lse + 0.5 * np.log(2.0 * np.pi * tau)

    def grad(self, values: np.ndarray, tau: float) -> np.ndarray:
        """Exact x-derivative of :meth:`apply`, (x - posterior mean) / tau."""
        check_positive("tau", tau)
        values = np.asarray(values, dtype=float)
        if tau < self.tau_floor:
            return np.gradient(values, self.grid.h, edge_order=2)
        a = self._exponent(values, tau)
        a -= a.max(axis=1, keepdims=True)
        p = np.exp(a)
        p /= p.sum(axis=1, keepdims=True)
        mean = p @ self.grid.x
        return (self.grid.x - mean) / tau


def log_heat_apply(g: GridFunction, tau: float) -> GridFunction:
    """One-shot log-domain heat smoothing of a grid function."""
    return GridFunction(g.grid, LogHeatOperator(g.grid).apply(g.values, tau))


def hjb_propagate(g: GridFunction, T: float, t: float) -> GridFunction:
    """Solution at time ``t`` of the backward flow with terminal datum ``g``."""
    check_positive("T", T)
    if not 0.0 <= t < T:
        raise ValueError(f"need 0 <= t < T, got t={t}, T={T}")
    return log_heat_apply(g, T - t)


def hjb_gradient(g: GridFunction, T: float, t: float) -> np.ndarray:
    """Gradient of the propagated solution, via the posterior-mean identity."""
    check_positive("T", T)
    if not 0.0 <= t < T:
        raise ValueError(f"need 0 <= t < T, got t={t}, T={T}")
    return LogHeatOperator(g.grid).grad(g.values, T - t)


@dataclass(frozen=True)
class InvarianceReport:
    """Per-time envelope certifications for a propagated terminal datum."""

    L: float
    T: float
    margin: float
    tol: float
    terminal: EnvelopeReport
    at_times: dict = field(default_factory=dict)
    note: str = "pairs restricted to grid points at least `margin` from the boundary"

    @property
    def passed(self) -> bool:
        return self.terminal.passed and all(r.passed for r in self.at_times.values())

    def worst_margins(self) -> dict:
        return {t: r.worst_margin for t, r in self.at_times.items()}


def invariance_check(
    g: GridFunction,
    L: float,
    T: float,
    times,
    margin: float | None = None,
    tol: float = 1e-3,
) -> InvarianceReport:
    """Certify that the dip-class membership of ``g`` survives propagation.

    First certifies the terminal datum itself (a failure there raises
    :class:`PreconditionError` rather than producing a vacuous pass), then
    checks lower(r) >= -f_L(r)/r - tol for the gradient envelope of the
    propagated solution at every requested time, using interior pairs only.
    """
    check_nonnegative("L", L)
    check_positive("T", T)
    grid = g.grid
    if margin is None:
        margin = grid.default_margin(T)
    mask = grid.interior_mask(margin)
    profile = ConvexityProfile(alpha=0.0, L=L)

    terminal_env = pairwise_envelope(GridFunction(grid, g.gradient()), mask=mask)
    terminal_report = certify_envelope(terminal_env, profile, "lower", tol=tol)
    if not terminal_report.passed:
        raise PreconditionError(
            "terminal datum is not in the requested dip class "
            f"(worst margin {terminal_report.worst_margin:.3e} at "
            f"r={terminal_report.worst_distance:.3f}); refusing a vacuous check"
        )

    op = LogHeatOperator(grid)
    at_times = {}
    for t in times:
        grad_t = op.grad(g.values, T - t) if t < T else g.gradient()
        env_t = pairwise_envelope(GridFunction(grid, grad_t), mask=mask)
        at_times[float(t)] = certify_envelope(env_t, profile, "lower", tol=tol)

    return InvarianceReport(
        L=float(L),
        T=float(T),
        margin=float(margin),
        tol=float(tol),
        terminal=terminal_report,
        at_times=at_times,
    )


@dataclass(frozen=True)
class SpaceTimeReport:
    """Deviation-from-constant of the quadratic/contraction splitting identity."""

    deviation_std: float
    deviation_max: float
    coverage: float
    margin: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.deviation_std < self.tol


def space_time_scaling_check(
    psi: GridFunction,
    alpha: float,
    T: float,
    tol: float = 1e-5,
    margin: float | None = None,
) -> SpaceTimeReport:
    """Verify the splitting of a quadratic component out of the smoothing.

    Writing psi = alpha |x|^2 / 2 + psi_hat, the smoothed potential at
    horizon T equals alpha |x|^2 / (2 (1 + T alpha)) plus the smoothing of
    psi_hat at the shorter horizon T / (1 + T alpha) evaluated at the
    contracted point x / (1 + T alpha), up to an x-independent constant.
    The report carries the standard deviation of the residual over interior
    points whose contracted argument stays on the grid.
    """
    check_positive("T", T)
    if alpha <= -1.0 / T:
        raise ValueError(f"alpha must exceed -1/T, got {alpha}")
    grid = psi.grid
    if margin is None:
        margin = grid.default_margin(T)

    c = 1.0 + T * alpha
    op = LogHeatOperator(grid)
    lhs = op.apply(psi.values, T)

    psi_hat = psi.values - 0.5 * alpha * grid.x**2
    inner = op.apply(psi_hat, T / c)
    spline = CubicSpline(grid.x, inner)

    xi = grid.x / c
    valid = grid.interior_mask(margin) & (xi >= grid.lo) & (xi <= grid.hi)
    coverage = float(valid.mean())
    if not valid.any():
        raise ValueError("no interior points with contracted argument on the grid")

    residual = lhs[valid] - 0.5 * alpha * grid.x[valid] ** 2 / c - spline(xi[valid])
    residual = residual - residual.mean()
    return SpaceTimeReport(
        deviation_std=float(np.std(residual)),
        deviation_max=float(np.max(np.abs(residual))),
        coverage=coverage,
        margin=float(margin),
        tol=float(tol),
    )


def _crank_nicolson_bands(c: np.ndarray, h: float, ds: float):
    """Banded (I -/+ ds/2 A) factors for A u = u''/2 + c u', Neumann walls."""
    n = c.size
    inv_h2 = 1.0 / h**2
    sub = 0.5 * inv_h2 - c / (2.0 * h)
    diag = np.full(n, -inv_h2)
    sup = 0.5 * inv_h2 + c / (2.0 * h)
    # Mirror ghost nodes: advection drops out at the walls.
    sup = sup.copy()
    sub = sub.copy()
    sup[0] = inv_h2
    sub[-1] = inv_h2
    return sub, diag, sup


def _apply_tridiag(sub, diag, sup, u):
    out = diag * u
    out[:-1] += sup[:-1] * u[1:]
    out[1:] += sub[1:] * u[:-1]
    return out


def backward_semigroup_sweep(
    terminal: GridFunction,
    grad_potential,
    t0: float,
    t1: float,
    steps: int,
    snapshot_times=None,
    warn_peclet: bool = True,
) -> dict:
    """Integrate the linear backward equation from ``t1`` down to ``t0``.

    ``grad_potential(s)`` must return the drift potential's gradient on the
    grid at time ``s``.  Crank-Nicolson in time with centered advection and
    homogeneous Neumann walls; the drift is evaluated at step midpoints.
    Returns ``{time: GridFunction}`` for each requested snapshot (``t0`` is
    always included).  Emits a warning when the advection cell Peclet number
    |c| h exceeds 2, the classical threshold for wiggle-free centered schemes.
    """
    if not t0 < t1:
        raise ValueError(f"need t0 < t1, got {t0}, {t1}")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    grid = terminal.grid
    ds = (t1 - t0) / steps

    wanted = {}
    if snapshot_times is not None:
        for t in snapshot_times:
            if not t0 - 1e-12 <= t <= t1 + 1e-12:
                raise ValueError(f"snapshot time {t} outside [{t0}, {t1}]")
            wanted[int(round((t1 - t) / ds))] = float(t)

    u = terminal.values.copy()
    out = {}
    if 0 in wanted:
        out[wanted[0]] = GridFunction(grid, u.copy())

    peclet_max = 0.0
    for k in range(steps):
        s_mid = t1 - (k + 0.5) * ds
        c = -np.asarray(grad_potential(s_mid), dtype=float)
        peclet_max = max(peclet_max, float(np.max(np.abs(c))) * grid.h)
        sub, diag, sup = _crank_nicolson_bands(c, grid.h, ds)
        rhs = u + 0.5 * ds * _apply_tridiag(sub, diag, sup, u)
        ab = np.zeros((3, grid.n))
        ab[0, 1:] = -0.5 * ds * sup[:-1]
        ab[1, :] = 1.0 - 0.5 * ds * diag
        ab[2, :-1] = -0.5 * ds * sub[1:]
        u = solve_banded((1, 1), ab, rhs)
        if (k + 1) in wanted:
            out[wanted[k + 1]] = GridFunction(grid, u.copy())

    if warn_peclet and peclet_max > 2.0:
        warnings.warn(
            f"advection cell Peclet number {peclet_max:.2f} > 2; refine the grid",
            RuntimeWarning,
            stacklevel=2,
        )
    out[float(t0)] = GridFunction(grid, u)
    return out


def backward_semigroup_apply(
    terminal: GridFunction,
    grad_potential,
    t0: float,
    t1: float,
    steps: int,
    warn_peclet: bool = True,
) -> GridFunction:
    """Value at ``t0`` of the backward semigroup applied to ``terminal``."""
    sweep = backward_semigroup_sweep(
        terminal, grad_potential, t0, t1, steps, warn_peclet=warn_peclet
    )
    return sweep[float(t0)]
