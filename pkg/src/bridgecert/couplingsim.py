"""Monte Carlo checks built on coupling by reflection.

Two diffusions sharing one Brownian source are coupled by reflecting the
increment of the second path across the unit separation direction e:

    dB_hat = dB - 2 e <e, dB>,

which keeps dB_hat Gaussian while doubling the noise along the separation,
so the inter-path distance behaves like a Brownian motion of quadratic
variation 4t (plus a drift-gap term) until the paths meet and merge.

Three statistical certificates run on top of the Euler-Maruyama engine:

* the gradient field of a propagated potential, evaluated along its own
  characteristic SDE, has constant expectation (a martingale check);
* the exponentially weighted combination of the directional gradient gap and
  the tanh dip, exp(int f'_L(r_s) ds) (gap + f_L(r)), is nonincreasing in
  the mean whenever the terminal datum sits in the dip class (a
  supermartingale check; merged paths contribute 0);
* integrating the characteristic SDE from the source marginal reproduces the
  entropic coupling's endpoint law up to a small total-variation gap.

Paths are reproducible from the configured seed; the dt-halving study reuses
one fine noise stream for both resolutions so the reported gap isolates the
discretization bias.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .grids import GridFunction
from .heatflow import LogHeatOperator
from .schrodinger import MarginalSpec
from .validation import PreconditionError, check_positive
from .weakconvex import (
    ConvexityProfile,
    certify_envelope,
    pairwise_envelope,
    tanh_perturbation,
)

__all__ = [
    "SimConfig",
    "DiagnosticSeries",
    "TabulatedDrift",
    "hjb_drift_ladder",
    "ReflectionEnsemble",
    "simulate_reflection_pair",
    "MartingaleReport",
    "gradient_martingale_test",
    "SupermartingaleReport",
    "reflection_supermartingale_test",
    "EndpointSample",
    "EndpointTvReport",
    "sample_bridge_endpoints",
]


@dataclass(frozen=True)
class SimConfig:
    """Euler-Maruyama run configuration."""

    dt: float
    horizon: float
    n_paths: int
    seed: int
    coalesce_eps: float = 1e-4

    def __post_init__(self) -> None:
        check_positive("dt", self.dt)
        check_positive("coalesce_eps", self.coalesce_eps)
        if self.horizon < self.dt:
            raise ValueError("horizon must cover at least one step")
        if self.n_paths < 100:
            raise ValueError("need at least 100 paths for meaningful statistics")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass(frozen=True)
class DiagnosticSeries:
    """Time-indexed Monte Carlo means with standard errors."""

    times: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    label: str
    n: int

    def __post_init__(self) -> None:
        if not (len(self.times) == len(self.mean) == len(self.stderr)):
            raise ValueError("series arrays must be aligned")
        if np.any(np.asarray(self.stderr) < 0):
            raise ValueError("standard errors must be nonnegative")

    def rows(self):
        for t, m, s in zip(self.times, self.mean, self.stderr):
            yield (float(t), float(m), float(s), self.n)


class TabulatedDrift:
    """Drift field tabulated on a grid per step time, linear in space.

    ``table[k]`` holds the drift values at time ``k * dt``; lookups snap to
    the step index and interpolate along the grid.  ``bounds`` is used by the
    engines to flag paths that leave the tabulated region.
    """

    def __init__(self, grid, dt: float, table: np.ndarray):
        self.grid = grid
        self.dt = dt
        self.table = table
        self.bounds = (grid.lo, grid.hi)

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        k = int(round(t / self.dt))
        k = min(max(k, 0), self.table.shape[0] - 1)
        return np.interp(x, self.grid.x, self.table[k])


def hjb_drift_ladder(
    terminal: GridFunction, T: float, dt: float, n_steps: int
) -> TabulatedDrift:
    """Drift -grad u(t, .) of the propagated potential at each step time."""
    check_positive("T", T)
    op = LogHeatOperator(terminal.grid)
    table = np.empty((n_steps + 1, terminal.grid.n))
    for k in range(n_steps + 1):
        tau = T - k * dt
        if tau <= 0:
            table[k] = -terminal.gradient()
        else:
            table[k] = -op.grad(terminal.values, tau)
    return TabulatedDrift(terminal.grid, dt, table)


def _mean_stderr(samples: np.ndarray) -> tuple[float, float]:
    m = float(np.mean(samples))
    if samples.size < 2:
        return m, 0.0
    return m, float(np.std(samples, ddof=1) / np.sqrt(samples.size))


def _as_state(x0, n_paths: int, d: int) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim == 0:
        if d != 1:
            raise ValueError("scalar start requires d = 1")
        return np.full((n_paths, 1), float(x0))
    if x0.shape == (d,):
        return np.tile(x0, (n_paths, 1))
    if x0.shape == (n_paths, d):
        return x0.copy()
    raise ValueError(f"cannot broadcast start of shape {x0.shape} to ({n_paths}, {d})")


@dataclass(frozen=True)
class ReflectionEnsemble:
    """Ladder snapshots of a reflection-coupled pair ensemble."""

    times: np.ndarray
    r: np.ndarray  # (n_ladder, n_paths) inter-path distances
    coalesced: np.ndarray  # (n_ladder, n_paths) bool
    tau: np.ndarray  # coalescence times, nan where the pair never met
    excluded_frac: float
    qv_ratio: np.ndarray | None = None  # per-path QV / (4 min(t, tau)) at the end
    reflected_cov: tuple | None = None  # (mean dB_hat dB_hat^T / dt, stderr, count)
    direction_dot: tuple | None = None  # (mean <de, e>, stderr, count)
    gamma: np.ndarray | None = None  # (n_ladder, n_paths) decay statistic

    def coalesced_fraction(self) -> np.ndarray:
        return self.coalesced.mean(axis=1)


def simulate_reflection_pair(
    drift,
    x0,
    x0_hat,
    cfg: SimConfig,
    d: int = 1,
    record_times=None,
    dip_constant: float | None = None,
    track_qv: bool = False,
    track_reflected_cov: bool = False,
    track_direction: bool = False,
    direction_r_floor: float = 0.5,
) -> ReflectionEnsemble:
    """Euler-Maruyama reflection coupling with shared Gaussian increments.

    The second path receives the reflected increment until the pair merges,
    after which both move as one (the merge time is recorded).  Merging
    triggers when the separation drops below ``cfg.coalesce_eps`` or, in one
    dimension, when a Brownian-bridge test says the continuous separation hit
    zero inside the step; without the bridge test almost every hit would be
    stepped over.  With ``dip_constant`` set, the decay statistic
    exp(int f'(r) ds) (directional drift gap + f(r)) is recorded on the
    ladder, frozen at 0 once merged.  Runs are reproducible from ``cfg.seed``.
    """
    if d not in (1, 2, 3):
        raise ValueError("d must be 1, 2 or 3")
    rng = np.random.default_rng(cfg.seed)
    n, n_steps, dt = cfg.n_paths, cfg.n_steps, cfg.dt
    sqrt_dt = np.sqrt(dt)

    x = _as_state(x0, n, d)
    xh = _as_state(x0_hat, n, d)
    if record_times is None:
        record_times = np.linspace(0.0, cfg.horizon, 20)
    record_times = np.asarray(record_times, dtype=float)
    if np.any(record_times < 0) or np.any(record_times > cfg.horizon + 1e-12):
        raise ValueError("record times must lie within [0, horizon]")
    record_steps = {int(round(t / dt)): i for i, t in enumerate(record_times)}
    if len(record_steps) != len(record_times):
        raise ValueError("record times collide after snapping to the step grid")

    bounds = getattr(drift, "bounds", None)
    excluded = np.zeros(n, dtype=bool)
    merged = np.zeros(n, dtype=bool)
    tau = np.full(n, np.nan)

    qv = np.zeros(n) if track_qv else None
    fprime_int = np.zeros(n) if dip_constant is not None else None

    n_ladder = len(record_times)
    r_hist = np.zeros((n_ladder, n))
    merged_hist = np.zeros((n_ladder, n), dtype=bool)
    gamma_hist = np.zeros((n_ladder, n)) if dip_constant is not None else None

    cov_sum = np.zeros((d, d)) if track_reflected_cov else None
    cov_sumsq = np.zeros((d, d)) if track_reflected_cov else None
    cov_count = 0
    dot_sum = 0.0
    dot_sumsq = 0.0
    dot_count = 0
    prev_e = None

    def separation():
        return np.linalg.norm(x - xh, axis=1)

    def gamma_at(t: float, r: np.ndarray) -> np.ndarray:
        drift_gap = drift(t, x) - drift(t, xh)
        e = np.zeros_like(x)
        alive = ~merged
        e[alive] = (x[alive] - xh[alive]) / r[alive, None]
        gap = -np.einsum("ij,ij->i", drift_gap, e)
        f_val, _, _ = tanh_perturbation(dip_constant, r)
        out = np.exp(fprime_int) * (gap + f_val)
        out[merged] = 0.0
        return out

    for k in range(n_steps + 1):
        t = k * dt
        r = separation()
        if k in record_steps:
            i = record_steps[k]
            r_hist[i] = np.where(merged, 0.0, r)
            merged_hist[i] = merged
            if dip_constant is not None:
                gamma_hist[i] = gamma_at(t, np.where(merged, 0.0, r))
        if k == n_steps:
            break

        dB = rng.standard_normal((n, d)) * sqrt_dt
        alive = ~merged & ~excluded
        e = np.zeros_like(x)
        e[alive] = (x[alive] - xh[alive]) / r[alive, None]
        proj = np.einsum("ij,ij->i", e, dB)
        dB_hat = dB - 2.0 * proj[:, None] * e

        if track_reflected_cov:
            outer = np.einsum("ij,ik->ijk", dB_hat[alive], dB_hat[alive])
            cov_sum += outer.sum(axis=0)
            cov_sumsq += (outer**2).sum(axis=0)
            cov_count += int(alive.sum())
        if track_direction:
            # Rotation per step is O(dt) only while the pair stays separated;
            # below the floor the discrete direction is noise-dominated.
            if prev_e is not None:
                e_old, alive_old, r_old = prev_e
                both = (
                    alive
                    & alive_old
                    & (r >= direction_r_floor)
                    & (r_old >= direction_r_floor)
                )
                de = e[both] - e_old[both]
                dots = np.einsum("ij,ij->i", de, e_old[both])
                dot_sum += float(dots.sum())
                dot_sumsq += float((dots**2).sum())
                dot_count += dots.size
            prev_e = (e.copy(), alive.copy(), r.copy())

        if dip_constant is not None:
            _, f_slope, _ = tanh_perturbation(dip_constant, r)
            fprime_int[alive] += f_slope[alive] * dt

        sign_before = np.sign(x[:, 0] - xh[:, 0]) if d == 1 else None
        b = drift(t, x)
        bh = drift(t, xh)
        x = x + b * dt + dB
        upd = xh + bh * dt + dB_hat
        xh = np.where(merged[:, None], x, upd)

        if bounds is not None:
            lo, hi = bounds
            out = ((x < lo) | (x > hi) | (xh < lo) | (xh > hi)).any(axis=1)
            excluded |= out

        r_new = separation()
        if qv is not None:
            step_qv = (np.where(merged, 0.0, r_new) - np.where(merged, 0.0, r)) ** 2
            qv[alive] += step_qv[alive]
        newly = (~merged) & (r_new < cfg.coalesce_eps)
        if d == 1:
            # The separation diffuses with variance rate 4, so the chance the
            # continuous path hit zero inside the step is the Brownian-bridge
            # probability exp(-d_old d_new / (2 dt)); a sign flip is the
            # certain case.  The eps band alone misses almost every hit.
            d_old = sign_before * r
            d_new = x[:, 0] - xh[:, 0]
            prod = d_old * d_new
            p_hit = np.where(prod <= 0, 1.0, np.exp(-prod / (2.0 * dt)))
            hit = rng.random(n) < p_hit
            newly |= (~merged) & hit
        tau[newly] = (k + 1) * dt
        merged |= newly
        xh[merged] = x[merged]

    frac_excluded = float(excluded.mean())
    if frac_excluded >= 1e-3:
        raise RuntimeError(
            f"{frac_excluded:.2%} of paths left the drift table; refine the grid"
        )
    keep = ~excluded
    qv_ratio = None
    if track_qv and qv is not None:
        t_end = np.where(np.isnan(tau), cfg.horizon, tau)
        qv_ratio = (qv / (4.0 * np.maximum(t_end, cfg.dt)))[keep]

    reflected_cov = None
    if track_reflected_cov and cov_count:
        mean = cov_sum / cov_count
        var = cov_sumsq / cov_count - mean**2
        reflected_cov = (mean / cfg.dt, np.sqrt(var / cov_count) / cfg.dt, cov_count)

    direction_dot = None
    if track_direction and dot_count:
        m = dot_sum / dot_count
        v = dot_sumsq / dot_count - m**2
        direction_dot = (m, float(np.sqrt(max(v, 0.0) / dot_count)), dot_count)

    return ReflectionEnsemble(
        times=record_times,
        r=r_hist[:, keep],
        coalesced=merged_hist[:, keep],
        tau=tau[keep],
        excluded_frac=frac_excluded,
        qv_ratio=qv_ratio,
        reflected_cov=reflected_cov,
        direction_dot=direction_dot,
        gamma=gamma_hist[:, keep] if gamma_hist is not None else None,
    )


@dataclass(frozen=True)
class MartingaleReport:
    """Flatness of a time ladder of means against its initial value."""

    series: DiagnosticSeries
    z_scores: np.ndarray
    threshold: float

    @property
    def passed(self) -> bool:
        return bool(np.all(self.z_scores <= self.threshold))


def gradient_martingale_test(
    psi: GridFunction,
    T: float,
    cfg: SimConfig,
    init=0.0,
    n_ladder: int = 21,
    drift: TabulatedDrift | None = None,
) -> MartingaleReport:
    """Estimate the mean propagated gradient along its own characteristics.

    Simulates dX = -grad u(t, X) dt + dB for the potential propagated from
    ``psi`` and records grad u(t, X_t) on a time ladder.  The paired
    difference against the t = 0 value should stay within three standard
    errors at every ladder time.  ``init`` may be a scalar start, an array of
    starts, or a :class:`~bridgecert.schrodinger.MarginalSpec` to sample.
    """
    if cfg.horizon >= T:
        raise ValueError("horizon must stay strictly below the terminal time")
    rng = np.random.default_rng(cfg.seed)
    n, n_steps, dt = cfg.n_paths, cfg.n_steps, cfg.dt
    if drift is None:
        drift = hjb_drift_ladder(psi, T, dt, n_steps)

    if isinstance(init, MarginalSpec):
        x = init.sample(rng, n)
    else:
        x = _as_state(init, n, 1)[:, 0]

    ladder = np.linspace(0.0, cfg.horizon, n_ladder)
    record_steps = {int(round(t / dt)): i for i, t in enumerate(ladder)}
    stats = np.zeros((n_ladder, n))
    excluded = np.zeros(n, dtype=bool)
    lo, hi = drift.bounds

    sqrt_dt = np.sqrt(dt)
    for k in range(n_steps + 1):
        if k in record_steps:
            stats[record_steps[k]] = -drift(k * dt, x)
        if k == n_steps:
            break
        x = x + drift(k * dt, x) * dt + rng.standard_normal(n) * sqrt_dt
        excluded |= (x < lo) | (x > hi)

    frac = float(excluded.mean())
    if frac >= 1e-3:
        raise RuntimeError(f"{frac:.2%} of paths left the drift table; refine the grid")
    stats = stats[:, ~excluded]

    means = stats.mean(axis=1)
    errs = stats.std(axis=1, ddof=1) / np.sqrt(stats.shape[1])
    z = np.zeros(n_ladder)
    for i in range(1, n_ladder):
        diff = stats[i] - stats[0]
        m, se = _mean_stderr(diff)
        # Absolute floor keeps degenerate (numerically zero) series from
        # producing noise-over-noise ratios.
        z[i] = abs(m) / max(se, 1e-12)

    series = DiagnosticSeries(
        times=ladder,
        mean=means,
        stderr=errs,
        label="mean propagated gradient along characteristics",
        n=stats.shape[1],
    )
    return MartingaleReport(series=series, z_scores=z, threshold=3.0)


@dataclass(frozen=True)
class SupermartingaleReport:
    """Monotone decay of the reflected-pair statistic, with a dt-halving gap.

    ``increment_z`` normalizes each ladder rise by the standard error of the
    ladder mean itself (the gating statistic); ``paired_z`` normalizes by the
    much smaller paired-difference error and is reported as a sharper
    diagnostic only, since at the martingale boundary it fluctuates at the
    unit scale by construction.
    """

    series: DiagnosticSeries
    increment_z: np.ndarray
    paired_z: np.ndarray
    threshold: float
    gamma0: float
    halving_gap: float | None = None
    halving_gap_limit: float | None = None

    @property
    def monotone(self) -> bool:
        return bool(np.all(self.increment_z <= self.threshold))

    @property
    def passed(self) -> bool:
        ok = self.monotone and self.gamma0 >= -1e-12
        if self.halving_gap is not None:
            ok = ok and self.halving_gap <= self.halving_gap_limit
        return ok


def reflection_supermartingale_test(
    g: GridFunction,
    L: float,
    T: float,
    x0: float,
    x0_hat: float,
    cfg: SimConfig,
    n_ladder: int = 20,
    margin: float | None = None,
    precheck_tol: float = 1e-3,
    halving: bool = False,
) -> SupermartingaleReport:
    """Check mean decay of the weighted gap statistic along coupled pairs.

    The terminal datum must certify into the dip class first (otherwise the
    statistic has no reason to decay and the input is rejected).  Pass
    criterion: every rise of the ladder means stays within two standard
    errors of the ladder mean, and the t = 0 value is nonnegative.  With
    ``halving=True`` the run is repeated at dt/2 reusing the same fine noise,
    and the terminal-mean gap must stay below one standard error.
    """
    grid = g.grid
    if margin is None:
        margin = grid.default_margin(T)
    mask = grid.interior_mask(margin)
    env = pairwise_envelope(GridFunction(grid, g.gradient()), mask=mask)
    pre = certify_envelope(env, ConvexityProfile(alpha=0.0, L=L), "lower", tol=precheck_tol)
    if not pre.passed:
        raise PreconditionError(
            "terminal datum fails the dip-class certification "
            f"(worst margin {pre.worst_margin:.3e}); decay test not applicable"
        )

    ladder = np.linspace(0.0, cfg.horizon, n_ladder)
    fine_drift = None
    if halving:
        # Build the half-step ladder once; its even rows are the full-step one.
        fine_drift = hjb_drift_ladder(g, T, cfg.dt / 2.0, 2 * cfg.n_steps)
        drift = TabulatedDrift(grid, cfg.dt, fine_drift.table[::2])
    else:
        drift = hjb_drift_ladder(g, T, cfg.dt, cfg.n_steps)
    ensemble = simulate_reflection_pair(
        drift,
        x0,
        x0_hat,
        cfg,
        d=1,
        record_times=ladder,
        dip_constant=L,
    )
    gamma = ensemble.gamma
    means = gamma.mean(axis=1)
    errs = gamma.std(axis=1, ddof=1) / np.sqrt(gamma.shape[1])

    z = np.zeros(n_ladder - 1)
    z_paired = np.zeros(n_ladder - 1)
    for i in range(n_ladder - 1):
        inc = gamma[i + 1] - gamma[i]
        m, se = _mean_stderr(inc)
        z[i] = m / max(errs[i + 1], 1e-12)
        z_paired[i] = m / max(se, 1e-12)

    gap = gap_limit = None
    if halving:
        fine_cfg = SimConfig(
            dt=cfg.dt / 2.0,
            horizon=cfg.horizon,
            n_paths=cfg.n_paths,
            seed=cfg.seed,
            coalesce_eps=cfg.coalesce_eps,
        )
        coarse_term, fine_term = _paired_resolution_terminals(
            drift, fine_drift, L, x0, x0_hat, cfg, fine_cfg
        )
        gap = abs(float(coarse_term.mean() - fine_term.mean()))
        gap_limit = float(coarse_term.std(ddof=1) / np.sqrt(coarse_term.size))

    series = DiagnosticSeries(
        times=ladder,
        mean=means,
        stderr=errs,
        label="weighted directional gap statistic",
        n=gamma.shape[1],
    )
    return SupermartingaleReport(
        series=series,
        increment_z=z,
        paired_z=z_paired,
        threshold=2.0,
        gamma0=float(means[0]),
        halving_gap=gap,
        halving_gap_limit=gap_limit,
    )


def _paired_resolution_terminals(
    drift_coarse: TabulatedDrift,
    drift_fine: TabulatedDrift,
    L: float,
    x0: float,
    x0_hat: float,
    cfg: SimConfig,
    fine_cfg: SimConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Terminal decay statistics at dt and dt/2 driven by one noise stream.

    The fine run consumes two increments per coarse step; the coarse run uses
    their sum, so both resolutions see the same Brownian path and the
    difference of the terminal means estimates pure discretization bias.
    """
    rng = np.random.default_rng(fine_cfg.seed)
    n = cfg.n_paths
    dt_c, dt_f = cfg.dt, fine_cfg.dt
    sqrt_f = np.sqrt(dt_f)

    states = {}
    for tag, dt in (("c", dt_c), ("f", dt_f)):
        states[tag] = {
            "x": np.full(n, float(x0)),
            "xh": np.full(n, float(x0_hat)),
            "merged": np.zeros(n, dtype=bool),
            "fint": np.zeros(n),
            "dt": dt,
        }

    def advance(tag, drift, t, dB, u_hit):
        s = states[tag]
        alive = ~s["merged"]
        d_old = s["x"] - s["xh"]
        r = np.abs(d_old)
        e = np.sign(d_old)
        _, f_slope, _ = tanh_perturbation(L, r)
        s["fint"][alive] += f_slope[alive] * s["dt"]
        dB_hat = dB - 2.0 * e * dB * e  # = -dB on alive 1-D pairs
        b = drift(t, s["x"])
        bh = drift(t, s["xh"])
        s["x"] = s["x"] + b * s["dt"] + dB
        upd = s["xh"] + bh * s["dt"] + dB_hat
        s["xh"] = np.where(s["merged"], s["x"], upd)
        d_new = s["x"] - s["xh"]
        prod = d_old * d_new
        p_hit = np.where(prod <= 0, 1.0, np.exp(-prod / (2.0 * s["dt"])))
        newly = (~s["merged"]) & (
            (np.abs(d_new) < cfg.coalesce_eps) | (u_hit < p_hit)
        )
        s["merged"] |= newly
        s["xh"][s["merged"]] = s["x"][s["merged"]]

    n_coarse = cfg.n_steps
    for k in range(n_coarse):
        dB1 = rng.standard_normal(n) * sqrt_f
        dB2 = rng.standard_normal(n) * sqrt_f
        u1 = rng.random(n)
        u2 = rng.random(n)
        advance("f", drift_fine, (2 * k) * dt_f, dB1, u1)
        advance("f", drift_fine, (2 * k + 1) * dt_f, dB2, u2)
        advance("c", drift_coarse, k * dt_c, dB1 + dB2, u1)

    out = []
    for tag, drift, T_eff in (("c", drift_coarse, n_coarse * dt_c), ("f", drift_fine, n_coarse * dt_c)):
        s = states[tag]
        r = np.abs(s["x"] - s["xh"])
        e = np.sign(s["x"] - s["xh"])
        gap = -(drift(T_eff, s["x"]) - drift(T_eff, s["xh"])) * e
        f_val, _, _ = tanh_perturbation(L, r)
        term = np.exp(s["fint"]) * (gap + f_val)
        term[s["merged"]] = 0.0
        out.append(term)
    return out[0], out[1]


@dataclass(frozen=True)
class EndpointSample:
    """Start and end positions of characteristic SDE paths."""

    x_start: np.ndarray
    x_end: np.ndarray
    excluded_frac: float


@dataclass(frozen=True)
class EndpointTvReport:
    """Histogram-vs-density comparison of the sampled endpoint law.

    ``histogram`` and ``density`` hold the two normalized bin-mass grids the
    total-variation distance was computed from.
    """

    tv: float
    bins: int
    n_paths: int
    histogram: np.ndarray = field(repr=False, default=None)
    density: np.ndarray = field(repr=False, default=None)


def sample_bridge_endpoints(
    mu: MarginalSpec,
    psi: GridFunction,
    T: float,
    eps: float,
    cfg: SimConfig,
    bins: int = 64,
) -> tuple[EndpointSample, EndpointTvReport]:
    """Sample the coupling's endpoint law by integrating the characteristic SDE.

    Paths start from ``mu`` (inverse-CDF on the grid) and follow the drift of
    the potential propagated from ``psi`` up to time T - eps.  The joint
    histogram of (start, end) on a ``bins`` x ``bins`` partition of the grid
    square is compared in total variation against the density

        exp(-phi(x) - u(T-eps, y) - (y-x)^2 / (2 (T-eps))) / Z,

    where phi closes the dual system for ``mu`` and u is the propagated
    potential.  The configured horizon is ignored; the SDE runs to T - eps.
    """
    check_positive("eps", eps)
    if not eps < T:
        raise ValueError("eps must be strictly below T")
    grid = psi.grid
    horizon = T - eps
    n_steps = int(round(horizon / cfg.dt))
    rng = np.random.default_rng(cfg.seed)

    drift = hjb_drift_ladder(psi, T, cfg.dt, n_steps)
    x = mu.sample(rng, cfg.n_paths)
    x_start = x.copy()
    excluded = np.zeros(cfg.n_paths, dtype=bool)
    lo, hi = drift.bounds
    sqrt_dt = np.sqrt(cfg.dt)
    for k in range(n_steps):
        x = x + drift(k * cfg.dt, x) * cfg.dt + rng.standard_normal(cfg.n_paths) * sqrt_dt
        excluded |= (x < lo) | (x > hi)

    frac = float(excluded.mean())
    if frac >= 1e-3:
        raise RuntimeError(f"{frac:.2%} of paths left the drift table; refine the grid")
    keep = ~excluded
    sample = EndpointSample(x_start=x_start[keep], x_end=x[keep], excluded_frac=frac)

    op = LogHeatOperator(grid)
    phi = mu.normalized_potential - op.apply(psi.values, T)
    u_end = op.apply(psi.values, eps)
    phi_s = CubicSpline(grid.x, phi)
    u_s = CubicSpline(grid.x, u_end)

    edges = np.linspace(grid.lo, grid.hi, bins + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    log_q = (
        -phi_s(centers)[:, None]
        - u_s(centers)[None, :]
        - (centers[:, None] - centers[None, :]) ** 2 / (2.0 * horizon)
        - 0.5 * np.log(2.0 * np.pi * horizon)
    )
    q = np.exp(log_q - log_q.max())
    q /= q.sum()
    hist, _, _ = np.histogram2d(sample.x_start, sample.x_end, bins=[edges, edges])
    p = hist / hist.sum()
    tv = 0.5 * float(np.abs(p - q).sum())
    return sample, EndpointTvReport(
        tv=tv, bins=bins, n_paths=int(keep.sum()), histogram=p, density=q
    )
