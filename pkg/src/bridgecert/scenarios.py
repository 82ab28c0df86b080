"""Scenario definitions, potential families, and the named check registry.

A scenario is a TOML document naming the two marginal potentials (by family
tag plus exactly the parameters that family takes), the horizon, the grid,
solver settings, simulation settings, and a list of named checks with their
tolerances.  Families know their own curvature facts: a uniform upper
curvature bound (for the source side), a flat-bottomed lower curvature
profile (for the target side, converted to the tanh dip constant), and, for
Gaussians, the exact log-Sobolev constant.

The check registry maps names to functions that consume a lazy
:class:`RunContext` (so expensive shared artifacts like the solver state or
the coupling matrix are computed once per run) and return a
:class:`CheckResult` with a status of ``pass``, ``fail``, or
``not-applicable``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources

import numpy as np
import tomli
from scipy.integrate import quad

from . import couplingsim, heatflow, lsi, schrodinger, weakconvex
from .fixedpoint import ProblemParams, solve_fixed_point
from .grids import Grid1D, GridFunction
from .validation import PreconditionError

__all__ = [
    "ScenarioError",
    "Scenario",
    "bundled_scenario_path",
    "load_scenario",
    "RunContext",
    "CheckResult",
    "CHECKS",
    "check_descriptions",
    "run_checks",
    "load_lattice",
    "lattice_rows",
]


class ScenarioError(ValueError):
    """Malformed scenario or lattice input."""


# ---------------------------------------------------------------------------
# Potential families
# ---------------------------------------------------------------------------

_FAMILY_PARAMS = {
    "gaussian": {"mean", "var"},
    "quadratic_plus_cosine": {"a", "c", "omega", "R"},
    "double_well": {"height", "separation", "R"},
    "table": {"x", "values", "alpha_nu", "L", "Lprime", "R", "beta_upper"},
}
_FAMILY_OPTIONAL = {
    "gaussian": set(),
    "quadratic_plus_cosine": {"R"},
    "double_well": {"R"},
    "table": {"alpha_nu", "L", "Lprime", "R", "beta_upper"},
}


@dataclass(frozen=True)
class Family:
    """A marginal potential family tag with validated parameters."""

    tag: str
    params: dict

    def potential(self, x: np.ndarray) -> np.ndarray:
        p = self.params
        if self.tag == "gaussian":
            return (x - p["mean"]) ** 2 / (2.0 * p["var"])
        if self.tag == "quadratic_plus_cosine":
            return 0.5 * p["a"] * x**2 - p["c"] * np.cos(p["omega"] * x)
        if self.tag == "double_well":
            return p["height"] * ((x / p["separation"]) ** 2 - 1.0) ** 2
        if self.tag == "table":
            return np.interp(x, np.asarray(p["x"]), np.asarray(p["values"]))
        raise ScenarioError(f"unknown family {self.tag!r}")

    def beta_upper(self) -> float:
        """Uniform upper curvature bound, where one exists."""
        p = self.params
        if self.tag == "gaussian":
            return 1.0 / p["var"]
        if self.tag == "quadratic_plus_cosine":
            return p["a"] + p["c"] * p["omega"] ** 2
        if self.tag == "table" and p.get("beta_upper") is not None:
            return float(p["beta_upper"])
        raise ScenarioError(
            f"family {self.tag!r} has no uniform upper curvature bound"
        )

    def piecewise_profile(self) -> weakconvex.PiecewiseProfile | None:
        """Exact flat-bottomed curvature floor (level outside R, dip inside)."""
        p = self.params
        if self.tag == "gaussian":
            return weakconvex.PiecewiseProfile(alpha=1.0 / p["var"], Lprime=0.0, R=0.0)
        if self.tag == "quadratic_plus_cosine":
            a, c, om = p["a"], p["c"], p["omega"]
            R = p.get("R", 6.0 / om)
            # difference quotient of the gradient: a - 2 c om |sin(om r / 2)| / r
            alpha = a - 2.0 * c * om / R
            lprime = c * om**2 - 2.0 * c * om / R
            if alpha <= 0 or lprime < 0:
                raise ScenarioError(
                    "quadratic_plus_cosine needs R > 2/omega and a > 2 c omega / R"
                )
            return weakconvex.PiecewiseProfile(alpha=alpha, Lprime=lprime, R=R)
        if self.tag == "double_well":
            h, s = p["height"], p["separation"]
            R = p.get("R", 3.0 * s)
            # difference quotient of the gradient: h r^2 / s^4 - 4 h / s^2
            alpha = h * R**2 / s**4 - 4.0 * h / s**2
            if alpha <= 0:
                raise ScenarioError("double_well needs R > 2 * separation")
            return weakconvex.PiecewiseProfile(
                alpha=alpha, Lprime=alpha + 4.0 * h / s**2, R=R
            )
        if self.tag == "table":
            if p.get("alpha_nu") is None:
                return None
            if p.get("L") is not None:
                return None  # direct (alpha, L) data; see curvature_pair
            return weakconvex.PiecewiseProfile(
                alpha=float(p["alpha_nu"]),
                Lprime=float(p.get("Lprime", 0.0)),
                R=float(p.get("R", 0.0)),
            )
        return None

    def curvature_pair(self) -> tuple[float, float] | None:
        """(alpha_nu, L) for the tanh-dip floor, converting from piecewise data."""
        if self.tag == "table" and self.params.get("L") is not None:
            return float(self.params["alpha_nu"]), float(self.params["L"])
        prof = self.piecewise_profile()
        if prof is None:
            return None
        return prof.alpha, weakconvex.smooth_dip_constant(prof)

    def lsi_mu(self) -> float | None:
        """Exact log-Sobolev constant, available for Gaussians only."""
        if self.tag == "gaussian":
            return float(self.params["var"])
        return None


def _build_family(section: dict, where: str) -> Family:
    if "family" not in section:
        raise ScenarioError(f"{where}: missing 'family' tag")
    tag = section["family"]
    if tag not in _FAMILY_PARAMS:
        raise ScenarioError(f"{where}: unknown family {tag!r}")
    given = {k: v for k, v in section.items() if k != "family"}
    allowed = _FAMILY_PARAMS[tag]
    required = allowed - _FAMILY_OPTIONAL[tag]
    extra = set(given) - allowed
    missing = required - set(given)
    if extra:
        raise ScenarioError(f"{where}: unexpected parameters {sorted(extra)} for {tag}")
    if missing:
        raise ScenarioError(f"{where}: missing parameters {sorted(missing)} for {tag}")
    _validate_family(tag, given, where)
    return Family(tag=tag, params=given)


def _validate_family(tag: str, p: dict, where: str) -> None:
    """Domain checks; the curvature formulas assume these signs."""
    def positive(key):
        if not p[key] > 0:
            raise ScenarioError(f"{where}: {key} must be positive for {tag}")

    if tag == "gaussian":
        positive("var")
    elif tag == "quadratic_plus_cosine":
        positive("a")
        positive("omega")
        if p["c"] < 0:
            raise ScenarioError(
                f"{where}: c must be nonnegative (flip the sign of omega instead)"
            )
    elif tag == "double_well":
        positive("height")
        positive("separation")
    elif tag == "table":
        x = np.asarray(p["x"], dtype=float)
        v = np.asarray(p["values"], dtype=float)
        if x.ndim != 1 or x.size != v.size or x.size < 2:
            raise ScenarioError(f"{where}: table needs matching x/values arrays")
        if np.any(np.diff(x) <= 0):
            raise ScenarioError(f"{where}: table abscissae must be increasing")


# ---------------------------------------------------------------------------
# Scenario
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    name: str
    T: float
    grid: Grid1D
    mu: Family
    nu: Family
    solver_tol: float
    solver_max_iter: int
    checks: tuple
    sim: dict
    seed: int
    raw: dict = field(repr=False, default_factory=dict)


def _require(section: dict, key: str, where: str):
    if key not in section:
        raise ScenarioError(f"{where}: missing field {key!r}")
    return section[key]


def parse_scenario(doc: dict) -> Scenario:
    name = _require(doc, "name", "scenario")
    T = float(_require(doc, "T", "scenario"))
    if T <= 0:
        raise ScenarioError("scenario: T must be positive")
    g = _require(doc, "grid", "scenario")
    try:
        grid = Grid1D(float(_require(g, "lo", "grid")),
                      float(_require(g, "hi", "grid")),
                      int(_require(g, "n", "grid")))
    except ValueError as exc:
        raise ScenarioError(f"grid: {exc}") from exc
    mu = _build_family(_require(doc, "marginal_mu", "scenario"), "marginal_mu")
    nu = _build_family(_require(doc, "marginal_nu", "scenario"), "marginal_nu")
    solver = doc.get("solver", {})
    checks_raw = doc.get("checks", [])
    checks = []
    for entry in checks_raw:
        cname = _require(entry, "name", "checks")
        if cname not in CHECKS:
            raise ScenarioError(
                f"checks: unknown check name {cname!r}; "
                f"known: {', '.join(sorted(CHECKS))}"
            )
        checks.append(dict(entry))
    sim = dict(doc.get("sim", {}))
    return Scenario(
        name=str(name),
        T=T,
        grid=grid,
        mu=mu,
        nu=nu,
        solver_tol=float(solver.get("tol", 1e-9)),
        solver_max_iter=int(solver.get("max_iter", 500)),
        checks=tuple(checks),
        sim=sim,
        seed=int(doc.get("seed", 0)),
        raw=doc,
    )


def bundled_scenario_path(name: str):
    """Filesystem path of a scenario shipped with the package."""
    candidate = resources.files("bridgecert").joinpath("data", f"{name}.toml")
    if not candidate.is_file():
        bundled = sorted(
            p.name[: -len(".toml")]
            for p in resources.files("bridgecert").joinpath("data").iterdir()
            if p.name.endswith(".toml")
        )
        raise ScenarioError(f"no bundled scenario {name!r}; available: {bundled}")
    return candidate


def load_scenario(path) -> Scenario:
    try:
        with open(path, "rb") as fh:
            doc = tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise ScenarioError(f"{path}: TOML parse error: {exc}") from exc
    except OSError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc
    return parse_scenario(doc)


# ---------------------------------------------------------------------------
# Lazy run context shared by the checks
# ---------------------------------------------------------------------------


class RunContext:
    """Computes and caches the expensive shared artifacts of one scenario run."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario

    @cached_property
    def mu(self) -> schrodinger.MarginalSpec:
        fam = self.scenario.mu
        return schrodinger.MarginalSpec.from_potential(
            self.scenario.grid, fam.potential(self.scenario.grid.x)
        )

    @cached_property
    def nu(self) -> schrodinger.MarginalSpec:
        fam = self.scenario.nu
        return schrodinger.MarginalSpec.from_potential(
            self.scenario.grid, fam.potential(self.scenario.grid.x)
        )

    @cached_property
    def state(self) -> schrodinger.SinkhornState:
        sc = self.scenario
        return schrodinger.sinkhorn_solve(
            self.mu, self.nu, sc.T, tol=sc.solver_tol, max_iter=sc.solver_max_iter
        )

    @cached_property
    def bridge(self) -> schrodinger.BridgeDensity:
        return schrodinger.bridge_density(self.state, self.mu, self.nu, self.scenario.T)

    @cached_property
    def params(self) -> ProblemParams | None:
        sc = self.scenario
        try:
            beta = sc.mu.beta_upper()
        except ScenarioError:
            return None
        pair = sc.nu.curvature_pair()
        if pair is None:
            return None
        alpha_nu, L = pair
        return ProblemParams(
            T=sc.T, beta_mu=beta, alpha_nu=alpha_nu, L=L, C_mu=sc.mu.lsi_mu()
        )

    @cached_property
    def solution(self):
        if self.params is None:
            return None
        return solve_fixed_point(self.params)

    @cached_property
    def lsi_params(self) -> lsi.LsiParams | None:
        if self.params is None or self.solution is None:
            return None
        c_mu = self.params.C_mu
        if c_mu is None:
            return None
        return lsi.LsiParams(
            alpha=self.solution.alpha_star,
            L=self.params.L,
            T=self.scenario.T,
            C_mu=c_mu,
        )

    @cached_property
    def dip_terminal(self) -> GridFunction | None:
        """Solved dual potential minus its certified quadratic part."""
        if self.solution is None:
            return None
        grid = self.scenario.grid
        vals = self.state.psi.values - 0.5 * self.solution.alpha_star * grid.x**2
        return GridFunction(grid, vals)

    def sim_config(self, overrides: dict | None = None) -> couplingsim.SimConfig:
        sc = self.scenario
        merged = {
            "dt": 1e-3,
            "horizon": 0.9 * sc.T,
            "n_paths": 10_000,
            "seed": sc.seed,
            "coalesce_eps": 1e-4,
        }
        merged.update(sc.sim)
        if overrides:
            merged.update(overrides)
        return couplingsim.SimConfig(
            dt=float(merged["dt"]),
            horizon=float(merged["horizon"]),
            n_paths=int(merged["n_paths"]),
            seed=int(merged["seed"]),
            coalesce_eps=float(merged["coalesce_eps"]),
        )

    def default_test_functions(self) -> list[GridFunction]:
        grid = self.scenario.grid
        x = grid.x
        return [
            GridFunction(grid, np.exp(0.4 * np.sin(x))),
            GridFunction(grid, 1.0 + 0.5 * np.exp(-((x - 1.0) ** 2))),
        ]


# ---------------------------------------------------------------------------
# Checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CheckResult:
    name: str
    status: str  # pass | fail | not-applicable
    tol: float | None
    margins: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)
    series: dict = field(default_factory=dict, repr=False)  # name -> DiagnosticSeries
    tables: dict = field(default_factory=dict, repr=False)  # name -> (header, rows)

    @property
    def failed(self) -> bool:
        return self.status == "fail"


def _status(ok: bool) -> str:
    return "pass" if ok else "fail"


def _check_sinkhorn_residual(ctx: RunContext, cfg: dict) -> CheckResult:
    tol = float(cfg.get("tol", 10.0 * ctx.scenario.solver_tol))
    r_phi, r_psi = schrodinger.system_residual(
        ctx.state, ctx.mu, ctx.nu, ctx.scenario.T
    )
    ok = r_phi < tol and r_psi < tol
    return CheckResult(
        name="sinkhorn-residual",
        status=_status(ok),
        tol=tol,
        margins={"residual_phi": r_phi, "residual_psi": r_psi},
        details={"iterations": ctx.state.iterations,
                 "marginal_err": list(ctx.state.marginal_err)},
    )


def _gaussian_ansatz_coefficients(T: float, var_mu: float, var_nu: float) -> tuple[float, float]:
    """Quadratic coefficients (a, b) of the dual potentials for Gaussian marginals.

    Substituting psi = a y^2/2, phi = b x^2/2 into the dual system yields
    b = 1/var_mu - a/(1+Ta) and a = 1/var_nu - b/(1+Tb); solved by iteration
    (a contraction for positive variances).
    """
    a = b = 0.5
    for _ in range(500):
        b_new = 1.0 / var_mu - a / (1.0 + T * a)
        a_new = 1.0 / var_nu - b_new / (1.0 + T * b_new)
        if abs(a_new - a) + abs(b_new - b) < 1e-15:
            a, b = a_new, b_new
            break
        a, b = a_new, b_new
    return a, b


def _check_gaussian_oracle(ctx: RunContext, cfg: dict) -> CheckResult:
    sc = ctx.scenario
    if sc.mu.tag != "gaussian" or sc.nu.tag != "gaussian":
        return CheckResult(
            name="gaussian-oracle", status="not-applicable", tol=None,
            details={"reason": "both marginals must be gaussian"},
        )
    if sc.mu.params["mean"] != 0.0 or sc.nu.params["mean"] != 0.0:
        return CheckResult(
            name="gaussian-oracle", status="not-applicable", tol=None,
            details={"reason": "oracle assumes centered marginals"},
        )
    tol = float(cfg.get("tol", 1e-6))
    a, b = _gaussian_ansatz_coefficients(
        sc.T, sc.mu.params["var"], sc.nu.params["var"]
    )
    grid = sc.grid
    mask = grid.interior_mask(grid.default_margin(sc.T))
    rels = {}
    for label, gf, coef in (("psi", ctx.state.psi, a), ("phi", ctx.state.phi, b)):
        num = gf.values[mask] - gf.values[mask].mean()
        ana = 0.5 * coef * grid.x[mask] ** 2
        ana -= ana.mean()
        rels[label] = float(np.max(np.abs(num - ana)) / np.max(np.abs(ana)))
    ok = all(v < tol for v in rels.values())
    return CheckResult(
        name="gaussian-oracle",
        status=_status(ok),
        tol=tol,
        margins={f"rel_err_{k}": v for k, v in rels.items()},
        details={"ansatz_coefficients": {"a": a, "b": b}},
    )


def _check_fixed_point(ctx: RunContext, cfg: dict) -> CheckResult:
    if ctx.params is None:
        return CheckResult(
            name="fixed-point", status="not-applicable", tol=None,
            details={"reason": "no curvature data for the marginals"},
        )
    tol = float(cfg.get("tol", 1e-10))
    sol = ctx.solution
    monotone = bool(np.all(np.diff(sol.iterates) >= -1e-15))
    lo, hi = sol.bracket
    inside = lo - 1e-9 <= sol.alpha_star <= hi + 1e-9
    ok = sol.residual < tol and monotone and inside
    return CheckResult(
        name="fixed-point",
        status=_status(ok),
        tol=tol,
        margins={"residual": sol.residual},
        details={
            "alpha_star": sol.alpha_star,
            "bracket": [lo, hi],
            "iterations": len(sol.iterates),
            "monotone": monotone,
        },
    )


def _check_curvature_envelopes(ctx: RunContext, cfg: dict) -> CheckResult:
    if ctx.params is None:
        return CheckResult(
            name="curvature-envelopes", status="not-applicable", tol=None,
            details={"reason": "target marginal lacks a certified curvature floor"},
        )
    tol = float(cfg.get("tol", 1e-3))
    report = schrodinger.certify_potential_envelopes(
        ctx.state, ctx.mu, ctx.nu, ctx.params, tol=tol, bridge=ctx.bridge
    )
    return CheckResult(
        name="curvature-envelopes",
        status=_status(report.passed),
        tol=tol,
        margins={
            "semiconvexity": report.semiconvexity.worst_margin,
            "semiconvexity_crude": report.semiconvexity_crude.worst_margin,
            "semiconcavity": report.semiconcavity.worst_margin,
            "variance_vs_floor": report.variance_min - report.variance_floor,
        },
        details={
            "alpha_star": report.solution.alpha_star,
            "assumptions": list(report.assumptions),
            "margin": report.margin,
        },
    )


def _check_hessian_covariance(ctx: RunContext, cfg: dict) -> CheckResult:
    tol = float(cfg.get("tol", 1e-3))
    psi_bar = schrodinger.convex_potential_transform(
        ctx.state.psi, ctx.nu, ctx.scenario.T
    )
    report = schrodinger.hessian_covariance_check(
        psi_bar, ctx.bridge, ctx.scenario.T, tol=tol
    )
    return CheckResult(
        name="hessian-covariance",
        status=_status(report.passed),
        tol=tol,
        margins={"max_rel_err": report.max_rel_err},
        details={"n_checked": report.n_checked},
    )


def _check_hjb_invariance(ctx: RunContext, cfg: dict) -> CheckResult:
    if ctx.params is None or ctx.dip_terminal is None:
        return CheckResult(
            name="hjb-invariance", status="not-applicable", tol=None,
            details={"reason": "no certified dip class for this scenario"},
        )
    tol = float(cfg.get("tol", 1e-3))
    T = ctx.scenario.T
    times = cfg.get("times", [0.0, T / 4.0, T / 2.0, 3.0 * T / 4.0])
    try:
        report = heatflow.invariance_check(
            ctx.dip_terminal, ctx.params.L, T, times, tol=tol
        )
    except PreconditionError as exc:
        return CheckResult(
            name="hjb-invariance", status="fail", tol=tol,
            details={"reason": str(exc)},
        )
    return CheckResult(
        name="hjb-invariance",
        status=_status(report.passed),
        tol=tol,
        margins={f"t={t:g}": m for t, m in report.worst_margins().items()},
        details={"L": report.L, "margin": report.margin},
    )


def _check_space_time(ctx: RunContext, cfg: dict) -> CheckResult:
    if ctx.solution is None:
        return CheckResult(
            name="space-time-transform", status="not-applicable", tol=None,
            details={"reason": "needs the fixed-point curvature level"},
        )
    tol = float(cfg.get("tol", 1e-5))
    report = heatflow.space_time_scaling_check(
        ctx.state.psi, ctx.solution.alpha_star, ctx.scenario.T, tol=tol
    )
    return CheckResult(
        name="space-time-transform",
        status=_status(report.passed),
        tol=tol,
        margins={"deviation_std": report.deviation_std},
        details={"deviation_max": report.deviation_max, "coverage": report.coverage},
    )


def _check_gradient_martingale(ctx: RunContext, cfg: dict) -> CheckResult:
    sim = ctx.sim_config(cfg.get("sim"))
    report = couplingsim.gradient_martingale_test(
        ctx.state.psi, ctx.scenario.T, sim, init=ctx.mu
    )
    return CheckResult(
        name="gradient-martingale",
        status=_status(report.passed),
        tol=report.threshold,
        margins={"max_z": float(report.z_scores.max())},
        details={"n_paths": report.series.n},
        series={"gradient_martingale": report.series},
    )


def _check_supermartingale(ctx: RunContext, cfg: dict) -> CheckResult:
    if ctx.params is None or ctx.dip_terminal is None:
        return CheckResult(
            name="reflection-supermartingale", status="not-applicable", tol=None,
            details={"reason": "no certified dip class for this scenario"},
        )
    sim = ctx.sim_config(cfg.get("sim"))
    x0 = float(cfg.get("x0", -2.0))
    x0_hat = float(cfg.get("x0_hat", 2.0))
    try:
        report = couplingsim.reflection_supermartingale_test(
            ctx.dip_terminal,
            ctx.params.L,
            ctx.scenario.T,
            x0,
            x0_hat,
            sim,
            halving=bool(cfg.get("halving", False)),
        )
    except PreconditionError as exc:
        return CheckResult(
            name="reflection-supermartingale", status="fail", tol=None,
            details={"reason": str(exc)},
        )
    margins = {"max_increment_z": float(report.increment_z.max()), "gamma0": report.gamma0}
    if report.halving_gap is not None:
        margins["halving_gap"] = report.halving_gap
        margins["halving_gap_limit"] = report.halving_gap_limit
    return CheckResult(
        name="reflection-supermartingale",
        status=_status(report.passed),
        tol=report.threshold,
        margins=margins,
        series={"supermartingale": report.series},
    )


def _check_htransform(ctx: RunContext, cfg: dict) -> CheckResult:
    tol = float(cfg.get("tol", 0.05))
    eps = float(cfg.get("eps", 0.1))
    sim = ctx.sim_config(cfg.get("sim"))
    _, report = couplingsim.sample_bridge_endpoints(
        ctx.mu, ctx.state.psi, ctx.scenario.T, eps, sim,
        bins=int(cfg.get("bins", 64)),
    )
    return CheckResult(
        name="htransform-tv",
        status=_status(report.tv < tol),
        tol=tol,
        margins={"tv": report.tv},
        details={"bins": report.bins, "n_paths": report.n_paths, "eps": eps},
        tables={
            "endpoint_histogram": (None, report.histogram.tolist()),
            "endpoint_density": (None, report.density.tolist()),
        },
    )


def _check_lsi_constant(ctx: RunContext, cfg: dict) -> CheckResult:
    if ctx.lsi_params is None:
        return CheckResult(
            name="lsi-constant", status="not-applicable", tol=None,
            details={"reason": "needs a Gaussian source marginal and curvature data"},
        )
    tol = float(cfg.get("tol", 1e-8))
    p = ctx.lsi_params
    report = lsi.lsi_constant(p)
    # Cross-check the closed-form coefficient against quadrature on a lattice.
    # Gap measured relative to the coefficient size once it exceeds 1: large
    # dip constants push C(0, T) to e^15 and beyond, where absolute agreement
    # at 1e-8 is below the floating-point floor.
    worst = 0.0
    for t in np.linspace(0.0, p.T, 9):
        closed = lsi.contraction_coefficient(p, t)
        integral, _ = quad(lambda s: lsi.running_curvature(p, s), t, p.T, epsabs=1e-12)
        worst = max(worst, abs(closed - float(np.exp(-integral))) / max(1.0, closed))
    ok = worst < tol
    return CheckResult(
        name="lsi-constant",
        status=_status(ok),
        tol=tol,
        margins={"coefficient_gap": worst},
        details={
            "constant": report.constant,
            "c0T": report.c0T,
            "integral_term": report.integral_term,
            "route": report.route,
        },
    )


def _check_empirical_lsi(ctx: RunContext, cfg: dict) -> CheckResult:
    if ctx.lsi_params is None:
        return CheckResult(
            name="empirical-lsi", status="not-applicable", tol=None,
            details={"reason": "needs a Gaussian source marginal and curvature data"},
        )
    constant = lsi.lsi_constant(ctx.lsi_params).constant
    report = lsi.empirical_lsi_check(
        ctx.bridge,
        constant,
        n_tests=int(cfg.get("n_tests", 100)),
        seed=int(cfg.get("seed", ctx.scenario.seed)),
    )
    return CheckResult(
        name="empirical-lsi",
        status=_status(report.passed),
        tol=report.tol,
        margins={"worst_margin": report.worst_margin},
        details={
            "constant": report.constant,
            "sharpest_ratio": report.sharpest_ratio,
            "n_tests": report.n_tests,
            "n_passed": report.n_passed,
        },
        tables={
            "ratio_trace": (
                ["test_index", "entropy_dirichlet_ratio"],
                [(i, float(r)) for i, r in enumerate(report.ratios)],
            )
        },
    )


def _check_local_estimates(ctx: RunContext, cfg: dict) -> CheckResult:
    tol = float(cfg.get("tol", 1e-3))
    eps = float(cfg.get("eps", 0.1))
    report = lsi.local_estimates_check(
        ctx.state.psi,
        ctx.scenario.T,
        eps,
        ctx.default_test_functions(),
        tol=tol,
        params=ctx.lsi_params,
    )
    return CheckResult(
        name="local-estimates",
        status=_status(report.passed),
        tol=tol,
        margins={
            "min_gradient_margin": float(report.gradient_margins.min()),
            "min_entropy_margin": float(report.entropy_margins.min()),
        },
        details={"n_samples": report.n_samples},
    )


CHECKS = {
    "sinkhorn-residual": (
        _check_sinkhorn_residual,
        "dual-system defect of the converged potentials (interior sup norm)",
    ),
    "gaussian-oracle": (
        _check_gaussian_oracle,
        "solved potentials vs the closed-form quadratic ansatz (Gaussian marginals)",
    ),
    "fixed-point": (
        _check_fixed_point,
        "curvature fixed point: residual, monotone iterates, algebraic bracket",
    ),
    "curvature-envelopes": (
        _check_curvature_envelopes,
        "two-sided curvature envelopes of the solved potentials",
    ),
    "hessian-covariance": (
        _check_hessian_covariance,
        "second derivative of the convexified potential vs conditional variance / T",
    ),
    "hjb-invariance": (
        _check_hjb_invariance,
        "dip-class membership preserved along the backward flow",
    ),
    "space-time-transform": (
        _check_space_time,
        "quadratic/contraction splitting identity of the smoothing operator",
    ),
    "gradient-martingale": (
        _check_gradient_martingale,
        "flat mean of the propagated gradient along its characteristics",
    ),
    "reflection-supermartingale": (
        _check_supermartingale,
        "mean decay of the weighted directional gap under reflection coupling",
    ),
    "htransform-tv": (
        _check_htransform,
        "sampled endpoint law vs the analytic coupling density (total variation)",
    ),
    "lsi-constant": (
        _check_lsi_constant,
        "log-Sobolev constant: closed-form coefficient vs quadrature",
    ),
    "empirical-lsi": (
        _check_empirical_lsi,
        "entropy vs Dirichlet form on the discrete coupling, random test fields",
    ),
    "local-estimates": (
        _check_local_estimates,
        "pointwise gradient estimate and entropy inequality for the semigroup",
    ),
}


def check_descriptions() -> list[tuple[str, str]]:
    return [(name, desc) for name, (_, desc) in sorted(CHECKS.items())]


def run_checks(scenario: Scenario) -> tuple[list[CheckResult], RunContext]:
    ctx = RunContext(scenario)
    results = []
    for entry in scenario.checks:
        cfg = dict(entry)
        name = cfg.pop("name")
        fn, _ = CHECKS[name]
        results.append(fn(ctx, cfg))
    return results, ctx


# ---------------------------------------------------------------------------
# Parameter lattice (table verb)
# ---------------------------------------------------------------------------

_LATTICE_KEYS = ("T", "beta_mu", "alpha_nu", "L", "C_mu")


def load_lattice(path) -> list[dict]:
    try:
        with open(path, "rb") as fh:
            doc = tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise ScenarioError(f"{path}: TOML parse error: {exc}") from exc
    except OSError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc

    axes = []
    for key in _LATTICE_KEYS:
        if key not in doc:
            raise ScenarioError(f"lattice: missing axis {key!r}")
        vals = doc[key]
        if not isinstance(vals, list):
            vals = [vals]
        if len(vals) == 0:
            raise ScenarioError(f"lattice: axis {key!r} is empty")
        axes.append([float(v) for v in vals])
    rows = []
    for combo in _product(axes):
        rows.append(dict(zip(_LATTICE_KEYS, combo)))
    return rows


def _product(axes):
    if not axes:
        yield ()
        return
    for head in axes[0]:
        for tail in _product(axes[1:]):
            yield (head, *tail)


def lattice_rows(points: list[dict]):
    """Fixed point, bracket and log-Sobolev constant for each lattice point."""
    header = [
        "T", "beta_mu", "alpha_nu", "L", "C_mu",
        "alpha_star", "bracket_lo", "bracket_hi", "residual", "iterations",
        "lsi_constant", "c0T", "integral_term",
    ]
    rows = []
    for pt in points:
        params = ProblemParams(
            T=pt["T"], beta_mu=pt["beta_mu"], alpha_nu=pt["alpha_nu"],
            L=pt["L"], C_mu=pt["C_mu"],
        )
        sol = solve_fixed_point(params)
        lo, hi = sol.bracket
        rep = lsi.lsi_constant(
            lsi.LsiParams(alpha=sol.alpha_star, L=pt["L"], T=pt["T"], C_mu=pt["C_mu"])
        )
        rows.append([
            pt["T"], pt["beta_mu"], pt["alpha_nu"], pt["L"], pt["C_mu"],
            sol.alpha_star, lo, hi, sol.residual, len(sol.iterates),
            rep.constant, rep.c0T, rep.integral_term,
        ])
    return header, rows


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


def lattice_csv_lines(points: list[dict]):
    header, rows = lattice_rows(points)
    yield ",".join(header)
    for row in rows:
        yield ",".join(_fmt(v) for v in row)
