"""Contraction coefficients, the log-Sobolev constant, and both empirical checks."""

import numpy as np
import pytest
from scipy.integrate import quad

from bridgecert.grids import GridFunction
from bridgecert.lsi import (
    LsiParams,
    contraction_coefficient,
    empirical_lsi_check,
    local_estimates_check,
    lsi_constant,
    running_curvature,
)

from conftest import GOLDEN


class TestRunningCurvature:
    def test_terminal_value(self):
        p = LsiParams(alpha=0.7, L=0.2, T=1.0, C_mu=1.0)
        assert running_curvature(p, 1.0) == pytest.approx(0.5, abs=1e-14)

    def test_monotone_for_positive_dip_free_level(self):
        p = LsiParams(alpha=0.9, L=0.0, T=2.0, C_mu=1.0)
        t = np.linspace(0.0, 2.0, 200)
        assert np.all(np.diff(running_curvature(p, t)) >= 0)

    def test_short_range_envelope_limit(self):
        """a(t) equals the r -> 0 limit of the propagated envelope at s = T - t."""
        p = LsiParams(alpha=0.6, L=1.3, T=1.5, C_mu=1.0)
        for t in (0.0, 0.4, 1.5):
            s = p.T - t
            c = 1.0 + s * p.alpha
            envelope_limit = p.alpha / c - p.L / c**2
            assert running_curvature(p, t) == pytest.approx(envelope_limit, rel=1e-14)


class TestContractionCoefficient:
    def test_unit_at_terminal_time(self):
        p = LsiParams(alpha=0.5, L=1.0, T=1.0, C_mu=1.0)
        assert contraction_coefficient(p, 1.0) == 1.0

    def test_dip_free_closed_form(self):
        p = LsiParams(alpha=0.8, L=0.0, T=1.0, C_mu=1.0)
        for t in (0.0, 0.3, 0.9):
            expected = 1.0 / (1.0 + (1.0 - t) * 0.8)
            assert contraction_coefficient(p, t) == pytest.approx(expected, rel=1e-14)

    @pytest.mark.parametrize("alpha", [-0.4, 0.0, 0.5, 2.0])
    @pytest.mark.parametrize("L", [0.0, 0.5, 2.0])
    def test_matches_quadrature(self, alpha, L):
        p = LsiParams(alpha=alpha, L=L, T=1.0, C_mu=1.0)
        for t in (0.0, 0.25, 0.7, 1.0):
            integral, _ = quad(lambda s: running_curvature(p, s), t, p.T, epsabs=1e-13)
            assert contraction_coefficient(p, t) == pytest.approx(
                float(np.exp(-integral)), abs=1e-10
            )

    def test_time_split_multiplicativity(self):
        """C(t, T) = C(t, s-profile frozen) factorizes through any split point."""
        p = LsiParams(alpha=0.6, L=0.9, T=2.0, C_mu=1.0)

        def c_between(t0, t1):
            integral, _ = quad(lambda s: running_curvature(p, s), t0, t1, epsabs=1e-13)
            return float(np.exp(-integral))

        whole = contraction_coefficient(p, 0.5)
        split = c_between(0.5, 1.2) * c_between(1.2, 2.0)
        assert whole == pytest.approx(split, rel=1e-10)


class TestLsiConstant:
    def test_flat_profile_value(self):
        """alpha = 0, L = 0: coefficient is 1 and the constant is 2 C_mu + T."""
        p = LsiParams(alpha=0.0, L=0.0, T=1.5, C_mu=2.0)
        rep = lsi_constant(p)
        assert rep.c0T == pytest.approx(1.0, abs=1e-14)
        assert rep.constant == pytest.approx(max(4.0, 4.0 + 1.5), rel=1e-12)

    def test_never_below_twice_source_constant(self):
        for alpha in (0.2, 1.0, 5.0):
            p = LsiParams(alpha=alpha, L=0.3, T=1.0, C_mu=0.7)
            assert lsi_constant(p).constant >= 2 * 0.7

    def test_short_horizon_limit(self):
        """As T -> 0 the constant collapses to 2 C_mu."""
        vals = []
        for T in (1.0, 0.1, 0.01, 0.001):
            p = LsiParams(alpha=0.5, L=0.5, T=T, C_mu=1.0)
            rep = lsi_constant(p)
            vals.append(rep.constant)
            assert rep.integral_term <= T * np.exp(0.5 * T)
        assert vals[-1] == pytest.approx(2.0, abs=5e-3)

    def test_quadrature_cross_check_recorded(self):
        p = LsiParams(alpha=GOLDEN, L=0.0, T=1.0, C_mu=1.0)
        rep = lsi_constant(p)
        assert rep.route == "closed-form"
        assert rep.quadrature_gap < 1e-10
        expected_integral = np.log1p(GOLDEN) / GOLDEN
        assert rep.integral_term == pytest.approx(expected_integral, rel=1e-12)


class TestLocalEstimates:
    def test_gaussian_scenario_bounds_hold(self, gaussian_ctx):
        grid = gaussian_ctx.scenario.grid
        fs = [
            GridFunction(grid, np.exp(0.4 * np.sin(grid.x))),
            GridFunction(grid, 1.0 + 0.5 * np.exp(-((grid.x - 1.0) ** 2))),
        ]
        rep = local_estimates_check(
            gaussian_ctx.state.psi, 1.0, 0.1, fs, tol=1e-3,
            params=gaussian_ctx.lsi_params,
        )
        assert rep.passed
        assert rep.n_samples == 40

    def test_measured_curvature_matches_analytic_for_gaussian(self, gaussian_ctx):
        grid = gaussian_ctx.scenario.grid
        fs = [GridFunction(grid, np.exp(0.2 * np.sin(grid.x)))]
        rep = local_estimates_check(
            gaussian_ctx.state.psi, 1.0, 0.1, fs, tol=1e-3,
            params=gaussian_ctx.lsi_params,
        )
        np.testing.assert_allclose(rep.alpha_measured, rep.alpha_analytic, atol=1e-6)

    def test_gradient_estimate_tight_for_monotone_datum(self, gaussian_ctx):
        """Linear drift commutes exactly, so a sign-definite gradient saturates it."""
        grid = gaussian_ctx.scenario.grid
        f = GridFunction(grid, np.logaddexp(0.0, grid.x))  # gradient in (0, 1)
        rep = local_estimates_check(
            gaussian_ctx.state.psi, 1.0, 0.1, [f], tol=1e-3
        )
        assert rep.passed
        assert np.max(rep.gradient_margins) < 0.02

    def test_constant_test_function_degenerates(self, gaussian_ctx):
        grid = gaussian_ctx.scenario.grid
        f = GridFunction(grid, np.full(grid.n, 3.0))
        rep = local_estimates_check(gaussian_ctx.state.psi, 1.0, 0.1, [f], tol=1e-6)
        np.testing.assert_allclose(rep.gradient_margins, 0.0, atol=1e-9)
        np.testing.assert_allclose(rep.entropy_margins, 0.0, atol=1e-9)

    def test_nonpositive_test_function_rejected(self, gaussian_ctx):
        grid = gaussian_ctx.scenario.grid
        f = GridFunction(grid, grid.x)
        with pytest.raises(ValueError):
            local_estimates_check(gaussian_ctx.state.psi, 1.0, 0.1, [f])

    def test_doublewell_scenario_bounds_hold(self, doublewell_ctx):
        """Both inequalities survive a bimodal drift at tol 1e-3."""
        grid = doublewell_ctx.scenario.grid
        f = GridFunction(grid, np.exp(0.4 * np.sin(grid.x)))
        rep = local_estimates_check(doublewell_ctx.state.psi, 1.0, 0.1, [f], tol=1e-3)
        assert rep.passed
        assert rep.n_samples == 20


class TestEmpiricalLsi:
    def test_gaussian_bridge_passes_certified_constant(self, gaussian_ctx):
        constant = lsi_constant(gaussian_ctx.lsi_params).constant
        rep = empirical_lsi_check(gaussian_ctx.bridge, constant, n_tests=50, seed=1)
        assert rep.passed
        assert rep.sharpest_ratio <= constant

    def test_witness_below_sharp_gaussian_constant(self, gaussian_ctx):
        """The exact constant for the Gaussian coupling is 1 + correlation."""
        constant = lsi_constant(gaussian_ctx.lsi_params).constant
        rep = empirical_lsi_check(gaussian_ctx.bridge, constant, n_tests=50, seed=2)
        sharp = 1.0 + 1.0 / (1.0 + GOLDEN)
        assert rep.sharpest_ratio <= sharp + 1e-3

    def test_unit_function_has_zero_entropy_and_energy(self, gaussian_ctx):
        from bridgecert.lsi import _entropy_and_dirichlet

        br = gaussian_ctx.bridge
        mass = br.mass / br.mass.sum()
        ent, dirichlet = _entropy_and_dirichlet(
            mass, np.ones_like(mass), br.grid.h
        )
        assert ent == pytest.approx(0.0, abs=1e-14)
        assert dirichlet == 0.0

    def test_product_test_function_reduces_to_marginal(self, gaussian_ctx):
        """f(x, y) = g(x): the inequality becomes the source-marginal one."""
        from bridgecert.lsi import _entropy_and_dirichlet

        br = gaussian_ctx.bridge
        mass = br.mass / br.mass.sum()
        grid = gaussian_ctx.scenario.grid
        g = np.exp(0.5 * np.sin(grid.x))
        f = np.tile(g[:, None], (1, grid.n))
        ent, dirichlet = _entropy_and_dirichlet(mass, f, grid.h)
        c_mu = gaussian_ctx.lsi_params.C_mu
        assert ent <= 0.5 * (2.0 * c_mu) * dirichlet + 1e-9
        # and the marginal computation agrees with the product-grid one
        w_mu = mass.sum(axis=1)
        s = float(w_mu @ g)
        ent_marginal = float(w_mu @ (g * np.log(g))) - s * np.log(s)
        assert ent == pytest.approx(ent_marginal, rel=1e-10)

    def test_reproducible_across_calls(self, gaussian_ctx):
        constant = lsi_constant(gaussian_ctx.lsi_params).constant
        a = empirical_lsi_check(gaussian_ctx.bridge, constant, n_tests=10, seed=5)
        b = empirical_lsi_check(gaussian_ctx.bridge, constant, n_tests=10, seed=5)
        np.testing.assert_array_equal(a.ratios, b.ratios)

    def test_thread_cap_does_not_change_results(self, gaussian_ctx, monkeypatch):
        """BRIDGECERT_THREADS caps the pool without affecting the outcome."""
        constant = lsi_constant(gaussian_ctx.lsi_params).constant
        base = empirical_lsi_check(gaussian_ctx.bridge, constant, n_tests=10, seed=6)
        monkeypatch.setenv("BRIDGECERT_THREADS", "1")
        capped = empirical_lsi_check(gaussian_ctx.bridge, constant, n_tests=10, seed=6)
        np.testing.assert_array_equal(base.ratios, capped.ratios)

    def test_thread_cap_validation(self, monkeypatch):
        from bridgecert.validation import max_workers

        monkeypatch.setenv("BRIDGECERT_THREADS", "3")
        assert max_workers() == 3
        monkeypatch.setenv("BRIDGECERT_THREADS", "zero")
        with pytest.raises(ValueError):
            max_workers()
        monkeypatch.setenv("BRIDGECERT_THREADS", "0")
        with pytest.raises(ValueError):
            max_workers()
