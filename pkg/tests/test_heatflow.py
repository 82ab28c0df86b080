"""Log-domain smoothing, backward-flow invariance, and the linear stepper."""

import numpy as np
import pytest

from bridgecert.grids import Grid1D, GridFunction
from bridgecert.heatflow import (
    LogHeatOperator,
    backward_semigroup_apply,
    backward_semigroup_sweep,
    hjb_propagate,
    invariance_check,
    log_heat_apply,
    space_time_scaling_check,
)
from bridgecert.validation import PreconditionError


@pytest.fixture(scope="module")
def grid():
    return Grid1D(-8.0, 8.0, 512)


@pytest.fixture(scope="module")
def op(grid):
    return LogHeatOperator(grid)


class TestLogHeatApply:
    def test_gaussian_closed_form(self, grid, op):
        """Quadratic datum of curvature a smooths to curvature a/(1+tau a)."""
        a, tau = 0.9, 0.7
        out = op.apply(0.5 * a * grid.x**2, tau)
        exact = 0.5 * a * grid.x**2 / (1 + tau * a) + 0.5 * np.log(1 + tau * a)
        mask = grid.interior_mask(0.1 * (grid.hi - grid.lo))
        rel = np.max(np.abs(out[mask] - exact[mask])) / np.max(np.abs(exact[mask]))
        assert rel < 1e-6

    def test_constants_preserved(self, grid, op):
        out = op.apply(np.full(grid.n, 3.25), 1.0)
        mask = grid.interior_mask(6.0)
        assert np.max(np.abs(out[mask] - 3.25)) < 1e-6

    def test_constant_shift_equivariance(self, grid, op):
        g = grid.x**2 / 3.0 + np.sin(grid.x)
        base = op.apply(g, 0.5)
        shifted = op.apply(g + 4.2, 0.5)
        np.testing.assert_allclose(shifted - base, 4.2, atol=1e-12)

    def test_translation_equivariance_interior(self, grid, op):
        """Shifting a compactly varying datum by one cell shifts the output."""
        bump = np.exp(-grid.x**2)
        out = op.apply(bump, 0.3)
        out_shift = op.apply(np.roll(bump, 1), 0.3)
        mask = grid.interior_mask(4.0)
        np.testing.assert_allclose(
            out_shift[mask], np.roll(out, 1)[mask], atol=1e-9
        )

    def test_curvature_ceiling(self, grid):
        """Second difference of the output never exceeds 1/tau."""
        tau = 0.5
        u = log_heat_apply(GridFunction(grid, grid.x**4 / 4.0), tau)
        assert np.max(u.second_difference()) <= 1.0 / tau + 1e-6

    def test_sub_resolution_width_is_identity(self, grid, op):
        g = np.cos(grid.x)
        np.testing.assert_array_equal(op.apply(g, 1e-9), g)

    def test_gradient_matches_closed_form(self, grid, op):
        a, tau = 0.9, 0.7
        gr = op.grad(0.5 * a * grid.x**2, tau)
        exact = a * grid.x / (1 + tau * a)
        mask = grid.interior_mask(2.0)
        np.testing.assert_allclose(gr[mask], exact[mask], rtol=1e-6, atol=1e-9)

    def test_all_mass_underflow_rejected(self, grid, op):
        """An effectively infinite datum leaves no quadrature mass anywhere."""
        datum = np.full(grid.n, np.inf)
        with pytest.raises(ValueError):
            op.apply(datum, 1.0)

    def test_huge_finite_datum_survives(self, grid, op):
        """Log-domain evaluation keeps even enormous finite potentials exact."""
        out = op.apply(np.full(grid.n, 1e8), 1.0)
        mask = grid.interior_mask(6.0)
        assert np.max(np.abs(out[mask] - 1e8)) < 1e-4


class TestPropagation:
    def test_near_terminal_identity(self, grid):
        g = GridFunction(grid, 0.5 * grid.x**2 - np.cos(grid.x))
        out = hjb_propagate(g, 1.0, 1.0 - 1e-9)
        mask = grid.interior_mask(1.0)
        assert np.max(np.abs(out.values[mask] - g.values[mask])) < 1e-6

    def test_two_step_composition(self, grid, op):
        """Propagating in two hops equals one hop, after gauge removal."""
        g = 0.35 * grid.x**2
        step = op.apply(op.apply(g, 0.3), 0.5)
        direct = op.apply(g, 0.8)
        mask = grid.interior_mask(grid.default_margin(0.8))
        diff = step - direct
        diff = diff[mask] - diff[mask].mean()
        assert np.max(np.abs(diff)) < 1e-8

    def test_convexity_preserved_for_quartic(self, grid):
        g = GridFunction(grid, grid.x**4 / 4.0)
        out = hjb_propagate(g, 1.0, 0.25)
        mask = grid.interior_mask(grid.default_margin(1.0))
        assert np.min(out.second_difference()[mask]) >= -1e-8

    def test_time_outside_horizon_rejected(self, grid):
        g = GridFunction(grid, grid.x**2)
        with pytest.raises(ValueError):
            hjb_propagate(g, 1.0, 1.0)


class TestInvariance:
    def test_convex_quadratic_trivially_invariant(self, grid):
        g = GridFunction(grid, 0.5 * grid.x**2)
        rep = invariance_check(g, 0.0, 1.0, [0.0, 0.25, 0.5, 0.75], tol=1e-3)
        assert rep.passed
        assert all(m >= -1e-3 for m in rep.worst_margins().values())

    def test_cosine_dip_invariant(self, grid):
        a = 1.5
        g = GridFunction(grid, 0.5 * grid.x**2 - a * np.cos(grid.x))
        rep = invariance_check(g, a, 1.0, [0.0, 0.25, 0.5, 0.75], tol=1e-3)
        assert rep.passed

    def test_pure_cosine_dip_invariant(self, grid):
        """A bounded oscillation of amplitude a sits in the dip class of level a."""
        a = 0.4
        g = GridFunction(grid, -a * np.cos(grid.x))
        rep = invariance_check(g, a, 1.0, [0.0, 0.25, 0.5, 0.75], tol=1e-3)
        assert rep.passed
        assert all(m > 0 for m in rep.worst_margins().values())

    def test_uncertified_terminal_rejected(self, grid):
        """A dip ten times too small for the datum must be refused up front."""
        g = GridFunction(grid, 0.5 * grid.x**2 - 2.0 * np.cos(grid.x))
        with pytest.raises(PreconditionError):
            invariance_check(g, 0.2, 1.0, [0.5], tol=1e-3)


class TestSpaceTimeScaling:
    def test_zero_level_is_exact_identity(self, grid):
        psi = GridFunction(grid, 0.5 * grid.x**2 - 0.3 * np.cos(grid.x))
        rep = space_time_scaling_check(psi, 0.0, 1.0, tol=1e-10)
        assert rep.deviation_std < 1e-12

    def test_pure_quadratic_splits_exactly(self, grid):
        psi = GridFunction(grid, 0.5 * 0.8 * grid.x**2)
        rep = space_time_scaling_check(psi, 0.8, 1.0, tol=1e-8)
        assert rep.passed

    def test_cosine_perturbation(self, grid):
        psi = GridFunction(grid, 0.5 * grid.x**2 - 0.3 * np.cos(grid.x))
        rep = space_time_scaling_check(psi, 0.5, 1.0, tol=1e-5)
        assert rep.passed
        assert 0.0 < rep.coverage <= 1.0


class TestBackwardStepper:
    def test_constants_conserved(self, grid):
        f = GridFunction(grid, np.full(grid.n, 2.0))
        out = backward_semigroup_apply(f, lambda s: np.zeros(grid.n), 0.0, 1.0, 128)
        np.testing.assert_allclose(out.values, 2.0, atol=1e-10)

    def test_zero_drift_matches_gaussian_convolution(self, grid):
        f = GridFunction(grid, np.cos(grid.x) * np.exp(-grid.x**2 / 8.0))
        tau = 0.5
        pde = backward_semigroup_apply(
            f, lambda s: np.zeros(grid.n), 0.0, tau, 400
        ).values
        kern = np.exp(-(grid.x[:, None] - grid.x[None, :]) ** 2 / (2 * tau))
        kern /= np.sqrt(2 * np.pi * tau)
        conv = kern @ (grid.weights * f.values)
        mask = grid.interior_mask(3.0)
        rel = np.max(np.abs(pde[mask] - conv[mask])) / np.max(np.abs(conv[mask]))
        assert rel < 1e-4

    def test_order_preserved(self, grid):
        """f1 <= f2 pointwise propagates to ordered outputs."""
        drift = lambda s: np.tanh(grid.x)
        f1 = GridFunction(grid, np.sin(grid.x))
        f2 = GridFunction(grid, np.sin(grid.x) + 0.3 * np.exp(-grid.x**2))
        o1 = backward_semigroup_apply(f1, drift, 0.0, 0.5, 200).values
        o2 = backward_semigroup_apply(f2, drift, 0.0, 0.5, 200).values
        assert np.all(o2 >= o1 - 1e-12)

    def test_snapshots_include_endpoints(self, grid):
        f = GridFunction(grid, np.exp(-grid.x**2))
        sweep = backward_semigroup_sweep(
            f, lambda s: np.zeros(grid.n), 0.0, 1.0, 100,
            snapshot_times=[0.0, 0.5, 1.0],
        )
        assert set(sweep) == {0.0, 0.5, 1.0}
        np.testing.assert_array_equal(sweep[1.0].values, f.values)

    def test_peclet_warning(self, grid):
        f = GridFunction(grid, np.exp(-grid.x**2))
        with pytest.warns(RuntimeWarning, match="Peclet"):
            backward_semigroup_apply(
                f, lambda s: np.full(grid.n, 100.0), 0.0, 0.1, 50
            )
