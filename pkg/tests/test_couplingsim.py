"""Reflection coupling engine and its statistical certificates.

Monte Carlo assertions use generous z-score budgets and fixed seeds, so the
suite is deterministic; closed-form drifts (zero or linear) provide exact
references wherever one exists.
"""

import numpy as np
import pytest

from bridgecert.couplingsim import (
    SimConfig,
    TabulatedDrift,
    gradient_martingale_test,
    hjb_drift_ladder,
    reflection_supermartingale_test,
    sample_bridge_endpoints,
    simulate_reflection_pair,
)
from bridgecert.grids import Grid1D, GridFunction
from bridgecert.validation import PreconditionError

from conftest import GOLDEN


def zero_drift(t, x):
    return np.zeros_like(x)


@pytest.fixture(scope="module")
def grid():
    return Grid1D(-8.0, 8.0, 512)


class TestSimConfig:
    def test_invariants(self):
        with pytest.raises(ValueError):
            SimConfig(dt=1e-3, horizon=1.0, n_paths=50, seed=0)
        with pytest.raises(ValueError):
            SimConfig(dt=2.0, horizon=1.0, n_paths=500, seed=0)


class TestReflectionEngine:
    def test_bit_reproducible(self):
        cfg = SimConfig(dt=1e-3, horizon=0.2, n_paths=200, seed=99)
        a = simulate_reflection_pair(zero_drift, -1.0, 1.0, cfg)
        b = simulate_reflection_pair(zero_drift, -1.0, 1.0, cfg)
        np.testing.assert_array_equal(a.r, b.r)
        np.testing.assert_array_equal(a.tau, b.tau)

    def test_zero_drift_distance_is_doubled_brownian(self):
        """Separation has quadratic variation 4t and hits zero like 2W."""
        cfg = SimConfig(dt=1e-3, horizon=1.0, n_paths=10_000, seed=42)
        ens = simulate_reflection_pair(
            zero_drift, -2.0, 2.0, cfg, track_qv=True
        )
        assert 0.9 < float(ens.qv_ratio.mean()) < 1.1
        # P(coalesce by 1) = 2 Phi(-r0 / (2 sqrt(t))) = 2 Phi(-2) = 0.0455
        frac = ens.coalesced_fraction()[-1]
        assert frac == pytest.approx(0.0455, abs=0.01)

    def test_reflected_increments_stay_gaussian(self):
        cfg = SimConfig(dt=1e-3, horizon=0.5, n_paths=5_000, seed=4)
        ens = simulate_reflection_pair(
            zero_drift, -2.0, 2.0, cfg, track_reflected_cov=True
        )
        mean, se, count = ens.reflected_cov
        assert count > 1e6
        assert abs(mean[0, 0] - 1.0) < 3.0 * se[0, 0]

    @pytest.mark.parametrize("d", [2, 3])
    def test_reflected_covariance_identity_in_higher_d(self, d):
        cfg = SimConfig(dt=1e-3, horizon=0.3, n_paths=3_000, seed=5)
        drift = lambda t, x: -x
        start = np.linspace(0.5, 1.0, d)
        ens = simulate_reflection_pair(
            drift, start, -start, cfg, d=d, track_reflected_cov=True
        )
        mean, se, _ = ens.reflected_cov
        for i in range(d):
            for j in range(d):
                target = 1.0 if i == j else 0.0
                assert abs(mean[i, j] - target) < 4.0 * max(se[i, j], 1e-12)

    def test_direction_increments_orthogonal_in_2d(self):
        """<de, e> stays at the O(dt) discretization floor for separated pairs."""
        rot = np.array([[1.0, 0.8], [-0.8, 1.0]])
        drift = lambda t, x: -(x @ rot.T)
        cfg = SimConfig(dt=1e-3, horizon=1.0, n_paths=2_000, seed=7)
        ens = simulate_reflection_pair(
            drift, np.array([1.5, 0.0]), np.array([-1.5, 0.5]), cfg, d=2,
            track_direction=True,
        )
        mean, se, count = ens.direction_dot
        assert count > 0
        assert abs(mean) < 3.0 * se + cfg.dt

    def test_distance_drift_matches_gradient_gap(self):
        """dr = -(drift gap along e) dt + 2 dW: linear drift gives E r_t = r_0 e^-t.

        Starts far enough apart that absorption is negligible on the window.
        """
        cfg = SimConfig(dt=1e-3, horizon=0.25, n_paths=5_000, seed=17)
        drift = lambda t, x: -x
        times = np.linspace(0.0, 0.25, 6)
        ens = simulate_reflection_pair(drift, -3.0, 3.0, cfg, record_times=times)
        for k, t in enumerate(times):
            sample = ens.r[k]
            se = sample.std(ddof=1) / np.sqrt(sample.size)
            assert abs(sample.mean() - 6.0 * np.exp(-t)) < 3.0 * se + 0.01

    def test_coalescence_fraction_grows_with_time(self):
        cfg = SimConfig(dt=1e-3, horizon=5.0, n_paths=2_000, seed=3)
        drift = lambda t, x: -x
        ens = simulate_reflection_pair(
            drift, -1.0, 1.0, cfg, record_times=[1.0, 5.0]
        )
        frac = ens.coalesced_fraction()
        assert frac[1] > frac[0]

    def test_merged_pairs_stay_merged(self):
        cfg = SimConfig(dt=1e-3, horizon=2.0, n_paths=500, seed=1)
        ens = simulate_reflection_pair(zero_drift, -0.2, 0.2, cfg)
        merged = ens.coalesced
        for k in range(merged.shape[0] - 1):
            assert np.all(merged[k + 1] | ~merged[k])
        # and their recorded separation is exactly zero afterwards
        assert np.all(ens.r[merged] == 0.0)


class TestDriftLadder:
    def test_matches_analytic_linear_drift(self, grid):
        """Propagated quadratic datum gives drift -a x / (1 + (T-t) a)."""
        a = 0.8
        psi = GridFunction(grid, 0.5 * a * grid.x**2)
        drift = hjb_drift_ladder(psi, 1.0, 0.01, 90)
        xs = np.linspace(-3.0, 3.0, 7)
        for k in (0, 45, 90):
            t = 0.01 * k
            expected = -a * xs / (1.0 + (1.0 - t) * a)
            np.testing.assert_allclose(drift(t, xs), expected, atol=1e-5)

    def test_out_of_table_paths_excluded(self, grid):
        table = np.zeros((11, grid.n))
        drift = TabulatedDrift(grid, 0.1, table)
        cfg = SimConfig(dt=0.1, horizon=1.0, n_paths=200, seed=0)
        with pytest.raises(RuntimeError, match="left the drift table"):
            simulate_reflection_pair(drift, 7.9, -7.9, cfg, record_times=[0.0, 1.0])

    def test_record_time_validation(self, grid):
        cfg = SimConfig(dt=0.1, horizon=1.0, n_paths=200, seed=0)
        with pytest.raises(ValueError, match="collide"):
            simulate_reflection_pair(zero_drift, -1.0, 1.0, cfg)
        with pytest.raises(ValueError, match="within"):
            simulate_reflection_pair(
                zero_drift, -1.0, 1.0, cfg, record_times=[0.0, 2.0]
            )


class TestGradientMartingale:
    def test_linear_drift_case(self, grid):
        """For a quadratic datum the statistic is an exact martingale."""
        psi = GridFunction(grid, 0.5 * GOLDEN * grid.x**2)
        cfg = SimConfig(dt=1e-3, horizon=0.9, n_paths=10_000, seed=11)
        rep = gradient_martingale_test(psi, 1.0, cfg, init=1.5)
        assert rep.passed
        assert rep.series.mean[0] != 0.0

    def test_constant_datum_gives_zero_series(self, grid):
        psi = GridFunction(grid, np.full(grid.n, 2.0))
        cfg = SimConfig(dt=1e-3, horizon=0.5, n_paths=500, seed=2)
        rep = gradient_martingale_test(psi, 1.0, cfg, init=0.5)
        np.testing.assert_allclose(rep.series.mean, 0.0, atol=1e-9)
        assert rep.passed

    def test_bimodal_datum_within_band(self, doublewell_ctx):
        """The flat-mean property survives a genuinely nonconvex drift."""
        cfg = SimConfig(dt=1e-3, horizon=0.9, n_paths=4_000, seed=21)
        rep = gradient_martingale_test(
            doublewell_ctx.state.psi, 1.0, cfg, init=doublewell_ctx.mu
        )
        assert rep.passed

    def test_horizon_must_stay_below_terminal_time(self, grid):
        psi = GridFunction(grid, 0.5 * grid.x**2)
        cfg = SimConfig(dt=1e-3, horizon=1.0, n_paths=200, seed=0)
        with pytest.raises(ValueError):
            gradient_martingale_test(psi, 1.0, cfg)


class TestSupermartingale:
    def test_quadratic_terminal_statistic_nonnegative(self, grid):
        """Convex dip-free terminal: the statistic is a nonnegative martingale."""
        g = GridFunction(grid, 0.5 * grid.x**2)
        cfg = SimConfig(dt=1e-3, horizon=1.0, n_paths=2_000, seed=5)
        rep = reflection_supermartingale_test(g, 0.0, 1.0, -2.0, 2.0, cfg)
        assert rep.monotone
        assert rep.gamma0 >= 0.0
        assert np.all(rep.series.mean >= -1e-12)

    def test_cosine_dip_terminal(self, grid):
        g = GridFunction(grid, 0.5 * grid.x**2 - 1.5 * np.cos(grid.x))
        cfg = SimConfig(dt=1e-3, horizon=1.0, n_paths=2_000, seed=5)
        rep = reflection_supermartingale_test(g, 1.5, 1.0, -2.0, 2.0, cfg)
        assert rep.passed

    def test_uncertified_terminal_rejected(self, grid):
        g = GridFunction(grid, 0.5 * grid.x**2 - 2.0 * np.cos(grid.x))
        cfg = SimConfig(dt=1e-3, horizon=1.0, n_paths=200, seed=5)
        with pytest.raises(PreconditionError):
            reflection_supermartingale_test(g, 0.1, 1.0, -2.0, 2.0, cfg)

    def test_merged_pairs_contribute_zero(self, grid):
        g = GridFunction(grid, 0.5 * grid.x**2)
        cfg = SimConfig(dt=1e-3, horizon=2.0, n_paths=500, seed=8)
        drift = hjb_drift_ladder(g, 2.5, cfg.dt, cfg.n_steps)
        ens = simulate_reflection_pair(
            drift, -0.1, 0.1, cfg, dip_constant=0.0,
            record_times=np.linspace(0.0, 2.0, 10),
        )
        assert np.all(ens.gamma[ens.coalesced] == 0.0)


class TestEndpointSampling:
    def test_gaussian_endpoint_law(self, gaussian_ctx):
        cfg = SimConfig(dt=1e-3, horizon=0.9, n_paths=20_000, seed=123)
        sample, rep = sample_bridge_endpoints(
            gaussian_ctx.mu, gaussian_ctx.state.psi, 1.0, 0.1, cfg
        )
        assert rep.tv < 0.08
        # endpoint marginal keeps unit variance up to the eps cut
        assert np.std(sample.x_end) == pytest.approx(1.0, abs=0.05)

    def test_tiny_integration_window_returns_starts(self, gaussian_ctx):
        """With eps close to T the endpoints barely move from their starts."""
        cfg = SimConfig(dt=1e-3, horizon=0.9, n_paths=20_000, seed=9)
        sample, _ = sample_bridge_endpoints(
            gaussian_ctx.mu, gaussian_ctx.state.psi, 1.0, 1.0 - 2e-3, cfg
        )
        assert np.max(np.abs(sample.x_end - sample.x_start)) < 0.5
        # start marginal is mu itself: compare histograms in TV
        edges = np.linspace(-8.0, 8.0, 65)
        hist, _ = np.histogram(sample.x_start, bins=edges, density=False)
        p = hist / hist.sum()
        grid = gaussian_ctx.scenario.grid
        centers = 0.5 * (edges[:-1] + edges[1:])
        q = np.interp(centers, grid.x, gaussian_ctx.mu.density.values)
        q /= q.sum()
        assert 0.5 * np.abs(p - q).sum() < 0.05

    def test_eps_domain(self, gaussian_ctx):
        cfg = SimConfig(dt=1e-3, horizon=0.9, n_paths=200, seed=0)
        with pytest.raises(ValueError):
            sample_bridge_endpoints(gaussian_ctx.mu, gaussian_ctx.state.psi, 1.0, 1.5, cfg)
