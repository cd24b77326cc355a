from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from pointersieve.errors import DomainError, ParameterError, StepSizeError
from pointersieve.oracle import (
    LinearResponseState,
    a_bin_probabilities,
    a_cdf_closed,
    a_density,
    a_mass,
    click_rate,
    flip_frequency,
    flip_slope_fit,
    histogram_l1,
    jump_rate_law,
    jump_vector,
    ks_distance,
    linear_response_step,
    purity_curve,
    purity_gain_lyapunov,
    purity_gain_mc,
    stationary_purity,
)


class TestLinearResponse:
    @pytest.mark.parametrize("drift,tol", [("exact", 1e-12), ("euler", 1e-3)])
    def test_noise_free_decay(self, drift, tol):
        rng = np.random.default_rng(0)
        s = LinearResponseState(1.0, 0.0, 0.0)
        for _ in range(1000):
            s = linear_response_step(s, 3.0, 100.0, 0.0, 0.0, 1e-3, rng, drift=drift)
        assert s.dx == pytest.approx(math.exp(-0.5), abs=tol)

    def test_decoupled_decays_without_drive(self):
        rng = np.random.default_rng(0)
        s = LinearResponseState(0.0, 1.0, 1.0)
        for _ in range(1000):
            s = linear_response_step(s, 0.0, 1.0, 0.0, 0.0, 1e-3, rng)
        assert s.dy == pytest.approx(math.exp(-0.5), rel=1e-12)
        assert s.dz == pytest.approx(math.exp(-1.0), rel=1e-12)

    @pytest.mark.parametrize("phi", [0.0, 0.6, math.pi / 2])
    def test_diffusion_survives_strong_oscillator(self, phi):
        eta = 0.1
        for R in (1e2, 1e4):
            v = jump_vector(R, phi)
            assert abs(v[0]) <= 2 / R
            diff = click_rate(R, eta) * v * v
            assert diff[0] == pytest.approx(eta * math.cos(phi) ** 2, abs=10 / R**2)
            assert diff[1] == pytest.approx(eta * math.sin(phi) ** 2, abs=10 / R**2)

    def test_bernoulli_guard(self):
        with pytest.raises(StepSizeError):
            linear_response_step(LinearResponseState(), 0, 100, 0, 0.1, 1e-3, np.random.default_rng(0), counts="bernoulli")

    def test_large_efficiency_warns(self):
        with pytest.warns(UserWarning):
            linear_response_step(LinearResponseState(), 0, 1, 0, 0.5, 1e-3, np.random.default_rng(0))

    def test_unknown_options(self):
        with pytest.raises(ParameterError):
            linear_response_step(LinearResponseState(), 0, 1, 0, 0.1, 1e-3, np.random.default_rng(0), drift="rk4")

    def test_ensemble_matches_single_steps(self):
        mc = purity_gain_mc(5.0, 3.0, [0.0, 1.0], 0.1, 1e-3, [0.05], 4, 123)
        from pointersieve.rng import derive_seed

        for k in range(4):
            for i, phi in enumerate([0.0, 1.0]):
                s = LinearResponseState()
                r = np.random.default_rng(derive_seed(123, k))
                for _ in range(50):
                    s = linear_response_step(s, 5.0, 3.0, phi, 0.1, 1e-3, r)
                assert mc.samples[i, 0, k] == pytest.approx(s.purity_gain, rel=1e-9, abs=1e-15)

    def test_ensemble_matches_covariance_solution(self):
        mc = purity_gain_mc(10.0, 100.0, [0.0, math.pi / 2], 0.1, 1e-3, [0.5, 2.0], 3000, 5)
        for i, phi in enumerate(mc.phis):
            for j, t in enumerate(mc.times):
                want = purity_gain_lyapunov(10.0, 100.0, phi, 0.1, t)
                assert abs(mc.mean[i, j] - want) <= 3.5 * mc.stderr[i, j]

    @pytest.mark.parametrize("phi", [0.0, math.pi / 4, math.pi / 2])
    @pytest.mark.parametrize("t", [0.5, 1.0, 10.0])
    def test_covariance_solution_approaches_closed_form(self, phi, t):
        exact = purity_gain_lyapunov(50.0, 100.0, phi, 0.1, t)
        assert exact == pytest.approx(purity_curve(t, 0.1, 100.0, phi) - 0.5, rel=1e-5)


class TestPurityCurve:
    @given(st.floats(0, 1), st.floats(0.1, 1e3), st.floats(-4, 4))
    def test_starts_at_half(self, eta, R, phi):
        assert purity_curve(0.0, eta, R, phi) == 0.5

    def test_reference_values(self):
        assert purity_curve(1.0, 0.1, 100.0, 0.0) == pytest.approx(0.53160, abs=1e-5)
        assert purity_curve(1e3, 0.1, 100.0, 0.0) == pytest.approx(0.55, abs=1e-5)
        assert purity_curve(10.0, 0.1, 100.0, 0.0) - 0.5 == pytest.approx(0.04999, abs=1e-5)
        assert purity_curve(10.0, 0.1, 100.0, math.pi / 2) - 0.5 == pytest.approx(0.03333, abs=1e-5)

    def test_stationary_values(self):
        assert stationary_purity(0.0, 0.7) == 0.5
        assert stationary_purity(0.1, 0.0) == pytest.approx(0.55)
        assert stationary_purity(0.1, math.pi / 2) == pytest.approx(0.5 + 0.1 / 3)
        ratio = (stationary_purity(0.1, 0) - 0.5) / (stationary_purity(0.1, math.pi / 2) - 0.5)
        assert ratio == pytest.approx(1.5)

    @pytest.mark.parametrize("phi", [0.0, 0.4, math.pi / 2, 2.0])
    def test_stationary_is_limit(self, phi):
        assert purity_curve(100.0, 0.1, 1e6, phi) == pytest.approx(stationary_purity(0.1, phi), abs=1e-9)

    def test_x_quadrature_is_best(self):
        phis = np.linspace(0, math.pi, 25)
        for t in (0.5, 1.0, 10.0):
            vals = purity_curve(t, 0.1, 100.0, phis)
            assert np.argmax(vals) == 0 and vals[0] >= vals.max()


class TestADensity:
    @given(st.floats(0.01, 10), st.floats(-0.999, 0.999))
    def test_symmetry(self, tau, a):
        assert a_density(tau, a) == pytest.approx(a_density(tau, -a), rel=1e-12)

    def test_center_value(self):
        assert a_density(0.5, 0.0) == pytest.approx(math.pi**-0.5 * math.exp(-0.25), rel=1e-12)
        assert a_density(0.5, 0.0) == pytest.approx(0.4394, abs=1e-4)

    @pytest.mark.parametrize("tau", [0.05, 0.5, 5.0])
    def test_normalised(self, tau):
        assert a_mass(tau, -1, 1) == pytest.approx(1.0, abs=1e-6)

    @pytest.mark.parametrize("tau", [0.05, 0.5, 5.0])
    def test_quadrature_in_a_agrees(self, tau):
        # direct quadrature in A, away from the endpoint singularity
        val, _ = integrate.quad(lambda a: a_density(tau, a), -0.9, 0.3, limit=200)
        assert val == pytest.approx(a_mass(tau, -0.9, 0.3), abs=1e-8)

    @pytest.mark.parametrize("tau", [0.05, 0.5, 5.0])
    def test_bins_match_closed_form_cdf(self, tau):
        edges = np.linspace(-1, 1, 51)
        probs = a_bin_probabilities(tau, edges)
        np.testing.assert_allclose(probs, np.diff(a_cdf_closed(tau, edges)), atol=1e-10)
        assert probs.sum() == pytest.approx(1.0, abs=1e-6)

    def test_shape_changes_with_time(self):
        assert a_mass(0.05, -0.1, 0.1) > 0.3
        assert a_mass(5.0, -1, -0.9) + a_mass(5.0, 0.9, 1) == pytest.approx(0.9446, abs=1e-4)

    @pytest.mark.parametrize("tau,a", [(0.5, 1.0), (0.5, -1.2), (0.0, 0.1), (-1.0, 0.1)])
    def test_domain(self, tau, a):
        with pytest.raises(DomainError):
            a_density(tau, a)

    def test_exact_samples_have_small_l1(self):
        rng = np.random.default_rng(1)
        tau, n = 0.5, 100_000
        b = rng.normal(tau, math.sqrt(tau), n) * rng.choice([-1, 1], n)
        assert histogram_l1(np.tanh(b), tau) <= 0.04


class TestJumpLaw:
    def test_ratio(self):
        assert jump_rate_law(2.0) / jump_rate_law(4.0) == pytest.approx(math.sqrt(2) * math.e)
        assert jump_rate_law(2.0) / jump_rate_law(4.0) == pytest.approx(3.844, abs=1e-3)

    def test_monotone(self):
        vals = jump_rate_law(np.linspace(1, 20, 400))
        assert np.all(np.diff(vals) < 0)

    @given(st.floats(1e-3, 100))
    def test_log_identity(self, tau):
        assert math.log(jump_rate_law(tau)) + tau / 2 + 0.5 * math.log(tau) == pytest.approx(0, abs=1e-12)

    def test_domain(self):
        with pytest.raises(DomainError):
            jump_rate_law(0.0)

    def test_flip_frequency_counts_windows(self):
        flips = np.full(6000, 2)  # dtau = 1e-3, two flips per step in 10 trajectories
        edges, freq = flip_frequency(flips, 1e-3, 10, 1.0, 6.0, 5)
        np.testing.assert_allclose(freq, 2 / (10 * 1e-3))
        assert edges[0] == 1.0 and edges[-1] == 6.0

    def test_fit_recovers_synthetic_law(self):
        dtau = 1e-3
        tau_end = (np.arange(6000) + 1) * dtau
        flips = 1e4 * jump_rate_law(tau_end)
        fit = flip_slope_fit(flips, dtau, 1)
        assert fit.slope == pytest.approx(1.0, abs=1e-3)


def test_ks_distance():
    a = np.random.default_rng(0).normal(size=2000)
    assert ks_distance(a, a) == 0.0
    assert ks_distance(a, a + 10) == 1.0
