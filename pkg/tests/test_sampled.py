import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gsnbounds.errors import DomainError, RangeError, WindowError
from gsnbounds.process import constant_kernel, kernel_eval, lipschitz_audit, mean_energy
from gsnbounds.rd import da_upper_const, dp_lower_const
from gsnbounds.sampled import (
    achievable_rd_point,
    build_sampled_covariance,
    cov_trace_identity_gap,
    d_a_of_rate,
    distortion_a,
    distortion_a_cholesky,
    distortion_b,
    eigen_convergence_report,
    grid_error_bounds,
    grid_error_terms,
    unconverged_tail,
    mil_split,
    rate_a,
    sensor_positions,
    theta_for_rate,
    theta_window,
    window_exponent,
)

from oracles import gm_sampled_matrix, two_sensor_mmse


def unit_window(params, N, kappa=0.99, target=None):
    # constant unit power: log(N P) = log N, nu = 1/4
    return theta_window(params, N, target, log_np=math.log(N), nu=0.25, kappa=kappa)


class TestSampledCovariance:
    def test_two_sensors(self, gm):
        cov = build_sampled_covariance(gm, 2)
        e = math.exp(-1)
        np.testing.assert_allclose(cov.sigma_prime, [[0.5, 0.5 * e], [0.5 * e, 0.5]], rtol=1e-15)
        np.testing.assert_allclose(cov.mu, [0.5 * (1 + e), 0.5 * (1 - e)], rtol=1e-14)
        np.testing.assert_allclose(cov.mu, [0.683940, 0.316060], atol=1e-6)

    def test_three_sensor_trace(self, gm):
        cov = build_sampled_covariance(gm, 3)
        assert np.trace(cov.sigma_prime) == pytest.approx(0.75, rel=1e-15)
        assert math.fsum(cov.mu) == pytest.approx(0.75, rel=1e-12)

    def test_matches_independent_matrix(self, gm):
        cov = build_sampled_covariance(gm, 40)
        np.testing.assert_allclose(cov.sigma_prime, gm_sampled_matrix(40), rtol=1e-14)

    @given(st.integers(2, 300))
    @settings(max_examples=20, deadline=None)
    def test_psd_and_trace(self, N):
        from gsnbounds.process import gauss_markov
        model = gauss_markov(1.0, 1.0, 1.0)
        cov = build_sampled_covariance(model, N)
        assert np.all(cov.mu >= 0)
        assert np.all(np.diff(cov.mu) <= 0)
        np.testing.assert_array_equal(cov.sigma_prime, cov.sigma_prime.T)
        assert cov_trace_identity_gap(model, cov) <= 1e-10

    def test_eigenvectors(self, gm):
        cov = build_sampled_covariance(gm, 30)
        V = cov.vectors
        np.testing.assert_allclose(cov.sigma_prime @ V, V * cov.mu, atol=1e-13)

    def test_positions(self):
        np.testing.assert_allclose(sensor_positions(5, 2.0), [0, 0.5, 1, 1.5, 2])

    def test_too_few_sensors(self, gm):
        with pytest.raises(DomainError):
            build_sampled_covariance(gm, 1)

    def test_constant_kernel_rank_one(self):
        c, T0, N = 2.0, 3.0, 25
        cov = build_sampled_covariance(constant_kernel(c, T0), N)
        assert cov.mu[0] == pytest.approx(c * T0 * N / (N - 1), rel=1e-13)
        np.testing.assert_allclose(cov.mu[1:], 0.0, atol=1e-12)


class TestEigenConvergence:
    def test_top_residual_decreasing(self, gm, gm_params):
        rep = eigen_convergence_report(gm, gm_params, [100, 200, 400], 0)
        assert np.all(np.diff(rep.residuals[:, 0]) < 0)
        assert rep.decreasing[0]

    def test_sandwich_at_2000(self, gm, gm_params):
        rep = eigen_convergence_report(gm, gm_params, [2000], 5)
        r = rep.residuals[0, 0]
        mu = rep.mu[0]
        for k in range(gm_params.K0 + 1, 6):
            assert gm_params.lambda_lo(k) - r <= mu[k] <= gm_params.lambda_hi(k) + r

    def test_reference_is_used(self, gm, gm_params):
        rep = eigen_convergence_report(gm, gm_params, [100], 3)
        np.testing.assert_array_equal(rep.reference, gm_params.reference_eigenvalues(4))

    def test_N_too_small(self, gm, gm_params):
        with pytest.raises(DomainError):
            eigen_convergence_report(gm, gm_params, [10], 6)


class TestGridErrorTerms:
    def test_constant_kernel(self):
        g = grid_error_terms(constant_kernel(1.5), 20)
        assert g.a_term == pytest.approx(0.0, abs=1e-14)
        assert g.b_term == pytest.approx(0.0, abs=1e-14)

    def test_analytic_bound(self, gm, gm_params):
        B = lipschitz_audit(gm).constant_at(gm_params.alpha)
        for N in (10, 50, 200):
            g = grid_error_terms(gm, N)
            bound = grid_error_bounds(B, gm_params.alpha, N, gm.T0)
            assert g.a_abs <= bound.a_term
            assert 0 <= g.b_term <= bound.b_term

    def test_a_halving(self, gm, gm_params):
        alpha = gm_params.alpha
        for N in (20, 80, 320):
            ratio = grid_error_terms(gm, 2 * N).a_abs / grid_error_terms(gm, N).a_abs
            assert 2**-alpha * 0.5 <= ratio <= 2**-alpha * 2

    def test_decay(self, gm):
        a = [grid_error_terms(gm, N) for N in (10, 100, 1000)]
        assert a[0].a_abs > a[1].a_abs > a[2].a_abs
        assert a[0].b_term > a[1].b_term > a[2].b_term

    def test_gm_closed_form_a(self, gm):
        # for GM the diagonal is flat, so A = (2/T0) int (K(t_l,t_l) - K(t,t_l)) dt
        # = (2 sigma2/(2 eta)) (N-1) int_0^h (1 - e^{-eta u}) du
        N = 17
        h = 1 / (N - 1)
        exact = (N - 1) * (h - (1 - math.exp(-h)))
        assert grid_error_terms(gm, N).a_term == pytest.approx(exact, rel=1e-12)

    def test_panels_minimum(self, gm):
        with pytest.raises(DomainError):
            grid_error_terms(gm, 10, quad_panels=5)


class TestAchievablePoint:
    def test_two_sensor_oracle(self, gm):
        cov = build_sampled_covariance(gm, 2)
        pt = achievable_rd_point(gm, cov, 0.1)
        assert pt.D_a_exact == pytest.approx(two_sensor_mmse(0.1), rel=1e-8)
        assert distortion_a(gm, cov, 0.1) == pytest.approx(two_sensor_mmse(0.1), rel=1e-8)

    def test_two_sensor_rate(self, gm):
        cov = build_sampled_covariance(gm, 2)
        e = math.exp(-1)
        mu = [0.5 * (1 + e), 0.5 * (1 - e)]
        expected = sum(0.5 * math.log(1 + m / 0.3) for m in mu)
        assert achievable_rd_point(gm, cov, 0.3).R_a == pytest.approx(expected, rel=1e-14)

    def test_no_information_limit(self, gm):
        cov = build_sampled_covariance(gm, 20)
        pt = achievable_rd_point(gm, cov, 1e12)
        assert abs(pt.D_a_exact - mean_energy(gm)) < 1e-6
        assert pt.R_a < 1e-10

    def test_paths_agree(self, gm):
        cov = build_sampled_covariance(gm, 60)
        for th in np.geomspace(1e-5, 10, 7):
            np.testing.assert_allclose(distortion_a(gm, cov, th),
                                       distortion_a_cholesky(gm, cov, th), rtol=1e-10)

    def test_monotonicity(self, gm):
        cov = build_sampled_covariance(gm, 50)
        th = np.geomspace(1e-6, 1e2, 20)
        r = [rate_a(cov.mu, t) for t in th]
        d = [distortion_a(gm, cov, t) for t in th]
        assert np.all(np.diff(r) < -1e-12)
        assert np.all(np.diff(d) >= -1e-12)

    def test_db_bound(self, gm):
        cov = build_sampled_covariance(gm, 50)
        for th in np.geomspace(1e-6, 1e3, 20):
            db = distortion_b(cov.mu, th, gm.T0)
            assert db <= min(cov.N * th / gm.T0, np.sum(cov.mu) / gm.T0) * (1 + 1e-12)

    def test_zero_eigenvalues_ignored(self):
        mu = np.array([1.0, 0.0, 0.0])
        assert distortion_b(mu, 0.5, 1.0) == pytest.approx(1 / 3)
        assert rate_a(mu, 0.5) == pytest.approx(0.5 * math.log(3))

    def test_decomposition_in_window(self, gm, gm_params):
        N = 50
        cov = build_sampled_covariance(gm, N)
        win = unit_window(gm_params, N)
        g = grid_error_terms(gm, N)
        for th in np.geomspace(win.lower, win.upper, 20):
            assert achievable_rd_point(gm, cov, th, grid_terms=g).decomposition_check

    def test_inversion_lemma_split(self, gm):
        for N in (5, 20, 50):
            cov = build_sampled_covariance(gm, N)
            for th in (1e-4, 1e-2, 1.0):
                d_s, d_n = mil_split(gm, cov, th)
                np.testing.assert_allclose(d_s + d_n, distortion_a_cholesky(gm, cov, th),
                                           rtol=1e-8)

    def test_nonpositive_theta(self, gm):
        cov = build_sampled_covariance(gm, 5)
        with pytest.raises(DomainError):
            achievable_rd_point(gm, cov, 0.0)


class TestDaOfRate:
    def test_round_trip(self, gm):
        cov = build_sampled_covariance(gm, 40)
        for th in (1e-4, 1e-2, 0.5):
            d, t = d_a_of_rate(gm, cov, rate_a(cov.mu, th))
            assert t == pytest.approx(th, rel=1e-8)
            assert d == pytest.approx(distortion_a(gm, cov, th), rel=1e-8)

    def test_monotone(self, gm):
        cov = build_sampled_covariance(gm, 40)
        d = [d_a_of_rate(gm, cov, R)[0] for R in np.linspace(0.1, 20, 20)]
        assert np.all(np.diff(d) <= 1e-14)

    def test_methods_agree(self, gm):
        cov = build_sampled_covariance(gm, 40)
        a = d_a_of_rate(gm, cov, 3.0, method="spectral")[0]
        b = d_a_of_rate(gm, cov, 3.0, method="cholesky")[0]
        assert a == pytest.approx(b, rel=1e-10)

    def test_out_of_range(self, gm):
        cov = build_sampled_covariance(gm, 10)
        with pytest.raises(RangeError) as exc:
            d_a_of_rate(gm, cov, 1e6)
        lo, hi = exc.value.interval
        assert lo < hi < 1e6
        with pytest.raises(RangeError):
            theta_for_rate(cov.mu, 0.0)

    def test_constants_at_window_edges(self, gm, gm_params):
        N = 500
        cov = build_sampled_covariance(gm, N)
        win = unit_window(gm_params, N, kappa=1.0)
        lo_c, hi_c = dp_lower_const(gm_params, 1.0), da_upper_const(gm_params, 1.0)
        for R in win.rate_interval:
            d, _ = d_a_of_rate(gm, cov, R)
            assert lo_c <= d * R <= hi_c


class TestThetaWindow:
    def test_ordered(self, gm_params):
        for N in (10**3, 10**4, 10**5, 10**6):
            w = unit_window(gm_params, N)
            assert 0 < w.lower <= w.upper
            assert w.lower == w.lower_loose

    def test_upper_vanishes(self, gm_params):
        ups = [unit_window(gm_params, 1000 * 2**j).upper for j in range(12)]
        assert np.all(np.diff(ups) < 0)
        assert ups[-1] < 0.5 * ups[0]

    def test_lower_loose_times_power_diverges(self, gm_params):
        e = window_exponent(gm_params)
        assert e == pytest.approx(0.5)
        vals = [unit_window(gm_params, N).lower_loose * N**e for N in (10**3, 10**4, 10**5, 10**6)]
        assert np.all(np.diff(vals) > 0)
        # theta_LL ~ (log N)^(-x), so the product grows like N^e (log N)^(-x)
        expected = (10**3) ** e * (math.log(10**6) / math.log(10**3)) ** (-gm_params.x)
        assert vals[-1] / vals[0] == pytest.approx(expected, rel=1e-12)
        assert expected > 1

    def test_target_rate_flag(self, gm_params):
        w = unit_window(gm_params, 1000)
        lo, hi = w.rate_interval
        assert unit_window(gm_params, 1000, target=0.5 * (lo + hi)).target_ok
        assert not unit_window(gm_params, 1000, target=2 * hi).target_ok

    def test_empty(self, gm_params):
        with pytest.raises(WindowError):
            theta_window(gm_params, 10, log_np=-1.0, nu=0.25)
        with pytest.raises(WindowError):
            theta_window(gm_params, 10, log_np=1.0, nu=0.25, lower=1.0, upper=0.5)

    def test_overrides(self, gm_params):
        w = theta_window(gm_params, 100, log_np=math.log(100), nu=0.25, lower=1e-4, upper=1e-2)
        assert (w.lower, w.upper) == (1e-4, 1e-2)


class TestEigenvalueTail:
    def test_bound_in_window(self, gm, gm_params):
        for N in (500, 1000):
            cov = build_sampled_covariance(gm, N, vectors=False)
            win = unit_window(gm_params, N)
            for th in np.geomspace(win.lower, win.upper, 10):
                lhs, rhs = unconverged_tail(gm_params, cov, th, kappa=0.9)
                assert lhs <= rhs
