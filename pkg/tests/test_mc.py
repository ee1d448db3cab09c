import math

import numpy as np
import pytest

from gsnbounds.channel import af_design, af_rate
from gsnbounds.errors import DomainError, ModelError
from gsnbounds.mc import (
    BLOCK,
    block_rng,
    distortion_measure,
    psd_factor,
    simulate_af_sinr,
    simulate_separation_scheme,
)
from gsnbounds.process import mean_energy, tabulated_kernel
from gsnbounds.rd import dp_of_rate
from gsnbounds.sampled import build_sampled_covariance, rate_a


class TestHelpers:
    def test_block_streams_independent_of_schedule(self):
        a = block_rng(5, 3).standard_normal(4)
        b = block_rng(5, 3).standard_normal(4)
        c = block_rng(5, 4).standard_normal(4)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_distortion_of_exact_reconstruction(self):
        S = np.random.default_rng(0).standard_normal((5, 30))
        w = np.full(30, 1 / 30)
        np.testing.assert_array_equal(distortion_measure(S, S, w, 1.0), 0.0)

    def test_distortion_measure_value(self):
        w = np.array([0.25, 0.75])
        d = distortion_measure(np.array([[1.0, 2.0]]), np.array([[0.0, 0.0]]), w, 2.0)
        assert d[0] == pytest.approx((0.25 + 3.0) / 2)

    def test_psd_factor(self):
        C = np.array([[2.0, 1.0], [1.0, 2.0]])
        F = psd_factor(C)
        np.testing.assert_allclose(F @ F.T, C, rtol=1e-14)

    def test_psd_round_off_clamped(self):
        C = np.ones((3, 3))
        C[0, 1] = C[1, 0] = 1 + 1e-13
        F = psd_factor(C)
        np.testing.assert_allclose(F @ F.T, C, atol=1e-12)

    def test_non_psd_rejected(self):
        with pytest.raises(ModelError):
            psd_factor(np.array([[1.0, 2.0], [2.0, 1.0]]))


class TestSeparationScheme:
    def test_reproducible(self, gm):
        a = simulate_separation_scheme(gm, 8, 0.2, trials=1500, seed=11)
        b = simulate_separation_scheme(gm, 8, 0.2, trials=1500, seed=11)
        assert a.estimate == b.estimate and a.stderr == b.stderr
        c = simulate_separation_scheme(gm, 8, 0.2, trials=1500, seed=12)
        assert c.estimate != a.estimate

    def test_tuple_seed(self, gm):
        a = simulate_separation_scheme(gm, 5, 0.2, trials=500, seed=(3, 5))
        b = simulate_separation_scheme(gm, 5, 0.2, trials=500, seed=(3, 5))
        assert a.estimate == b.estimate

    def test_prefix_stable_across_trial_counts(self, gm):
        # the first block is identical whatever the total trial count
        a = simulate_separation_scheme(gm, 6, 0.2, trials=BLOCK, seed=2)
        b = simulate_separation_scheme(gm, 6, 0.2, trials=2 * BLOCK, seed=2)
        c = simulate_separation_scheme(gm, 6, 0.2, trials=BLOCK, seed=(2,))
        assert a.estimate == c.estimate
        assert b.estimate != a.estimate

    def test_no_information(self, gm):
        r = simulate_separation_scheme(gm, 10, 1e9, trials=5000, seed=0)
        assert abs(r.estimate - mean_energy(gm)) <= 3 * r.stderr

    def test_matches_analytic(self, gm):
        r = simulate_separation_scheme(gm, 12, 0.1, trials=20000, seed=4)
        assert r.extra["theta_prime"] == pytest.approx(0.1 / 11)
        assert abs(r.estimate - r.analytic) <= 3 * r.stderr

    def test_stderr_halves(self, gm):
        a = simulate_separation_scheme(gm, 10, 0.1, trials=2000, seed=6)
        b = simulate_separation_scheme(gm, 10, 0.1, trials=8000, seed=6)
        assert b.stderr / a.stderr == pytest.approx(0.5, rel=0.2)

    def test_never_below_distortion_rate_function(self, gm, gm_params):
        for N, s2 in ((10, 0.05), (20, 0.1), (30, 1.0)):
            r = simulate_separation_scheme(gm, N, s2, trials=5000, seed=N)
            cov = build_sampled_covariance(gm, N, vectors=False)
            R = rate_a(cov.mu, r.extra["theta_prime"])
            assert r.estimate >= dp_of_rate(gm_params, R).value - 3 * r.stderr

    def test_stderr_definition(self, gm):
        r = simulate_separation_scheme(gm, 4, 0.5, trials=400, seed=0)
        assert r.trials == 400 and r.stderr > 0

    def test_invalid_arguments(self, gm):
        with pytest.raises(DomainError):
            simulate_separation_scheme(gm, 1, 0.1, trials=100)
        with pytest.raises(DomainError):
            simulate_separation_scheme(gm, 5, 0.0, trials=100)
        with pytest.raises(DomainError):
            simulate_separation_scheme(gm, 5, 0.1, trials=50)
        with pytest.raises(DomainError):
            simulate_separation_scheme(gm, 5, 0.1, trials=100, quad_grid=20)

    def test_invalid_table_rejected(self):
        # a symmetric table passing the diagonal check but not positive semidefinite
        grid = np.linspace(0, 1, 3)
        vals = np.array([[1.0, 0.9, -0.9], [0.9, 1.0, 0.9], [-0.9, 0.9, 1.0]])
        model = tabulated_kernel(grid, vals)
        with pytest.raises(ModelError):
            simulate_separation_scheme(model, 3, 0.1, trials=100)


class TestAfSinr:
    def test_unit_gains(self, unit_scenario):
        d = af_design(unit_scenario, 10)
        r = simulate_af_sinr(unit_scenario, d, 10, trials=20000, seed=1)
        assert r.analytic == pytest.approx(af_rate(unit_scenario, d, 10).sinr, rel=1e-14)
        assert abs(r.estimate - r.analytic) <= 3 * r.stderr

    def test_reproducible(self, unit_scenario):
        d = af_design(unit_scenario, 10)
        a = simulate_af_sinr(unit_scenario, d, 10, trials=3000, seed=8)
        b = simulate_af_sinr(unit_scenario, d, 10, trials=3000, seed=8)
        assert (a.estimate, a.stderr) == (b.estimate, b.stderr)

    def test_noiseless(self, unit_scenario):
        d = af_design(unit_scenario, 10)
        r = simulate_af_sinr(unit_scenario, d, 10, trials=200, noise_scale=0.0)
        assert r.estimate == math.inf and "infinite-sinr" in r.flags
        assert r.extra["beamforming_gain"] == pytest.approx((9 * d.zeta) ** 2 * 1.0)

    def test_roughly_linear_in_N(self, unit_scenario):
        Ns = np.array([10, 40, 160])
        est = []
        for N in Ns:
            d = af_design(unit_scenario, int(N))
            est.append(simulate_af_sinr(unit_scenario, d, int(N), trials=20000, seed=2).estimate)
        slope = np.polyfit(np.log(Ns), np.log(est), 1)[0]
        assert slope == pytest.approx(1.0, abs=0.15)

    def test_random_gains(self, unit_scenario):
        from gsnbounds.channel import ChannelScenario
        sc = ChannelScenario(unit_scenario.power, 0.5, 1.0, "uniform", seed=3)
        d = af_design(sc, 15)
        r = simulate_af_sinr(sc, d, 15, trials=20000, seed=5, node=4)
        assert abs(r.estimate - r.analytic) <= 3 * r.stderr
