import math

import mpmath as mp
import numpy as np
import pytest
from scipy import integrate, special

from gendiff.special import (CROSSOVER, bessel_i, bessel_i_scaled, bessel_i_series, fit_bound_constant,
                             rho_density, rho_tilde_density)


class TestBesselI:
    @pytest.mark.parametrize("nu", [0, 1])
    def test_scaled_matches_scipy(self, nu):
        x = np.concatenate([np.linspace(0, 30, 301), np.geomspace(30, 1e6, 50)])
        np.testing.assert_allclose(bessel_i_scaled(nu, x), special.ive(nu, x), rtol=1e-13, atol=1e-300)

    @pytest.mark.parametrize("x", [0.1, 1.0, 7.5, 19.9, 20.1, 55.0, 400.0])
    def test_mpmath_oracle(self, x):
        for nu in (0, 1):
            ref = float(mp.besseli(nu, x))
            assert bessel_i(nu, x) == pytest.approx(ref, rel=1e-13)

    def test_crossover_branches_agree(self):
        x = np.linspace(CROSSOVER - 2, CROSSOVER + 2, 41)
        for nu in (0, 1):
            s = bessel_i_series(nu, x, "series")
            a = bessel_i_series(nu, x, "asymptotic")
            np.testing.assert_allclose(s, a, rtol=1e-12)

    def test_small_argument(self):
        assert bessel_i(0, 0.0) == 1.0
        assert bessel_i(1, 0.0) == 0.0
        assert bessel_i(1, 1e-8) == pytest.approx(5e-9, rel=1e-12)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            bessel_i_scaled(2, 1.0)
        with pytest.raises(ValueError):
            bessel_i_scaled(0, -1.0)

    def test_bound_constant(self):
        # I_0(1) bounds the ratio on (0, 1]; e^-z I_0(z) <= e^-1 I_0(1) above 1
        c = fit_bound_constant()
        assert c == pytest.approx(special.iv(0, 1.0), rel=1e-6)

    def test_bounds_hold_with_fitted_constant(self):
        c = fit_bound_constant()
        lo = np.random.default_rng(1).uniform(1e-9, 1.0, 5000)
        hi = np.random.default_rng(2).uniform(1.0, 700.0, 5000)
        for nu in (0, 1):
            assert np.all(bessel_i(nu, lo) <= c * lo ** nu * (1 + 1e-12))
            assert np.all(bessel_i(nu, hi) <= c * np.exp(hi) * (1 + 1e-12))


class TestKernels:
    @pytest.mark.parametrize("a,u", [(0.5, 0.5), (1.0, 2.0), (2.0, 1.0)])
    def test_normalization(self, a, u):
        mass = integrate.quad(lambda y: rho_density(a, u, y), 0, np.inf, epsabs=1e-13, limit=400)[0]
        assert math.exp(-u / a) + mass == pytest.approx(1.0, abs=1e-9)

    def test_density_mpmath(self):
        a, u, y = 0.7, 1.3, 2.1
        ref = mp.e ** (-(u + y) / a) * mp.sqrt(u / y) / a * mp.besseli(1, 2 * mp.sqrt(u * y) / a)
        assert rho_density(a, u, y) == pytest.approx(float(ref), rel=1e-13)

    def test_tilde_laplace(self):
        # int e^{-c y} e^{-(u+y)/a} I_0(2 sqrt(uy)/a) dy = e^{-u/a} e^{u/(a^2 p)} / p, p = c + 1/a
        a, u, c = 1.5, 0.8, 0.4
        p = c + 1 / a
        val = integrate.quad(lambda y: math.exp(-c * y) * rho_tilde_density(a, u, y), 0, np.inf)[0]
        assert val == pytest.approx(math.exp(-u / a + u / (a * a * p)) / p, rel=1e-9)

    def test_no_overflow_far_tail(self):
        v = rho_density(0.01, 50.0, 60.0)
        assert np.isfinite(v) and v >= 0
