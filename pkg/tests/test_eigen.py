import math

import numpy as np
import pytest
from scipy import integrate

from gendiff.eigen import EigenConvergenceError, GridPolicy, h_q, resolvent, solve_eigen
from gendiff.harness import registry
from gendiff.measure import build_spec, builtin_measure


@pytest.fixture(scope="module")
def bm():
    return build_spec(builtin_measure("reflected_bm"))


@pytest.fixture(scope="module")
def expd():
    return build_spec(builtin_measure("exp_decay", rate=1.0))


def ode_phi(mprime, q, x_end):
    """phi'' = q m' phi, phi(0) = 1, phi'(0) = 0, plus int phi^-2 on the way."""
    def rhs(x, y):
        return [y[1], q * mprime(x) * y[0], y[0] ** -2]
    return integrate.solve_ivp(rhs, (0, x_end), [1.0, 0.0, 0.0], rtol=1e-12, atol=1e-14,
                               dense_output=True)


class TestReflectedBM:
    @pytest.mark.parametrize("q", [0.1, 0.5, 1.0, 2.0, 10.0])
    def test_H(self, bm, q):
        sol = solve_eigen(bm, q)
        assert sol.H * math.sqrt(2 * q) == pytest.approx(1.0, rel=1e-6)

    def test_eigenfunctions(self, bm):
        q = 0.8
        k = math.sqrt(2 * q)
        sol = solve_eigen(bm, q)
        x = np.array([0.0, 0.25, 1.0, 3.0])
        np.testing.assert_allclose(sol.phi_at(x), np.cosh(k * x), rtol=1e-7)
        # psi = H (phi - rho) loses absolute digits near 0
        np.testing.assert_allclose(sol.psi_at(x), np.sinh(k * x) / k, rtol=1e-7, atol=1e-10)
        np.testing.assert_allclose(sol.rho_at(x), np.exp(-k * x), rtol=1e-6)

    def test_resolvent_symmetric_and_closed_form(self, bm):
        q = 1.0
        sol = solve_eigen(bm, q)
        k = math.sqrt(2 * q)
        for x, y in [(0.2, 0.9), (1.5, 0.3)]:
            r = resolvent(sol, x, y)
            assert r == pytest.approx(resolvent(sol, y, x), rel=1e-12)
            # r(x, y) = cosh(k min) e^{-k max} / k
            assert r == pytest.approx(math.cosh(k * min(x, y)) * math.exp(-k * max(x, y)) / k, rel=1e-6)

    def test_h_q_null_recurrent(self, bm):
        # h_q(x) = H - r_q(0, x) -> x as q -> 0
        sol = solve_eigen(bm, 1e-6)
        assert h_q(sol, 0.5) == pytest.approx(0.5, rel=2e-3)


class TestExpDecay:
    def test_against_ode(self, expd):
        q = 1.0
        sol = solve_eigen(expd, q)
        ref = ode_phi(lambda x: 2 * math.exp(-x), q, 200.0)
        for x in (0.5, 2.0, 5.0):
            assert sol.phi_at(x) == pytest.approx(ref.sol(x)[0], rel=1e-7)
        # phi grows linearly: add the tail int_X^inf (a + b y)^-2 dy = 1 / (b (a + b X))
        p, dp, I = ref.y[:, -1]
        tail = 1.0 / (dp * p)
        assert sol.H == pytest.approx(I + tail, rel=1e-6)


class TestRegistry:
    @pytest.mark.parametrize("name", sorted(registry()))
    def test_wronskian(self, name):
        sol = solve_eigen(registry()[name], 1.0)
        assert sol.wronskian_defect <= 1e-8
        assert np.isfinite(sol.H) and sol.H > 0

    def test_rho_positive_decreasing(self):
        sol = solve_eigen(registry()["power_drift_nu2"], 0.5)
        r = sol.rho[: len(sol.rho) // 2]
        assert np.all(r > 0)
        assert np.all(np.diff(r) <= 1e-14)


class TestErrors:
    def test_bad_q(self, bm):
        with pytest.raises(ValueError):
            solve_eigen(bm, 0.0)

    def test_nonconvergence_reported(self, bm):
        with pytest.raises((EigenConvergenceError, ValueError)):
            solve_eigen(bm, 1.0, GridPolicy(n_nodes=64, max_picard=1, picard_tol=1e-30))
