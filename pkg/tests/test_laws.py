import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gendiff.eigen import solve_eigen
from gendiff.laws import (ClockSpec, Weight, green_occupation, law_exp_clock, law_hitting_clock,
                          law_inverse_lt_clock, law_inverse_lt_clock_from_x, law_L_infty, q_total_local_time)
from gendiff.measure import build_spec, builtin_measure


@pytest.fixture(scope="module")
def bm():
    return build_spec(builtin_measure("reflected_bm"))


def laplace_exp(f, lam):
    # int f(u) e^{-lam u} du for f = amp e^{-c u}
    return f.amp / (f.c + lam)


class TestWeight:
    @given(c=st.floats(0.01, 50), amp=st.floats(0.1, 10))
    @settings(max_examples=40, deadline=None)
    def test_exponential_config_round_trip(self, c, amp):
        f = Weight.exponential(c, amp)
        assert Weight.from_config(f.to_config()) == f
        assert f.integral() == pytest.approx(amp / c, rel=1e-12)
        assert f.laplace(0.3) == pytest.approx(laplace_exp(f, 0.3), rel=1e-12)

    def test_parse(self):
        assert Weight.parse("exp:2") == Weight.exponential(2.0)
        assert Weight.parse("ind0").kind == "indicator_at_zero"
        with pytest.raises(ValueError):
            Weight.parse("gauss:1")

    def test_tabulated_laplace(self):
        f = Weight.tabulated([0, 1, 2], [1.0, 0.5, 0.0])
        lam = 0.7
        from scipy import integrate
        ref = integrate.quad(lambda u: np.interp(u, [0, 1, 2], [1, 0.5, 0]) * math.exp(-lam * u), 0, 2,
                             points=[1])[0]
        assert f.laplace(lam) == pytest.approx(ref, rel=1e-10)

    def test_clock_parse(self):
        assert ClockSpec.parse("ilt:1,2") == ClockSpec.inverse_local_time(1, 2)
        assert str(ClockSpec.parse("hit:3")) == "hit:3"
        with pytest.raises(ValueError):
            ClockSpec.parse("exp:-1")


class TestExpClock:
    @pytest.mark.parametrize("x", [0.0, 0.4, 1.7])
    def test_bm_first_passage_oracle(self, bm, x):
        # from x, 0 is hit before e_q w.p. e^{-kx}; then L_{e_q} ~ Exp(mean H)
        q, f = 0.6, Weight.exponential(1.3)
        k = math.sqrt(2 * q)
        H = 1 / k
        ref = (1 - math.exp(-k * x)) * f.f0 + math.exp(-k * x) * laplace_exp(f, 1 / H) / H
        assert law_exp_clock(bm, solve_eigen(bm, q), f, x) == pytest.approx(ref, rel=1e-6)

    def test_mass_one(self, bm):
        f = Weight.exponential(1e-12)
        assert law_exp_clock(bm, solve_eigen(bm, 2.0), f, 0.3) == pytest.approx(1.0, rel=1e-6)


class TestHittingClock:
    @pytest.mark.parametrize("x,a", [(0.0, 1.0), (0.5, 2.0), (1.0, 4.0)])
    def test_gamblers_ruin_oracle(self, bm, x, a):
        # reach a before 0 w.p. x/a; from 0, L_{T_a} ~ Exp(mean a)
        f = Weight.exponential(0.8)
        ref = x / a * f.f0 + (1 - x / a) * laplace_exp(f, 1 / a) / a
        assert law_hitting_clock(bm, f, x, a) == pytest.approx(ref, rel=1e-12)

    def test_degenerate(self, bm):
        with pytest.warns(UserWarning):
            assert law_hitting_clock(bm, Weight.exponential(1.0), 3.0, 2.0) == 1.0


class TestInverseLocalTime:
    @pytest.mark.parametrize("a,u,beta", [(0.5, 1.0, 1.0), (1.0, 1.0, 1.0), (2.0, 0.5, 3.0)])
    def test_laplace_identity(self, a, u, beta):
        law = law_inverse_lt_clock(a, u)
        assert law.laplace(beta) == pytest.approx(math.exp(-u * beta / (1 + beta * a)), abs=1e-8)

    def test_from_x_beyond_a(self, bm):
        f = Weight.exponential(1.0)
        a, u = 1.0, 2.0
        at_a = math.exp(-u / (1 + a))
        assert law_inverse_lt_clock_from_x(bm, 3.0, a, u, f) == pytest.approx(at_a, rel=1e-12)

    def test_from_zero_tabulated_matches_exponential(self, bm):
        knots = np.linspace(0, 20, 401)
        ftab = Weight.tabulated(knots, np.exp(-knots), tail_rate=1.0)
        fexp = Weight.exponential(1.0)
        a, u = 1.0, 1.0
        assert law_inverse_lt_clock_from_x(bm, 0.3, a, u, ftab) == pytest.approx(
            law_inverse_lt_clock_from_x(bm, 0.3, a, u, fexp), rel=5e-4)


class TestTransientAndRecurrent:
    def test_L_infty_inverse_cube(self):
        spec = build_spec(builtin_measure("inverse_cube"))
        f = Weight.exponential(2.0)
        # from 0, L_inf ~ Exp(mean l) with l = 1
        assert law_L_infty(spec, f, 0.0) == pytest.approx(1 / 3, rel=1e-12)
        assert law_L_infty(spec, f, 1.0) == pytest.approx(1.0)

    def test_green_occupation_needs_pi0(self, bm):
        with pytest.raises(ValueError):
            green_occupation(bm, Weight.exponential(1.0), 0.0)

    def test_total_local_time_law(self, bm):
        law = q_total_local_time("s", bm, Weight.exponential(1.0))
        assert law.total_mass() == pytest.approx(1.0, abs=1e-8)
        assert law.survival(1.0) == pytest.approx(math.exp(-1.0), rel=1e-6)
