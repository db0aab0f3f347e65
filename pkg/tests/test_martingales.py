import math

import numpy as np
import pytest

from gendiff.laws import Weight
from gendiff.martingales import (FAMILIES, Functional, MartingaleKind, ScopeError, check_martingale,
                                 eval_M_beta_a, eval_M_sf, eval_N_h0f, penalized_total_local_time,
                                 supermartingale_means, verify_penalization_limit)
from gendiff.measure import build_spec, builtin_measure


@pytest.fixture(scope="module")
def bm():
    return build_spec(builtin_measure("reflected_bm"))


@pytest.fixture(scope="module")
def expd():
    return build_spec(builtin_measure("exp_decay", rate=1.0))


class TestClosedForms:
    def test_M_sf_start(self, bm):
        # M^{s,f}_0 = x f(0) + int f
        f = Weight.exponential(2.0)
        assert eval_M_sf(bm, f, 0.7, 0.0) == pytest.approx(0.7 + 0.5)

    def test_M_sf_after_local_time(self, bm):
        # f(L) X + int_L^inf f
        f = Weight.exponential(1.0)
        assert eval_M_sf(bm, f, 0.3, 2.0) == pytest.approx(math.exp(-2) * 1.3)

    def test_N_h0f_start(self, expd):
        f = Weight.exponential(1.0)
        x = 0.5
        assert eval_N_h0f(expd, f, x, 0.0) == pytest.approx((1 - math.exp(-x)) + 1.0, rel=1e-8)

    def test_M_beta_a_start(self):
        # (1 + beta (x ^ a)) / (1 + beta a) with no local time yet
        v = eval_M_beta_a(1.0, 1.0, np.array([0.0, 0.5, 2.0]), np.zeros(3), np.zeros(3))
        np.testing.assert_allclose(v, [0.5, 0.75, 1.0])

    def test_scope(self):
        flat = build_spec(builtin_measure("tabulated", knots=[[0, 2], [1, 2]]))
        with pytest.raises(ScopeError):
            MartingaleKind("M_sf", Weight.exponential(1.0)).check_scope(flat)

    def test_kind_validation(self):
        with pytest.raises(ValueError):
            MartingaleKind("M_sf")
        with pytest.raises(ValueError):
            MartingaleKind("M_beta_a", beta=0.0, a=1.0)


class TestConstancy:
    def test_M_sf(self, bm):
        kind = MartingaleKind("M_sf", Weight.exponential(1.0))
        rows = check_martingale(bm, kind, 0.5, [0.5, 1.0], n=20_000, seed=1, dt=1e-3)
        assert all(r.passed for r in rows)
        assert rows[0].target == pytest.approx(1.5)

    def test_N_h0f_decreases(self, expd):
        f = Weight.exponential(1.0)
        means, se = supermartingale_means(expd, f, 0.5, [0.25, 0.5, 1.0], n=10_000, seed=2, dt=1e-3)
        d = np.diff(means)
        assert np.all(d <= 3 * np.asarray(se))


class TestFunctional:
    def test_parse(self):
        assert Functional.parse("1").name == "one"
        F = Functional.parse("xlt:1")
        np.testing.assert_array_equal(F([0.5, 1.5], [0, 0]), [1.0, 0.0])
        with pytest.raises(ValueError):
            Functional.parse("bogus")

    def test_families(self):
        assert FAMILIES == ("exp", "hit", "ilt", "ilt_u")


class TestLimits:
    def test_exp_closed_form_converges(self, bm):
        rep = verify_penalization_limit(bm, "exp", Weight.exponential(1.0), 0.0, [1e-1, 1e-2, 1e-3],
                                        closed_form=True, tol=1.0)
        gaps = [r.gap for r in rep.rows]
        assert rep.monotone
        assert gaps[-1] < gaps[0]
        with pytest.raises(ValueError):
            verify_penalization_limit(bm, "exp", Weight.exponential(1.0), 0.0, [0.1], closed_form=True)

    def test_hitting_gap_matches_analysis(self, bm):
        # for F = 1, a E_1[f(L_{T_a})] = 1 + (1 - 1/a) a/(a+1) and M^{s,f}_0 = 2: gap (1 + x)/(a + 1)
        rep = verify_penalization_limit(bm, "hit", Weight.exponential(1.0), 0.5, [4.0], x=1.0, n=20_000,
                                        seed=3, dt=1e-3)
        assert rep.rows[0].gap == pytest.approx(2 / 5, abs=5 * rep.rows[0].gap_se)

    def test_unknown_family(self, bm):
        with pytest.raises(ValueError):
            verify_penalization_limit(bm, "nope", Weight.exponential(1.0), 0.5, [1.0])


class TestTotalLocalTime:
    def test_ks(self, bm):
        from scipy import stats
        s = penalized_total_local_time(bm, Weight.exponential(1.0), 4000, seed=1)
        assert stats.kstest(s.L, "expon").pvalue > 0.001

    def test_transient_rejected(self):
        spec = build_spec(builtin_measure("inverse_cube"))
        with pytest.raises(ScopeError):
            penalized_total_local_time(spec, Weight.exponential(1.0), 100, seed=0)
