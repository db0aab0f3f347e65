import math

import numpy as np
import pytest

from gendiff.eigen import solve_eigen
from gendiff.harness import registry
from gendiff.laws import Weight
from gendiff.measure import build_spec, builtin_measure
from gendiff.penalized import (DecompositionError, HTransformKind, bessel3_from_zero,
                               compare_decomposition_vs_reweighting, decomposition_marginals,
                               resolvent_hc, resolvent_hc_integral, resolvent_hc_mc, sample_decomposition,
                               transform_spec, weighted_ks)


@pytest.fixture(scope="module")
def bm():
    return build_spec(builtin_measure("reflected_bm"))


def elastic_bm_resolvent(q, c, x, y):
    """Resolvent density (w.r.t. 2 dy) of reflected BM killed at rate c dL_t, by first passage to 0."""
    k = math.sqrt(2 * q)
    r = lambda a, b: math.cosh(k * min(a, b)) * math.exp(-k * max(a, b)) / k
    return r(x, y) - c * r(x, 0) * r(0, y) / (1 + c * r(0, 0))


class TestTransformBM:
    def test_measures(self, bm):
        ts = transform_spec(bm, HTransformKind("s", 1.0))
        assert ts.hc0 == pytest.approx(1.0)
        assert ts.m_density(1.0) == pytest.approx(8.0)
        assert ts.s_hc(1.0) == pytest.approx(0.5)
        assert ts.m_hc(1.0) == pytest.approx(14 / 3, rel=1e-8)
        assert ts.killing_rate(0.7) == 0.0

    @pytest.mark.parametrize("c", [0.5, 1.0, 3.0])
    @pytest.mark.parametrize("x,y", [(0.0, 0.0), (0.3, 1.2), (2.0, 0.5)])
    def test_resolvent_vs_elastic_killing(self, bm, c, x, y):
        q = 1.0
        ts = transform_spec(bm, HTransformKind("s", c), solve_eigen(bm, q))
        hc = lambda z: z + 1 / c
        ref = elastic_bm_resolvent(q, c, x, y) / (hc(x) * hc(y))
        assert resolvent_hc(ts, q, x, y) == pytest.approx(ref, rel=1e-6)

    def test_H_hc_closed_form(self, bm):
        ts = transform_spec(bm, HTransformKind("s", 1.0), solve_eigen(bm, 1.0))
        h = 1 / math.sqrt(2)
        assert ts.H_hc == pytest.approx(h / (1 + h), rel=1e-8)

    def test_wrong_q_rejected(self, bm):
        ts = transform_spec(bm, HTransformKind("s", 1.0), solve_eigen(bm, 1.0))
        with pytest.raises(ValueError):
            resolvent_hc(ts, 2.0, 0.0, 0.0)

    def test_mc_route(self, bm):
        q, x = 1.0, 0.5
        ts = transform_spec(bm, HTransformKind("s", 1.0), solve_eigen(bm, q))
        g = lambda y: np.where(np.abs(y - 1) < 1, (1 - (y - 1) ** 2) ** 2, 0.0)
        exact = resolvent_hc_integral(ts, q, x, g, (0.0, 2.0))
        mc = resolvent_hc_mc(ts, q, x, g, 10_000, seed=4, dt=1e-3)
        assert mc.gap_ok(exact, k=4)


class TestRoutes:
    @pytest.mark.parametrize("name,h", [("reflected_bm", "s"), ("exp_decay", "h0"), ("exp_decay", "s"),
                                        ("power_drift_nu2", "s"), ("bessel_alpha0.25", "s")])
    def test_two_routes_agree(self, name, h):
        spec = registry()[name]
        ts = transform_spec(spec, HTransformKind(h, 1.0), solve_eigen(spec, 1.0))
        gp, gr = ts.route_gap()
        assert gp <= 1e-6 and gr <= 1e-6


class TestValidation:
    def test_small_c(self):
        with pytest.raises(ValueError):
            HTransformKind("s", 0.0)

    def test_bad_h(self):
        with pytest.raises(ValueError):
            HTransformKind("x", 1.0)

    def test_regular_boundary_rejects_s(self):
        with pytest.raises(ValueError):
            transform_spec(registry()["flat_unit"], HTransformKind("s", 1.0))

    def test_grid_mismatch(self, bm):
        spec = registry()["exp_decay"]
        with pytest.raises(ValueError):
            transform_spec(spec, HTransformKind("s", 1.0), solve_eigen(registry()["power_drift_nu2"], 1.0))

    def test_decomposition_needs_bm(self):
        with pytest.raises(DecompositionError):
            decomposition_marginals(0.5, Weight.exponential(1.0), 1.0, 10, 0, spec=registry()["exp_decay"])


class TestDecomposition:
    def test_bessel3_mean(self):
        t = 2.0
        r = bessel3_from_zero(t, 40_000, seed=1)
        se = r.std(ddof=1) / math.sqrt(len(r))
        assert abs(r.mean() - 2 * math.sqrt(2 * t / math.pi)) < 4 * se

    def test_start_at_zero_always_ilt_branch(self):
        s = decomposition_marginals(0.0, Weight.exponential(1.0), 1.0, 500, seed=2, dt=1e-3)
        assert np.all(s.bridge_first)

    def test_post_g_segments(self):
        # segments after g exist only on the inverse-local-time branch and stay off 0
        s = decomposition_marginals(0.5, Weight.exponential(1.0), 1.0, 2000, seed=3, dt=1e-3)
        done = s.bridge_first & (s.g > 0)
        assert np.all(s.L >= 0)
        assert np.all(np.isnan(s.post_g_min[~done]))
        pos = s.post_g_min[np.isfinite(s.post_g_min)]
        assert np.all(pos > 0)

    def test_single_path(self):
        p, g, first = sample_decomposition(0.5, Weight.exponential(1.0), 1.0, seed=5, dt=1e-3)
        assert len(p.times) == 1001
        assert np.all(p.positions >= 0)
        if first and g < 1.0:
            k = int(np.searchsorted(p.times, g)) + 1
            assert np.all(p.positions[k:] > 0)

    def test_two_samplers_agree(self):
        rep = compare_decomposition_vs_reweighting(1.0, Weight.exponential(1.0), 4000, seed=6, dt=1e-3)
        assert rep.ks_X.pvalue > 0.001 and rep.ks_L.pvalue > 0.001
        assert rep.post_g_positive


class TestWeightedKS:
    def test_identical(self):
        a = np.linspace(0, 1, 101)
        r = weighted_ks(a, a, np.ones_like(a))
        assert r.statistic < 1e-12 and r.pvalue == pytest.approx(1.0)
        assert r.n_eff == pytest.approx(101)

    def test_weights_shift_distribution(self):
        rng = np.random.default_rng(0)
        b = rng.random(20_000)
        # weight 2y turns U(0,1) into the density 2y, which is the law of max(U1, U2)
        a = np.maximum(rng.random(5000), rng.random(5000))
        assert weighted_ks(a, b, 2 * b).pvalue > 0.001
        assert weighted_ks(a, b, np.ones_like(b)).pvalue < 1e-6
