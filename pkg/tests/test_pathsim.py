import math

import numpy as np
import pytest

from gendiff.laws import ClockSpec
from gendiff.measure import build_spec, builtin_measure
from gendiff.pathsim import MCEstimate, Simulator, sample_clock, simulate


@pytest.fixture(scope="module")
def bm():
    return build_spec(builtin_measure("reflected_bm"))


class TestReproducibility:
    def test_same_seed_same_paths(self, bm):
        a = Simulator(bm, dt=1e-3, threads=1).run(0.3, 200, [0.5, 1.0], (0.5,), seed=7)
        b = Simulator(bm, dt=1e-3, threads=1).run(0.3, 200, [0.5, 1.0], (0.5,), seed=7)
        np.testing.assert_array_equal(a.X, b.X)
        np.testing.assert_array_equal(a.La, b.La)

    def test_thread_count_invariant(self, bm):
        a = Simulator(bm, dt=1e-3, threads=1).run(0.0, 300, [1.0], (), seed=3)
        b = Simulator(bm, dt=1e-3, threads=3).run(0.0, 300, [1.0], (), seed=3)
        np.testing.assert_array_equal(a.X, b.X)
        np.testing.assert_array_equal(a.L0, b.L0)

    def test_offset_selects_substream(self, bm):
        full = Simulator(bm, dt=1e-3, threads=1).run(0.0, 100, [0.5], (), seed=11)
        tail = Simulator(bm, dt=1e-3, threads=1).run(0.0, 40, [0.5], (), seed=11, offset=60)
        np.testing.assert_array_equal(full.X[60:], tail.X)

    def test_different_seed_differs(self, bm):
        a = Simulator(bm, dt=1e-3).run(0.0, 50, [1.0], (), seed=1)
        b = Simulator(bm, dt=1e-3).run(0.0, 50, [1.0], (), seed=2)
        assert not np.array_equal(a.X, b.X)


class TestMoments:
    def test_reflected_bm_marginals(self, bm):
        # |B_1| and L_1 share the half-normal law: mean sqrt(2/pi)
        pb = Simulator(bm, dt=1e-3).run(0.0, 20_000, [1.0], (), seed=5)
        assert np.all(pb.ok())
        target = math.sqrt(2 / math.pi)
        for v in (pb.X[:, 0], pb.L0[:, 0]):
            est = MCEstimate.from_values(v, 5)
            assert est.gap_ok(target, k=4)

    def test_level_local_time(self, bm):
        # occupation density w.r.t. m = 2 dx: E L^a_t = (1/2) int_0^t p_s(a) ds, p the reflected density
        a, t = 0.5, 1.0
        from scipy import integrate
        p = lambda s: 2 * math.exp(-a * a / (2 * s)) / math.sqrt(2 * math.pi * s)
        ref = integrate.quad(lambda s: p(s), 0, t)[0] / 2
        pb = Simulator(bm, dt=1e-3).run(0.0, 20_000, [t], (a,), seed=9)
        est = MCEstimate.from_values(pb.La[:, 0, 0], 9)
        assert est.gap_ok(ref, k=4)

    def test_exp_clock_local_time(self, bm):
        # under P_0, L_{e_q} is exponential with mean H = 1/sqrt(2q)
        q = 2.0
        cs = sample_clock(bm, ClockSpec.exponential(q), 0.0, 20_000, seed=4, dt=1e-4)
        est = MCEstimate.from_values(cs.L, 4)
        assert est.gap_ok(1 / math.sqrt(2 * q), k=4)


class TestSinglePath:
    def test_grid_and_monotone_local_time(self, bm):
        p = simulate(bm, 0.2, 0.5, dt=1e-3, tracked_levels=(0.1,), seed=0)
        assert len(p.times) == 501
        assert p.times[-1] == pytest.approx(0.5)
        assert np.all(np.diff(p.lt_zero) >= 0)
        assert np.all(np.diff(p.lt_levels[0.1]) >= 0)
        assert np.all(p.positions >= 0)


class TestMCEstimate:
    def test_from_values(self):
        v = np.arange(10.0)
        e = MCEstimate.from_values(v, 0)
        assert e.mean == pytest.approx(4.5)
        assert e.std_error == pytest.approx(np.std(v, ddof=1) / math.sqrt(10))
        assert e.gap_ok(4.5 + 2 * e.std_error)
        assert not e.gap_ok(4.5 + 4 * e.std_error)
