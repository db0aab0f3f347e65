import math

import numpy as np
import pytest

from gendiff.measure import (BoundaryClass, MeasureError, build_spec, builtin_measure, classify_boundary,
                             h0, spec_from_config)


class TestClassification:
    @pytest.mark.parametrize("nu,expected", [(0.5, BoundaryClass.TYPE2_NATURAL),
                                             (1.0, BoundaryClass.TYPE2_NATURAL),
                                             (2.0, BoundaryClass.TYPE2_NATURAL),
                                             (3.0, BoundaryClass.ENTRANCE)])
    def test_power_drift(self, nu, expected):
        assert classify_boundary(builtin_measure("power_drift", c=1.0, nu=nu)) == expected

    @pytest.mark.parametrize("alpha", [0.25, 0.5, 0.75])
    def test_bessel(self, alpha):
        assert classify_boundary(builtin_measure("bessel", alpha=alpha)) == BoundaryClass.TYPE1_NATURAL

    def test_simple_cases(self):
        assert classify_boundary(builtin_measure("reflected_bm")) == BoundaryClass.TYPE1_NATURAL
        assert classify_boundary(builtin_measure("exp_decay", rate=1.0)) == BoundaryClass.ENTRANCE
        flat = builtin_measure("tabulated", knots=[[0, 2], [1, 2]])
        assert classify_boundary(flat) == BoundaryClass.REGULAR_REFLECTING

    def test_inverse_cube_is_transient(self):
        spec = build_spec(builtin_measure("inverse_cube"))
        assert spec.ell == 1.0
        assert spec.pi0 == 0.0


class TestSpec:
    def test_exp_decay_constants(self):
        spec = build_spec(builtin_measure("exp_decay", rate=1.0))
        assert spec.m_infty == pytest.approx(2.0, rel=1e-8)
        assert spec.pi0 == pytest.approx(0.5, rel=1e-8)

    def test_h0_exp_decay(self):
        # int_0^x m((0, y]) dy = 2(x - 1 + e^{-x}), so h0(x) = 1 - e^{-x}
        spec = build_spec(builtin_measure("exp_decay", rate=1.0))
        x = np.array([0.0, 0.3, 1.0, 4.0])
        np.testing.assert_allclose(h0(spec, x), 1 - np.exp(-x), atol=1e-9)

    def test_h0_null_recurrent_is_scale(self):
        spec = build_spec(builtin_measure("reflected_bm"))
        assert spec.pi0 == 0.0
        assert h0(spec, 2.5) == pytest.approx(2.5)

    def test_config_round_trip(self):
        m = builtin_measure("power_drift", c=1.0, nu=2.0)
        spec = spec_from_config(m.to_config())
        assert spec.boundary_class == BoundaryClass.TYPE2_NATURAL
        assert spec.measure.to_config() == m.to_config()

    def test_power_drift_chart_consistent(self):
        m = builtin_measure("power_drift", c=1.0, nu=2.0)
        ch = m.chart
        t = np.array([0.1, 0.7, 1.9])
        x = ch.x(t)
        np.testing.assert_allclose(ch.t_of_x(x), t, rtol=1e-8)

    @pytest.mark.parametrize("knots", [[[0, 1]], [[0.5, 1], [1, 1]], [[0, 1], [1, -1]], [[0, 1], [0, 1]]])
    def test_bad_tabulated(self, knots):
        with pytest.raises(MeasureError):
            builtin_measure("tabulated", knots=knots)

    def test_unknown_density(self):
        with pytest.raises(MeasureError):
            builtin_measure("nope")

    def test_bad_params(self):
        with pytest.raises(MeasureError):
            builtin_measure("bessel", alpha=1.5)
        with pytest.raises(MeasureError):
            builtin_measure("power_drift", c=1.0, nu=-1.0)
