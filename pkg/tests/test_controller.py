import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from helpers import from_doc, funnel_1d
from consolidated_control import catalog
from consolidated_control.bounds import PerfFunnelParams, finite_time_bound
from consolidated_control.constraints import alpha
from consolidated_control.controller import (ConstraintTransformSingularity, ControllerConfig,
                                             IntermediateFunnelSingularity, control_u,
                                             intermediate_error, normalize_and_transform, s1,
                                             s_i, transform_alpha)
from consolidated_control.sim import resolve_auto

LBO = from_doc([{"kind": "lower", "channel": "x1", "lower": 0}], 1)


def cfg(r=1, n=1, gains=None, upsilon=8.0, theta0=1.0):
    funnels = [[PerfFunnelParams(0.1, 1.0, theta0)] * n for _ in range(r - 1)]
    return ControllerConfig(r, n, gains or [1.0] * r, upsilon, funnels)


class TestTransformAlpha:
    def test_zero_at_upsilon(self):
        assert transform_alpha(8.0, 8.0) == 0.0

    def test_one_at_upsilon_e(self):
        assert transform_alpha(8.0 * math.e, 8.0) == pytest.approx(1.0, abs=1e-15)

    def test_tiny_margin(self):
        assert transform_alpha(1e-12, 8.0) == pytest.approx(math.log(1e-12 / 8), rel=1e-15)
        assert transform_alpha(1e-12, 8.0) == pytest.approx(-29.71, abs=0.01)

    @pytest.mark.parametrize("e", [0.0, -1.0])
    def test_singular(self, e):
        with pytest.raises(ConstraintTransformSingularity):
            transform_alpha(e, 8.0)


class TestS1:
    def test_hand_value(self):
        assert s1(LBO, cfg(), 0.0, 0.0, [1.0]) == pytest.approx([math.log(8.0)], rel=1e-15)
        assert s1(LBO, cfg(), 0.0, 0.0, [1.0])[0] == pytest.approx(2.0794, abs=1e-4)

    def test_zero_gradient(self):
        assert s1(funnel_1d(2.0), cfg(), -1.0, 0.0, [0.0]).tolist() == [0.0]

    def test_zero_at_upsilon(self):
        assert s1(LBO, cfg(), 0.0, 0.0, [8.0]).tolist() == [0.0]

    def test_violated(self):
        with pytest.raises(ConstraintTransformSingularity):
            s1(LBO, cfg(), 2.0, 0.0, [1.0])

    def test_gradient_of_barrier_potential(self):
        cons = catalog.catalog_set("example_1").consolidation()
        c = cfg(n=2, gains=[1.7])
        rho, t = -0.5, 0.0

        def V(x):
            return 0.5 * math.log((alpha(cons, t, x) - rho) / 8.0) ** 2

        for x in ([0.3, -0.2], [1.5, 2.0], [-1.2, -2.5]):
            x = np.array(x)
            g = np.array([(V(x + d) - V(x - d)) / 2e-6 for d in np.eye(2) * 1e-6])
            np.testing.assert_allclose(s1(cons, c, rho, t, x), -1.7 * g, rtol=1e-4)

    def test_blows_up_near_bound(self):
        norms = []
        for k in range(1, 31):
            x = 8.0 * 2.0 ** -k
            norms.append(abs(s1(LBO, cfg(), 0.0, 0.0, [x])[0]))
        assert np.all(np.diff(norms) > 0)


class TestIntermediate:
    def test_error(self):
        assert intermediate_error([1.0, 2.0], [0.5, -1.0]).tolist() == [0.5, 3.0]
        with pytest.raises(ValueError):
            intermediate_error([1.0], [1.0, 2.0])

    def test_zero_error(self):
        e_hat, eps, xi = normalize_and_transform([0.0, 0.0], [(0.5, 0.0), (2.0, 0.0)])
        assert e_hat.tolist() == [0.0, 0.0] and eps.tolist() == [0.0, 0.0]
        assert xi.tolist() == [4.0, 1.0]

    def test_half(self):
        e_hat, eps, xi = normalize_and_transform([0.5], [(1.0, -3.0)])
        assert eps[0] == pytest.approx(math.log(3.0), rel=1e-15)
        assert xi[0] == pytest.approx(8.0 / 3.0, rel=1e-15)
        assert s_i(1.0, xi, eps)[0] == pytest.approx(-(8 / 3) * math.log(3), rel=1e-15)
        assert s_i(1.0, xi, eps)[0] == pytest.approx(-2.9297, abs=1e-4)

    @pytest.mark.parametrize("e", [1.0, -1.5])
    def test_outside_funnel(self, e):
        with pytest.raises(IntermediateFunnelSingularity):
            normalize_and_transform([0.0, e], [(1.0, 0.0), (1.0, 0.0)])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            s_i(1.0, [1.0, 2.0], [1.0])

    @given(st.floats(-0.99, 0.99), st.floats(0.05, 5.0))
    def test_odd_and_gradient_form(self, eh, th):
        e = eh * th
        _, eps, xi = normalize_and_transform([e], [(th, 0.0)])
        _, eps_m, _ = normalize_and_transform([-e], [(th, 0.0)])
        assert eps_m[0] == pytest.approx(-eps[0], abs=1e-12)
        # s = -k d/de (eps^2 / 2)
        d = 1e-7 * th
        V = lambda v: 0.5 * normalize_and_transform([v], [(th, 0.0)])[1][0] ** 2
        if abs(eh) < 0.95:
            fd = (V(e + d) - V(e - d)) / (2 * d)
            assert s_i(2.0, xi, eps)[0] == pytest.approx(-2.0 * fd, rel=1e-4, abs=1e-9)


class TestControlU:
    def test_first_order_law(self):
        u, diag = control_u(LBO, cfg(), (0.0, 0.0), 0.0, [1.0])
        assert u.tolist() == s1(LBO, cfg(), 0.0, 0.0, [1.0]).tolist()
        assert diag.e_hat == []

    def test_on_manifold_gives_zero(self):
        c = cfg(r=2)
        x1 = 1.0
        s = s1(LBO, c, 0.0, 0.0, [x1])[0]
        u, diag = control_u(LBO, c, (0.0, 0.0), 0.0, [x1, s])
        assert u.tolist() == [0.0] and diag.e_hat[0].tolist() == [0.0]

    def test_scenario_a_recomposition(self):
        s = resolve_auto(catalog.scenario("scenario_a_outside"))
        x0 = s.x0
        u, diag = control_u(s.consolidation, s.controller,
                            finite_time_bound(s.bound.params, 0.0), 0.0, x0)
        ref, parts = oracles.scenario_a_control_at_zero(x0)
        assert s.bound.params.rho0 == pytest.approx(parts["rho0"], rel=1e-14)
        assert diag.alpha == pytest.approx(parts["alpha"], rel=1e-14)
        np.testing.assert_allclose(diag.s[0], parts["s1"], rtol=1e-12)
        np.testing.assert_allclose([p.theta0 for p in s.controller.funnels[0]],
                                   parts["theta0"], rtol=1e-12)
        np.testing.assert_allclose(u, ref, rtol=1e-11)

    def test_pure(self):
        s = resolve_auto(catalog.scenario("scenario_a_outside"))
        b = finite_time_bound(s.bound.params, 0.4)
        x = np.array([2.1, 3.05, 0.4, -0.3])
        u1, _ = control_u(s.consolidation, s.controller, b, 0.4, x)
        u2, _ = control_u(s.consolidation, s.controller, b, 0.4, x)
        assert u1.tobytes() == u2.tobytes()

    def test_abort_threshold_alpha(self):
        # e_alpha = 5e-10 is valid for the transform but aborts the loop
        with pytest.raises(ConstraintTransformSingularity) as exc:
            control_u(LBO, cfg(), (1.0 - 5e-10, 0.0), 2.5, [1.0])
        assert exc.value.t == 2.5
        assert math.isfinite(transform_alpha(5e-10, 8.0))

    def test_abort_threshold_funnel(self):
        c = cfg(r=2)
        s = s1(LBO, c, 0.0, 0.0, [1.0])[0]
        with pytest.raises(IntermediateFunnelSingularity) as exc:
            control_u(LBO, c, (0.0, 0.0), 0.0, [1.0, s + (1.0 - 5e-10)])
        assert (exc.value.i, exc.value.j) == (2, 0)

    def test_nan_state_aborts(self):
        c = cfg(r=2)
        with pytest.raises(IntermediateFunnelSingularity):
            control_u(LBO, c, (0.0, 0.0), 0.0, [1.0, float("nan")])

    @pytest.mark.parametrize("kw", [dict(gains=[1.0, 0.0]), dict(upsilon=0.0)])
    def test_invalid_config(self, kw):
        args = dict(r=2, n=1, gains=[1.0, 1.0], upsilon=8.0,
                    funnels=[[PerfFunnelParams(0.1, 1.0, 1.0)]])
        args.update(kw)
        with pytest.raises(ValueError):
            ControllerConfig(**args)

    def test_funnel_table_shape(self):
        with pytest.raises(ValueError):
            ControllerConfig(2, 2, [1.0, 1.0], 8.0, [[PerfFunnelParams(0.1, 1.0, 1.0)]])
