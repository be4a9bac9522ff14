import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from consolidated_control.plant import (RobotParams, aux_rhs, integrator_chain, no_disturbance,
                                        default_disturbance, plant_rhs, robot_matrices,
                                        robot_model, robot_rhs, upsilon)
from consolidated_control.sim import rk4_step

P = RobotParams()
FREE = RobotParams(D1=0.0, D2=0.0, disturbance=no_disturbance)


def open_loop(p, x0, theta0, u_of_t, horizon, h):
    model = robot_model(p)

    def f(t, y):
        return np.concatenate((plant_rhs(model, t, y[:4], u_of_t(t), y[4:]),
                               aux_rhs(model, t, y[:4], y[4:])))

    y, t = np.array(list(x0) + [theta0], dtype=float), 0.0
    for _ in range(int(round(horizon / h))):
        y = rk4_step(f, t, y, h)
        t += h
    return y


def u_test(t):
    return np.array([2.0 * math.sin(1.3 * t), 0.5 * math.cos(0.7 * t) - 0.2])


class TestIntegratorChain:
    def test_single(self):
        m = integrator_chain(3, 1)
        assert plant_rhs(m, 0.0, [1.0, 2.0, 3.0], [4.0, 5.0, 6.0]).tolist() == [4.0, 5.0, 6.0]

    def test_double(self):
        m = integrator_chain(2, 2)
        assert plant_rhs(m, 0.0, [1.0, 2.0, 3.0, 4.0], [5.0, 6.0]).tolist() == [3, 4, 5, 6]

    def test_shape_checked(self):
        with pytest.raises(ValueError):
            plant_rhs(integrator_chain(2, 2), 0.0, [1.0, 2.0], [0.0, 0.0])


class TestRobotModel:
    def test_matrices_at_zero_heading(self):
        np.testing.assert_allclose(upsilon(P, 0.0), [[1, 0], [0, 5]], atol=1e-15)
        M, C, D, d = robot_matrices(P, 0.0, np.zeros(2), 0.0)
        np.testing.assert_allclose(M, np.diag([3.6, 1.0125]), rtol=1e-15, atol=1e-15)

    def test_equilibrium(self):
        _, x2dot, thdot = robot_rhs(FREE, 0.3, (np.zeros(2), np.zeros(2), 0.7), np.zeros(2))
        assert x2dot.tolist() == [0.0, 0.0] and thdot == 0.0

    @pytest.mark.parametrize("theta", np.linspace(-math.pi, math.pi, 13))
    def test_inertia_positive_definite(self, theta):
        M = robot_matrices(P, 0.0, np.zeros(2), theta)[0]
        assert np.allclose(M, M.T, atol=1e-14)
        assert np.linalg.eigvalsh(M).min() > 0

    @given(st.floats(-10, 10), st.floats(-3, 3), st.floats(-3, 3), st.floats(0, 20))
    def test_periodic_in_heading(self, theta, v1, v2, t):
        x2, u = np.array([v1, v2]), np.array([0.3, -1.1])
        a = robot_rhs(P, t, (np.zeros(2), x2, theta), u)
        b = robot_rhs(P, t, (np.zeros(2), x2, theta + 2 * math.pi), u)
        np.testing.assert_allclose(a[1], b[1], rtol=1e-9, atol=1e-9)
        assert a[2] == pytest.approx(b[2], rel=1e-9, abs=1e-9)

    @given(st.floats(-4, 4), st.floats(-3, 3), st.floats(-3, 3), st.floats(0, 20),
           st.floats(-50, 50), st.floats(-50, 50))
    def test_direct_solve(self, theta, v1, v2, t, u1, u2):
        # M x2' = u + d - (C + D) x2, solved with the assembled matrices
        x2, u = np.array([v1, v2]), np.array([u1, u2])
        M, C, D, d = robot_matrices(P, t, x2, theta)
        ref = np.linalg.solve(M, u + d - (C + D) @ x2)
        got = robot_rhs(P, t, (np.zeros(2), x2, theta), u)[1]
        scale = max(1.0, np.abs(ref).max())
        assert np.abs(got - ref).max() <= 1e-12 * scale

    @given(st.floats(-4, 4), st.floats(-3, 3), st.floats(-3, 3), st.floats(0, 20))
    def test_generic_embedding_exact(self, theta, v1, v2, t):
        x = np.array([0.5, -0.2, v1, v2])
        u = np.array([1.5, -0.3])
        model = robot_model(P)
        gen = plant_rhs(model, t, x, u, [theta])
        x1d, x2d, thd = robot_rhs(P, t, (x[:2], x[2:], theta), u)
        # exact equality; only the sign of a zero may differ between the routes
        np.testing.assert_array_equal(gen, np.concatenate((x1d, x2d)))
        assert aux_rhs(model, t, x, [theta]).tolist() == [thd]

    def test_disturbance_expression(self):
        t = 1.1
        d = default_disturbance(t)
        assert d[0] == pytest.approx(0.75 * math.sin(3.3 + math.pi / 3)
                                     + 1.5 * math.cos(1.1 + 3 * math.pi / 7), rel=1e-15)
        assert d[1] == pytest.approx(-2.4 * math.exp(math.cos(1.1 + math.pi / 3) + 1)
                                     * math.sin(1.1), rel=1e-15)


class TestAgainstBodyFrame:
    @pytest.mark.parametrize("x0, theta0", [([1.0, -0.5, 0.2, 0.4], 0.3),
                                            ([0.0, 0.0, -1.0, 0.5], -2.0)])
    def test_hand_trajectory(self, x0, theta0):
        h = 2.5e-4
        ours = open_loop(P, x0, theta0, u_test, 2.0, h)
        p_ref, v_ref, th_ref = oracles.unicycle_hand(x0[:2], x0[2:], theta0, u_test, 2.0, h)
        np.testing.assert_allclose(ours[:2], p_ref, rtol=1e-7, atol=1e-7)
        np.testing.assert_allclose(ours[2:4], v_ref, rtol=1e-6, atol=2e-6)
        assert ours[4] == pytest.approx(th_ref, rel=1e-7, abs=1e-7)

    def test_routes_converge(self):
        x0, th0 = [1.0, -0.5, 0.2, 0.4], 0.3
        errs = []
        for h in (2e-3, 1e-3):
            ours = open_loop(P, x0, th0, u_test, 1.0, h)
            ref = oracles.unicycle_hand(x0[:2], x0[2:], th0, u_test, 1.0, h)[0]
            errs.append(np.abs(ours[:2] - ref).max())
        # both routes are fourth order; their difference shrinks accordingly
        assert errs[1] < errs[0] / 8


class TestEnergy:
    @staticmethod
    def energy(y):
        M = robot_matrices(FREE, 0.0, y[2:4], y[4])[0]
        return 0.5 * y[2:4] @ M @ y[2:4]

    def test_conserved_without_damping(self):
        model = robot_model(FREE)

        def f(t, y):
            return np.concatenate((plant_rhs(model, t, y[:4], np.zeros(2), y[4:]),
                                   aux_rhs(model, t, y[:4], y[4:])))

        y0 = np.array([0.0, 0.0, 0.8, -0.3, 0.4])
        errs = []
        for h in (0.02, 0.01):
            y1 = rk4_step(f, 0.0, y0, h)
            errs.append(abs(self.energy(y1) - self.energy(y0)))
        assert errs[0] < 1e-6
        assert errs[1] < errs[0] / 16
