"""
Tests for the quadrotor model
Hover equilibrium, mixer geometry, analytic Jacobians and RK4 sensitivities
"""

import numpy as np
import pytest

import quad_dynamics as qd
from exceptions import ConfigError, NonFiniteStateError


def random_state(rng):
    q = qd.quat_normalize(rng.normal(size=4))
    return np.concatenate([rng.normal(size=3), rng.normal(scale=1.5, size=3), q, rng.normal(scale=2.0, size=3)])


def central_difference(f, x, eps=1e-6):
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(x.size):
        step = np.zeros_like(x)
        step[k] = eps
        cols.append((f(x + step) - f(x - step)) / (2 * eps))
    return np.array(cols).T


def assert_jacobian_close(analytic, numeric, rel=1e-5):
    scale = max(1.0, float(np.max(np.abs(numeric))))
    assert np.max(np.abs(analytic - numeric)) <= rel * scale


def test_hover_is_equilibrium(params):
    """Level vehicle at rest with hover thrust has zero derivative"""
    state = qd.QuadState.at([1.0, -2.0, 1.5])
    xdot = qd.derivative(state, qd.MotorCommand.hover(params), params)
    np.testing.assert_allclose(xdot, np.zeros(qd.NX), atol=1e-12)


def test_zero_thrust_is_free_fall(params):
    state = qd.QuadState.at([0.0, 0.0, 2.0])
    nxt = qd.step_rk4(state, qd.MotorCommand(np.zeros(4)), params, 0.1)
    assert nxt.v[2] == pytest.approx(-params.gravity * 0.1)
    assert nxt.p[2] == pytest.approx(2.0 - 0.5 * params.gravity * 0.01)


def test_equal_thrusts_produce_no_torque(params):
    tau = params.torque_matrix() @ np.full(4, 2.0)
    np.testing.assert_allclose(tau, np.zeros(3), atol=1e-15)


def test_differential_thrust_torque_magnitude(params):
    """Shifting delta between opposite rotors yields sqrt(2) l delta about x and y"""
    delta = 0.3
    u = np.array([params.hover_thrust + delta, params.hover_thrust,
                  params.hover_thrust - delta, params.hover_thrust])
    tau = params.torque_matrix() @ u
    expected = np.sqrt(2.0) * params.arm_length * delta
    assert abs(tau[0]) == pytest.approx(expected)
    assert abs(tau[1]) == pytest.approx(expected)


def test_thrust_axis_matches_rotation_matrix():
    rng = np.random.default_rng(3)
    for _ in range(20):
        q = qd.quat_normalize(rng.normal(size=4))
        np.testing.assert_allclose(qd.thrust_axis(q), qd.quat_to_rotation(q)[:, 2], atol=1e-12)


def test_omega_and_xi_express_the_same_product():
    rng = np.random.default_rng(4)
    q = qd.quat_normalize(rng.normal(size=4))
    w = rng.normal(size=3)
    product = qd.quat_multiply(q, np.concatenate([[0.0], w]))
    np.testing.assert_allclose(qd.omega_matrix(w) @ q, product, atol=1e-12)
    np.testing.assert_allclose(qd.xi_matrix(q) @ w, product, atol=1e-12)


def test_state_jacobians_match_central_differences(params):
    rng = np.random.default_rng(7)
    for _ in range(25):
        x = random_state(rng)
        u = rng.uniform(params.u_min, params.u_max, size=4)
        A, B = qd.jacobians_vector(x, u, params)
        assert_jacobian_close(A, central_difference(lambda z: qd.derivative_vector(z, u, params), x))
        assert_jacobian_close(B, central_difference(lambda z: qd.derivative_vector(x, z, params), u))


def test_rk4_sensitivities_match_central_differences(params):
    rng = np.random.default_rng(11)
    dt = 0.1
    for _ in range(10):
        x = random_state(rng)
        u = rng.uniform(params.u_min, params.u_max, size=4)
        x_next, Phi_x, Phi_u = qd.rk4_sensitivities_vector(x, u, params, dt)
        np.testing.assert_allclose(x_next, qd.rk4_vector(x, u, params, dt), atol=1e-14)
        assert_jacobian_close(Phi_x, central_difference(lambda z: qd.rk4_vector(z, u, params, dt), x))
        assert_jacobian_close(Phi_u, central_difference(lambda z: qd.rk4_vector(x, z, params, dt), u))


def test_step_keeps_unit_quaternion(params):
    rng = np.random.default_rng(5)
    state = qd.QuadState.from_vector(random_state(rng))
    for _ in range(50):
        state = qd.step_rk4(state, qd.MotorCommand(rng.uniform(0, 6, size=4)), params, 0.01)
    assert np.linalg.norm(state.q) == pytest.approx(1.0, abs=1e-12)


def test_step_rejects_nonpositive_dt(params):
    with pytest.raises(ValueError):
        qd.step_rk4(qd.QuadState(), qd.MotorCommand.hover(params), params, 0.0)


def test_non_finite_input_raises(params):
    state = qd.QuadState.at([np.nan, 0.0, 1.0])
    with pytest.raises(NonFiniteStateError):
        qd.derivative(state, qd.MotorCommand.hover(params), params)
    with pytest.raises(NonFiniteStateError):
        qd.step_rk4(qd.QuadState(), qd.MotorCommand([np.inf, 0, 0, 0]), params, 0.1)


def test_state_vector_layout():
    state = qd.QuadState(p=[1, 2, 3], v=[4, 5, 6], q=[1, 0, 0, 0], w=[7, 8, 9])
    x = state.to_vector()
    assert x.shape == (qd.NX,)
    np.testing.assert_array_equal(qd.QuadState.from_vector(x).to_vector(), x)
    assert state.is_finite()


def test_invalid_params_raise_config_error():
    with pytest.raises(ConfigError):
        qd.QuadParams(mass=0.0)
    with pytest.raises(ConfigError):
        qd.QuadParams(u_min=3.0, u_max=2.0)


def test_acceleration_bound_consistency(params):
    bound = qd.max_translational_accel(params)
    assert bound.physics_bound == pytest.approx(4 * 6.0 - 9.81)
    assert bound.consistent
    assert not qd.max_translational_accel(qd.QuadParams(a_max=50.0)).consistent


def test_command_limits(params):
    assert qd.MotorCommand.hover(params).within_limits(params)
    assert not qd.MotorCommand([7.0, 0, 0, 0]).within_limits(params)
    np.testing.assert_array_equal(qd.hover_command(params).u, np.full(4, params.hover_thrust))


def test_derivative_is_affine_in_thrust(params):
    rng = np.random.default_rng(13)
    zero = np.zeros(4)
    for _ in range(25):
        x = random_state(rng)
        u1, u2 = rng.uniform(0.0, 3.0, size=(2, 4))
        f = [qd.derivative_vector(x, u, params) for u in (u1 + u2, u1, u2, zero)]
        residual = f[0] - f[1] - f[2] + f[3]
        np.testing.assert_allclose(residual, 0.0, atol=1e-10)

    state = qd.QuadState.from_vector(random_state(rng))
    a, b = qd.MotorCommand([1.0, 2.0, 0.5, 1.5]), qd.MotorCommand([0.3, 0.1, 1.2, 0.4])
    both = qd.MotorCommand(a.u + b.u)
    residual = (qd.derivative(state, both, params) - qd.derivative(state, a, params)
                - qd.derivative(state, b, params) + qd.derivative(state, qd.MotorCommand(zero), params))
    np.testing.assert_allclose(residual, 0.0, atol=1e-10)


def test_free_flight_conserves_translational_energy(params):
    state = qd.QuadState(p=[0.0, 0.0, 5.0], v=[1.2, -0.7, 2.0], q=qd.quat_normalize(np.array([1.0, 0.2, -0.1, 0.3])))
    off = qd.MotorCommand(np.zeros(4))

    def energy(s):
        return 0.5 * params.mass * float(s.v @ s.v) + params.mass * params.gravity * s.p[2]

    e0 = energy(state)
    for _ in range(100):
        state = qd.step_rk4(state, off, params, 0.01)
    assert energy(state) == pytest.approx(e0, rel=1e-9)
    np.testing.assert_allclose(state.w, 0.0)


def test_rk4_converges_at_fourth_order(params):
    """Full step against two half steps; halving dt shrinks the gap by at least 2^4"""
    x = np.concatenate([[0.0, 0.0, 1.0], [1.0, -0.5, 0.2],
                        qd.quat_normalize(np.array([1.0, 0.1, -0.05, 0.02])), [0.3, -0.2, 0.1]])
    u = params.hover_thrust + np.array([0.05, -0.03, 0.02, -0.04])

    def gap(dt):
        full = qd.rk4_vector(x, u, params, dt)
        halves = qd.rk4_vector(qd.rk4_vector(x, u, params, 0.5 * dt), u, params, 0.5 * dt)
        return float(np.linalg.norm(full - halves))

    gaps = [gap(dt) for dt in (0.1, 0.05, 0.025)]
    assert gaps[2] > 0.0
    for coarse, fine in zip(gaps, gaps[1:]):
        assert coarse / fine >= 2.0 ** 4
