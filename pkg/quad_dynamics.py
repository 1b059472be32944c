"""
Quadrotor Rigid-Body Dynamics
Control-affine quaternion model, analytic Jacobians and RK4 propagation

State vector layout (13): p(3) v(3) q(4, scalar first) w(3)
Input vector (4): per-rotor thrusts in the cross "X" configuration
"""

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Tuple

import numpy as np

import config
from exceptions import ConfigError, NonFiniteStateError

logger = logging.getLogger(__name__)

NX = 13
NU = 4
E3 = np.array([0.0, 0.0, 1.0])

P_SLICE = slice(0, 3)
V_SLICE = slice(3, 6)
Q_SLICE = slice(6, 10)
W_SLICE = slice(10, 13)

# Rotor layout, body x forward: front-right, front-left, rear-left, rear-right
ROTOR_SIGNS_X = np.array([1.0, 1.0, -1.0, -1.0])
ROTOR_SIGNS_Y = np.array([-1.0, 1.0, 1.0, -1.0])
ROTOR_SPIN = np.array([1.0, -1.0, 1.0, -1.0])


@dataclass
class QuadParams:
    """Physical parameters of one vehicle"""
    mass: float = config.MASS
    inertia_diag: Tuple[float, float, float] = config.INERTIA_DIAG
    arm_length: float = config.ARM_LENGTH
    torque_coeff: float = config.TORQUE_COEFF
    u_min: float = config.U_MIN
    u_max: float = config.U_MAX
    v_max: float = config.V_MAX
    a_max: float = config.A_MAX
    radius: float = config.ROBOT_RADIUS
    gravity: float = config.GRAVITY

    def __post_init__(self):
        self.inertia_diag = tuple(float(j) for j in self.inertia_diag)
        if self.mass <= 0:
            raise ConfigError("mass must be positive", 'vehicle', 'mass')
        if len(self.inertia_diag) != 3 or min(self.inertia_diag) <= 0:
            raise ConfigError("three positive principal moments required", 'vehicle', 'inertia_diag')
        if not 0 <= self.u_min < self.u_max:
            raise ConfigError("need 0 <= u_min < u_max", 'vehicle', 'u_max')
        if self.v_max < 0 or self.a_max < 0 or self.radius < 0:
            raise ConfigError("v_max, a_max and radius must be nonnegative", 'vehicle', 'v_max')

    @property
    def inertia(self) -> np.ndarray:
        return np.diag(self.inertia_diag)

    @property
    def inertia_inv(self) -> np.ndarray:
        return np.diag(1.0 / np.asarray(self.inertia_diag))

    @property
    def hover_thrust(self) -> float:
        """Per-rotor thrust balancing gravity"""
        return self.mass * self.gravity / 4.0

    def torque_matrix(self) -> np.ndarray:
        """Rows (tau_x, tau_y, tau_z) as a linear map of the four rotor thrusts"""
        d = self.arm_length / np.sqrt(2.0)
        return np.vstack([
            d * ROTOR_SIGNS_Y,
            -d * ROTOR_SIGNS_X,
            self.torque_coeff * ROTOR_SPIN,
        ])

    def to_dict(self) -> dict:
        return {
            'mass': self.mass,
            'inertia_diag': list(self.inertia_diag),
            'arm_length': self.arm_length,
            'torque_coeff': self.torque_coeff,
            'u_min': self.u_min,
            'u_max': self.u_max,
            'v_max': self.v_max,
            'a_max': self.a_max,
            'radius': self.radius,
            'gravity': self.gravity,
        }


@dataclass
class QuadState:
    """Position, velocity, attitude quaternion and body rate of one vehicle"""
    p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    w: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float).reshape(3)
        self.v = np.asarray(self.v, dtype=float).reshape(3)
        self.q = np.asarray(self.q, dtype=float).reshape(4)
        self.w = np.asarray(self.w, dtype=float).reshape(3)

    @classmethod
    def at(cls, position) -> 'QuadState':
        """Level vehicle at rest"""
        return cls(p=position)

    @classmethod
    def from_vector(cls, x) -> 'QuadState':
        x = np.asarray(x, dtype=float)
        return cls(p=x[P_SLICE], v=x[V_SLICE], q=x[Q_SLICE], w=x[W_SLICE])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.p, self.v, self.q, self.w])

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.to_vector())))


@dataclass
class MotorCommand:
    """Four per-rotor thrusts in newtons"""
    u: np.ndarray = field(default_factory=lambda: np.zeros(NU))

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float).reshape(NU)

    @classmethod
    def hover(cls, params: QuadParams) -> 'MotorCommand':
        return cls(np.full(NU, params.hover_thrust))

    def within_limits(self, params: QuadParams, tol: float = 0.0) -> bool:
        return bool(np.all(self.u >= params.u_min - tol) and np.all(self.u <= params.u_max + tol))


class AccelBound(NamedTuple):
    a_max: float
    physics_bound: float
    consistent: bool


def quat_normalize(q: np.ndarray) -> np.ndarray:
    return q / np.linalg.norm(q)


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a ⊗ b, scalar first"""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_to_rotation(q: np.ndarray) -> np.ndarray:
    """Body-to-inertial rotation matrix of a unit quaternion"""
    qw, qx, qy, qz = q
    return np.array([
        [1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qw * qz), 2 * (qx * qz + qw * qy)],
        [2 * (qx * qy + qw * qz), 1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qw * qx)],
        [2 * (qx * qz - qw * qy), 2 * (qy * qz + qw * qx), 1 - 2 * (qx * qx + qy * qy)],
    ])


def thrust_axis(q: np.ndarray) -> np.ndarray:
    """Third column of R(q): body z axis expressed in the inertial frame"""
    qw, qx, qy, qz = q
    return np.array([
        2 * (qx * qz + qw * qy),
        2 * (qy * qz - qw * qx),
        1 - 2 * (qx * qx + qy * qy),
    ])


def thrust_axis_jacobian(q: np.ndarray) -> np.ndarray:
    """d thrust_axis / dq, shape (3, 4)"""
    qw, qx, qy, qz = q
    return 2.0 * np.array([
        [qy, qz, qw, qx],
        [-qx, -qw, qz, qy],
        [0.0, -2 * qx, -2 * qy, 0.0],
    ])


def omega_matrix(w: np.ndarray) -> np.ndarray:
    """Omega(w) with q ⊗ (0, w) = Omega(w) @ q"""
    wx, wy, wz = w
    return np.array([
        [0.0, -wx, -wy, -wz],
        [wx, 0.0, wz, -wy],
        [wy, -wz, 0.0, wx],
        [wz, wy, -wx, 0.0],
    ])


def xi_matrix(q: np.ndarray) -> np.ndarray:
    """Xi(q) with q ⊗ (0, w) = Xi(q) @ w"""
    qw, qx, qy, qz = q
    return np.array([
        [-qx, -qy, -qz],
        [qw, -qz, qy],
        [qz, qw, -qx],
        [-qy, qx, qw],
    ])


def skew(a: np.ndarray) -> np.ndarray:
    return np.array([
        [0.0, -a[2], a[1]],
        [a[2], 0.0, -a[0]],
        [-a[1], a[0], 0.0],
    ])


def _check_finite(x: np.ndarray, u: np.ndarray):
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u))):
        raise NonFiniteStateError(f"non-finite state or command: x={x}, u={u}")


def translational_accel_vector(x: np.ndarray, u: np.ndarray, params: QuadParams) -> np.ndarray:
    """v_dot = (1/m) R(q) e3 sum(u) - g e3"""
    return (np.sum(u) / params.mass) * thrust_axis(x[Q_SLICE]) - params.gravity * E3


def derivative_vector(x: np.ndarray, u: np.ndarray, params: QuadParams) -> np.ndarray:
    """Array form of derivative(); no validation"""
    q = x[Q_SLICE]
    w = x[W_SLICE]
    J = np.asarray(params.inertia_diag)
    tau = params.torque_matrix() @ u

    xdot = np.empty(NX)
    xdot[P_SLICE] = x[V_SLICE]
    xdot[V_SLICE] = translational_accel_vector(x, u, params)
    xdot[Q_SLICE] = 0.5 * omega_matrix(w) @ q
    xdot[W_SLICE] = (tau - np.cross(w, J * w)) / J
    return xdot


def jacobians_vector(x: np.ndarray, u: np.ndarray, params: QuadParams) -> Tuple[np.ndarray, np.ndarray]:
    """Analytic (df/dx, df/du) of derivative_vector"""
    q = x[Q_SLICE]
    w = x[W_SLICE]
    J = params.inertia
    J_inv = params.inertia_inv
    thrust = np.sum(u)

    A = np.zeros((NX, NX))
    A[P_SLICE, V_SLICE] = np.eye(3)
    A[V_SLICE, Q_SLICE] = (thrust / params.mass) * thrust_axis_jacobian(q)
    A[Q_SLICE, Q_SLICE] = 0.5 * omega_matrix(w)
    A[Q_SLICE, W_SLICE] = 0.5 * xi_matrix(q)
    A[W_SLICE, W_SLICE] = J_inv @ (skew(J @ w) - skew(w) @ J)

    B = np.zeros((NX, NU))
    B[V_SLICE, :] = np.outer(thrust_axis(q), np.ones(NU)) / params.mass
    B[W_SLICE, :] = J_inv @ params.torque_matrix()
    return A, B


def derivative(state: QuadState, cmd: MotorCommand, params: QuadParams) -> np.ndarray:
    """
    Continuous-time state derivative f(x) + g(x) u

    Args:
        state: vehicle state
        cmd: rotor thrusts (limits are enforced by the solver, not here)
        params: vehicle parameters

    Returns:
        13-vector (p_dot, v_dot, q_dot, w_dot)

    Raises:
        NonFiniteStateError: on NaN/inf input
    """
    x = state.to_vector()
    _check_finite(x, cmd.u)
    return derivative_vector(x, cmd.u, params)


def state_jacobians(state: QuadState, cmd: MotorCommand, params: QuadParams) -> Tuple[np.ndarray, np.ndarray]:
    x = state.to_vector()
    _check_finite(x, cmd.u)
    return jacobians_vector(x, cmd.u, params)


def translational_accel(state: QuadState, cmd: MotorCommand, params: QuadParams) -> np.ndarray:
    return translational_accel_vector(state.to_vector(), cmd.u, params)


def rk4_vector(x: np.ndarray, u: np.ndarray, params: QuadParams, dt: float) -> np.ndarray:
    """One RK4 step on the state vector with quaternion renormalization"""
    k1 = derivative_vector(x, u, params)
    k2 = derivative_vector(x + 0.5 * dt * k1, u, params)
    k3 = derivative_vector(x + 0.5 * dt * k2, u, params)
    k4 = derivative_vector(x + dt * k3, u, params)
    x_next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    x_next[Q_SLICE] = quat_normalize(x_next[Q_SLICE])
    return x_next


def rk4_sensitivities_vector(x: np.ndarray, u: np.ndarray, params: QuadParams,
                             dt: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """RK4 step plus d x_next / dx and d x_next / du, renormalization included"""
    eye = np.eye(NX)

    k1 = derivative_vector(x, u, params)
    A1, B1 = jacobians_vector(x, u, params)
    K1x, K1u = A1, B1

    x2 = x + 0.5 * dt * k1
    k2 = derivative_vector(x2, u, params)
    A2, B2 = jacobians_vector(x2, u, params)
    K2x = A2 @ (eye + 0.5 * dt * K1x)
    K2u = A2 @ (0.5 * dt * K1u) + B2

    x3 = x + 0.5 * dt * k2
    k3 = derivative_vector(x3, u, params)
    A3, B3 = jacobians_vector(x3, u, params)
    K3x = A3 @ (eye + 0.5 * dt * K2x)
    K3u = A3 @ (0.5 * dt * K2u) + B3

    x4 = x + dt * k3
    k4 = derivative_vector(x4, u, params)
    A4, B4 = jacobians_vector(x4, u, params)
    K4x = A4 @ (eye + dt * K3x)
    K4u = A4 @ (dt * K3u) + B4

    x_next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    Phi_x = eye + (dt / 6.0) * (K1x + 2.0 * K2x + 2.0 * K3x + K4x)
    Phi_u = (dt / 6.0) * (K1u + 2.0 * K2u + 2.0 * K3u + K4u)

    q_raw = x_next[Q_SLICE]
    norm = np.linalg.norm(q_raw)
    q_unit = q_raw / norm
    N = (np.eye(4) - np.outer(q_unit, q_unit)) / norm
    x_next[Q_SLICE] = q_unit
    Phi_x[Q_SLICE, :] = N @ Phi_x[Q_SLICE, :]
    Phi_u[Q_SLICE, :] = N @ Phi_u[Q_SLICE, :]
    return x_next, Phi_x, Phi_u


def step_rk4(state: QuadState, cmd: MotorCommand, params: QuadParams, dt: float) -> QuadState:
    """
    Classical 4-stage Runge-Kutta step, input held constant

    Args:
        state: current state
        cmd: rotor thrusts held over the step
        params: vehicle parameters
        dt: step length in seconds, > 0

    Returns:
        Next state with a renormalized quaternion
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    x = state.to_vector()
    _check_finite(x, cmd.u)
    return QuadState.from_vector(rk4_vector(x, cmd.u, params, dt))


def step_rk4_sensitivities(state: QuadState, cmd: MotorCommand, params: QuadParams, dt: float):
    x = state.to_vector()
    _check_finite(x, cmd.u)
    return rk4_sensitivities_vector(x, cmd.u, params, dt)


def max_translational_accel(params: QuadParams) -> AccelBound:
    """
    Certified acceleration bound used by the range analysis

    Returns:
        AccelBound with the configured a_max, the thrust-limited value
        4*u_max/mass - gravity and a consistency flag
    """
    physics_bound = 4.0 * params.u_max / params.mass - params.gravity
    consistent = params.a_max <= physics_bound
    if not consistent:
        logger.warning(
            "Configured a_max=%.3f exceeds thrust-limited bound %.3f m/s^2",
            params.a_max, physics_bound,
        )
    return AccelBound(a_max=params.a_max, physics_bound=physics_bound, consistent=consistent)


def hover_command(params: QuadParams) -> MotorCommand:
    return MotorCommand.hover(params)
