"""
Exponential Control Barrier Functions (relative degree 2)
Pairwise barrier, its derivatives under the conservative relative-velocity
approximation, the ECBF inequality G_ij and pole/initial-condition checks
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

import quad_dynamics as qd
from exceptions import DegenerateGeometryError, InvalidGainsError

logger = logging.getLogger(__name__)

BOUNDARY_TOL = 1e-12


@dataclass(frozen=True)
class EcbfGains:
    """Gains (alpha1, alpha2) and the positive pole magnitudes p1 <= p2"""
    alpha1: float
    alpha2: float
    p1: float
    p2: float

    @classmethod
    def from_alphas(cls, alpha1: float, alpha2: float) -> 'EcbfGains':
        p1, p2 = poles(alpha1, alpha2)
        return cls(alpha1=float(alpha1), alpha2=float(alpha2), p1=p1, p2=p2)

    def to_dict(self) -> dict:
        return {'alpha1': self.alpha1, 'alpha2': self.alpha2, 'p1': self.p1, 'p2': self.p2}


@dataclass(frozen=True)
class SafetyGeometry:
    """Safety margins plus the radial sizes of the two entities in a pair"""
    d_s: float
    d_so: float
    r_i: float
    r_j: float
    obstacle: bool = False

    def __post_init__(self):
        if min(self.d_s, self.d_so, self.r_i, self.r_j) < 0:
            raise ValueError("safety margins and radii must be nonnegative")
        if self.safety_distance <= 0:
            raise ValueError("safety distance must be positive")

    @property
    def margin(self) -> float:
        return self.d_so if self.obstacle else self.d_s

    @property
    def safety_distance(self) -> float:
        """d_s + r_i + r_j (or d_so + r_i + r_j for obstacles)"""
        return self.margin + self.r_i + self.r_j

    def for_pair(self, r_j: float, obstacle: bool) -> 'SafetyGeometry':
        return SafetyGeometry(self.d_s, self.d_so, self.r_i, r_j, obstacle)


@dataclass(frozen=True)
class RelativeState:
    """p_rel = p_j - p_i and v_rel = v_j - v_i"""
    p_rel: np.ndarray
    v_rel: np.ndarray

    @property
    def distance(self) -> float:
        return float(np.linalg.norm(self.p_rel))

    @property
    def speed(self) -> float:
        return float(np.linalg.norm(self.v_rel))

    @property
    def e_ij(self) -> np.ndarray:
        dist = self.distance
        if dist <= 0.0:
            raise DegenerateGeometryError("coincident positions, pair direction undefined")
        return self.p_rel / dist


class NuReport(dict):
    """Initial-condition report: nu0, nu1 and set membership"""

    @property
    def valid(self) -> bool:
        return self['in_c0'] and self['in_c1']


class GainsReport(dict):
    """Pole realness/positivity report for a gain pair"""

    @property
    def valid(self) -> bool:
        return self['valid']


def relative_state(p_i, v_i, p_j, v_j) -> RelativeState:
    return RelativeState(
        p_rel=np.asarray(p_j, dtype=float) - np.asarray(p_i, dtype=float),
        v_rel=np.asarray(v_j, dtype=float) - np.asarray(v_i, dtype=float),
    )


def poles(alpha1: float, alpha2: float) -> Tuple[float, float]:
    """
    Positive pole magnitudes of lambda^2 + alpha2*lambda + alpha1

    The literal roots are -p1 and -p2; the positivity conditions are stated on
    their magnitudes.

    Returns:
        (p1, p2) with p1 <= p2

    Raises:
        InvalidGainsError: complex or nonpositive poles
    """
    if not (alpha1 > 0 and alpha2 > 0):
        raise InvalidGainsError(f"alpha1={alpha1}, alpha2={alpha2}: gains must be positive")
    disc = alpha2 * alpha2 - 4.0 * alpha1
    if disc < 0:
        raise InvalidGainsError(
            f"alpha1={alpha1}, alpha2={alpha2}: complex poles (alpha2^2 - 4 alpha1 = {disc:.6g})"
        )
    p2 = 0.5 * (alpha2 + math.sqrt(disc))
    # Vieta for the small root avoids cancellation
    p1 = alpha1 / p2
    if p1 <= 0:
        raise InvalidGainsError(f"nonpositive pole p1={p1}")
    return p1, p2


def make_gains(alpha1: float, alpha2: float) -> EcbfGains:
    """Validated gains; raises InvalidGainsError on complex or nonpositive poles"""
    return EcbfGains.from_alphas(alpha1, alpha2)


def validate_gains(alpha1: float, alpha2: float) -> GainsReport:
    """Non-raising variant of poles() for reporting"""
    try:
        p1, p2 = poles(alpha1, alpha2)
    except InvalidGainsError as e:
        return GainsReport(alpha1=alpha1, alpha2=alpha2, p1=None, p2=None, valid=False, reason=str(e))
    return GainsReport(alpha1=alpha1, alpha2=alpha2, p1=p1, p2=p2, valid=True, reason='')


def barrier(rel: RelativeState, geom: SafetyGeometry) -> float:
    """h = ||p_rel||^2 - (d_s + r_i + r_j)^2"""
    return float(np.dot(rel.p_rel, rel.p_rel) - geom.safety_distance ** 2)


def conservative_vrel(rel: RelativeState) -> np.ndarray:
    """v~_rel = -||v_rel|| e_ij: the neighbor is always assumed to close in head-on"""
    return -rel.speed * rel.e_ij


def barrier_dot(rel: RelativeState, geom: Optional[SafetyGeometry] = None) -> float:
    """h_dot = 2 p_rel . v~_rel = -2 ||p_rel|| ||v_rel|| (never positive)"""
    return -2.0 * rel.distance * rel.speed


def barrier_dot_true(rel: RelativeState) -> float:
    """h_dot with the measured relative velocity"""
    return float(2.0 * np.dot(rel.p_rel, rel.v_rel))


def barrier_ddot(rel: RelativeState, accel_i) -> float:
    """h_ddot = 2 ||v~_rel||^2 - 2 p_rel . a_i, neighbor acceleration zero"""
    accel_i = np.asarray(accel_i, dtype=float)
    return float(2.0 * rel.speed ** 2 - 2.0 * np.dot(rel.p_rel, accel_i))


def ecbf_constraint(rel: RelativeState, geom: SafetyGeometry, gains: EcbfGains, accel_i) -> float:
    """G_ij = h_ddot + alpha2 h_dot + alpha1 h; the constraint holds iff G_ij >= 0"""
    return (
        barrier_ddot(rel, accel_i)
        + gains.alpha2 * barrier_dot(rel, geom)
        + gains.alpha1 * barrier(rel, geom)
    )


def ecbf_constraint_gradient(x_i: np.ndarray, u_i: np.ndarray, p_j: np.ndarray, v_j: np.ndarray,
                             geom: SafetyGeometry, gains: EcbfGains, params: qd.QuadParams,
                             frozen_speed: Optional[float] = None) -> Tuple[float, np.ndarray, np.ndarray]:
    """
    G_ij and its gradient with respect to the ego state and thrusts

    Args:
        x_i: ego state vector (13)
        u_i: ego rotor thrusts (4)
        p_j, v_j: neighbor position/velocity at the same time instant
        geom, gains, params: pair geometry, ECBF gains, ego vehicle
        frozen_speed: if given, ||v_rel|| is held at this value (ablation)

    Returns:
        (G, dG/dx shape (13,), dG/du shape (4,))
    """
    p_rel = p_j - x_i[qd.P_SLICE]
    v_rel = v_j - x_i[qd.V_SLICE]
    dist = float(np.linalg.norm(p_rel))
    accel = qd.translational_accel_vector(x_i, u_i, params)

    if frozen_speed is None:
        speed = float(np.linalg.norm(v_rel))
    else:
        speed = float(frozen_speed)

    h = dist * dist - geom.safety_distance ** 2
    h_dot = -2.0 * dist * speed
    h_ddot = 2.0 * speed * speed - 2.0 * float(np.dot(p_rel, accel))
    G = h_ddot + gains.alpha2 * h_dot + gains.alpha1 * h

    dG_dx = np.zeros(qd.NX)
    # position: p_rel depends on -p_i
    e = p_rel / dist if dist > 0 else np.zeros(3)
    dG_dx[qd.P_SLICE] = 2.0 * accel + 2.0 * gains.alpha2 * speed * e - 2.0 * gains.alpha1 * p_rel
    # velocity: v_rel depends on -v_i
    if frozen_speed is None and speed > 0:
        v_hat = v_rel / speed
        dG_dx[qd.V_SLICE] = -4.0 * v_rel + 2.0 * gains.alpha2 * dist * v_hat
    # attitude and thrust enter through the ego acceleration
    thrust = float(np.sum(u_i))
    dG_dx[qd.Q_SLICE] = -2.0 * (thrust / params.mass) * (p_rel @ qd.thrust_axis_jacobian(x_i[qd.Q_SLICE]))
    dG_du = np.full(qd.NU, -2.0 * float(np.dot(p_rel, qd.thrust_axis(x_i[qd.Q_SLICE]))) / params.mass)
    return G, dG_dx, dG_du


def validate_initial_conditions(rel: RelativeState, geom: SafetyGeometry, gains: EcbfGains) -> NuReport:
    """
    Membership of the initial pair state in C0 and C1

    nu0 = h, nu1 = h_dot + p1 h with the conservative h_dot. Sets are closed,
    so values at zero count as members and are flagged as boundary.
    """
    nu0 = barrier(rel, geom)
    nu1 = barrier_dot(rel, geom) + gains.p1 * nu0
    in_c0 = nu0 >= -BOUNDARY_TOL
    in_c1 = nu1 >= -BOUNDARY_TOL
    on_boundary = (in_c0 and abs(nu0) <= BOUNDARY_TOL) or (in_c1 and abs(nu1) <= BOUNDARY_TOL)
    if not (in_c0 and in_c1):
        logger.debug("Initial condition outside C0/C1: nu0=%.4g nu1=%.4g", nu0, nu1)
    return NuReport(nu0=nu0, nu1=nu1, in_c0=in_c0, in_c1=in_c1, on_boundary=on_boundary)
