"""
Decentralized NMPC with ECBF safety constraints
Direct multiple shooting, Gauss-Newton SQP with a real-time-iteration mode,
condensed QP subproblems and minimum-jerk reference generation
"""

import logging
import time
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

import config
import ecbf_core as ecbf
import quad_dynamics as qd
from exceptions import ConfigError, QPInfeasibleError
from qp_solver import QPResult, kkt_residuals, solve_qp

logger = logging.getLogger(__name__)

STATUS_SOLVED = 'solved'
STATUS_MAX_ITERS = 'max-iters'
STATUS_INFEASIBLE = 'infeasible-QP'

MIN_JERK_PEAK = 15.0 / 8.0


def default_state_weights() -> np.ndarray:
    return np.concatenate([
        np.full(3, config.Q_POSITION),
        np.full(3, config.Q_VELOCITY),
        np.full(4, config.Q_QUATERNION),
        np.full(3, config.Q_RATE),
    ])


@dataclass
class OcpConfig:
    """Horizon, weights and solver settings of the per-agent OCP"""
    T: float = config.HORIZON
    dt: float = config.CONTROL_DT
    Q: np.ndarray = field(default_factory=default_state_weights)
    R_w: np.ndarray = field(default_factory=lambda: np.full(qd.NU, config.R_INPUT))
    slack_penalty: float = config.SLACK_PENALTY
    slack_quadratic: float = config.SLACK_QUADRATIC
    speed_slack_penalty: float = config.SPEED_SLACK_PENALTY
    max_sqp_iters: int = config.MAX_SQP_ITERS
    initial_sqp_iters: int = config.INITIAL_SQP_ITERS
    kkt_tol: float = config.KKT_TOL
    rti: bool = True
    frozen_vrel: bool = False
    ecbf_all_nodes: bool = True

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=float).reshape(qd.NX)
        self.R_w = np.asarray(self.R_w, dtype=float).reshape(qd.NU)
        if self.dt <= 0 or self.T <= 0:
            raise ConfigError("horizon and shooting interval must be positive", 'ocp', 'dt')
        if abs(self.N_steps * self.dt - self.T) > 1e-9:
            raise ConfigError(f"T={self.T} is not a multiple of dt={self.dt}", 'ocp', 'T')
        if np.any(self.Q < 0) or np.any(self.R_w < 0):
            raise ConfigError("weights must be nonnegative", 'ocp', 'Q')
        if self.slack_penalty <= max(self.Q.max(), self.R_w.max()):
            raise ConfigError("slack penalty must dominate the tracking weights", 'ocp', 'slack_penalty')

    @property
    def N_steps(self) -> int:
        return int(round(self.T / self.dt))

    def to_dict(self) -> dict:
        return {
            'T': self.T, 'dt': self.dt, 'N_steps': self.N_steps,
            'Q': self.Q.tolist(), 'R_w': self.R_w.tolist(),
            'slack_penalty': self.slack_penalty, 'slack_quadratic': self.slack_quadratic,
            'speed_slack_penalty': self.speed_slack_penalty,
            'max_sqp_iters': self.max_sqp_iters, 'initial_sqp_iters': self.initial_sqp_iters,
            'kkt_tol': self.kkt_tol, 'rti': self.rti, 'frozen_vrel': self.frozen_vrel,
            'ecbf_all_nodes': self.ecbf_all_nodes,
        }


@dataclass
class NeighborSnapshot:
    """Detected agent or obstacle as seen at the current control step"""
    id: int
    kind: str
    p: np.ndarray
    v: np.ndarray
    radius: float

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float).reshape(3)
        self.v = np.asarray(self.v, dtype=float).reshape(3)
        if self.kind not in ('agent', 'obstacle'):
            raise ValueError(f"unknown neighbor kind {self.kind!r}")
        if self.kind == 'obstacle' and np.any(self.v != 0.0):
            raise ValueError("obstacles are static")

    @property
    def is_obstacle(self) -> bool:
        return self.kind == 'obstacle'

    def predicted_position(self, t: float) -> np.ndarray:
        """Constant-velocity extrapolation"""
        return self.p + self.v * t


@dataclass
class OcpSolution:
    u_traj: np.ndarray
    x_traj: np.ndarray
    slacks: np.ndarray
    kkt_residual: float
    status: str
    iterations: int = 0
    solve_time: float = 0.0
    merit_history: List[float] = field(default_factory=list)

    @property
    def slack_max(self) -> float:
        return float(np.max(self.slacks, initial=0.0))

    @property
    def command(self) -> qd.MotorCommand:
        """First-stage input, the one applied to the vehicle"""
        return qd.MotorCommand(self.u_traj[0].copy())

    def shifted(self, params: qd.QuadParams, dt: float) -> 'OcpSolution':
        """Warm start for the next control step; inputs stay inside their box"""
        u_traj = np.vstack([self.u_traj[1:], self.u_traj[-1:]])
        x_last = qd.rk4_vector(self.x_traj[-1], self.u_traj[-1], params, dt)
        x_traj = np.vstack([self.x_traj[1:], x_last])
        return OcpSolution(u_traj=u_traj, x_traj=x_traj, slacks=np.zeros_like(self.slacks),
                           kkt_residual=np.inf, status=self.status)

    def stats(self) -> dict:
        return {
            'iterations': self.iterations,
            'kkt_residual': float(self.kkt_residual),
            'slack_max': self.slack_max,
            'solve_time': float(self.solve_time),
            'status': self.status,
        }


class MinJerkReference:
    """
    Piecewise minimum-jerk reference through a list of waypoints

    Each leg is the quintic 10s^3 - 15s^4 + 6s^5 in the normalized time s,
    with zero boundary velocity and acceleration. The leg duration makes the
    peak speed equal to v_max: T = (15/8) L / v_max.
    """

    def __init__(self, waypoints: Sequence, v_max: float, t0: float = 0.0, dwell: float = 0.0):
        if v_max <= 0:
            raise ValueError(f"v_max must be positive, got {v_max}")
        self.waypoints = [np.asarray(w, dtype=float).reshape(3) for w in waypoints]
        if not self.waypoints:
            raise ValueError("at least one waypoint required")
        self.v_max = float(v_max)
        self.t0 = float(t0)
        self.dwell = float(dwell)

        self.leg_starts = []
        self.leg_durations = []
        t = self.t0
        for a, b in zip(self.waypoints[:-1], self.waypoints[1:]):
            length = float(np.linalg.norm(b - a))
            duration = MIN_JERK_PEAK * length / self.v_max
            self.leg_starts.append(t)
            self.leg_durations.append(duration)
            t += duration + self.dwell
        self.t_end = t - self.dwell if self.leg_durations else self.t0

    @property
    def duration(self) -> float:
        return self.t_end - self.t0

    @property
    def goal(self) -> np.ndarray:
        return self.waypoints[-1]

    def _leg(self, t: float):
        for k, (start, dur) in enumerate(zip(self.leg_starts, self.leg_durations)):
            if t < start + dur + self.dwell or k == len(self.leg_starts) - 1:
                return k
        return None

    def evaluate(self, t: float):
        """(position, velocity, acceleration) at time t"""
        if not self.leg_durations:
            return self.waypoints[0].copy(), np.zeros(3), np.zeros(3)
        k = self._leg(t)
        a, b = self.waypoints[k], self.waypoints[k + 1]
        dur = self.leg_durations[k]
        if dur <= 0:
            return b.copy(), np.zeros(3), np.zeros(3)
        s = min(max((t - self.leg_starts[k]) / dur, 0.0), 1.0)
        pos = 10 * s ** 3 - 15 * s ** 4 + 6 * s ** 5
        vel = (30 * s ** 2 - 60 * s ** 3 + 30 * s ** 4) / dur
        acc = (60 * s - 180 * s ** 2 + 120 * s ** 3) / dur ** 2
        if s >= 1.0 or s <= 0.0:
            vel, acc = 0.0, 0.0
        delta = b - a
        return a + pos * delta, vel * delta, acc * delta

    def position(self, t: float) -> np.ndarray:
        return self.evaluate(t)[0]

    def velocity(self, t: float) -> np.ndarray:
        return self.evaluate(t)[1]

    def state_vector(self, t: float) -> np.ndarray:
        """x*(t): reference position/velocity, level attitude, zero rate"""
        p, v, _ = self.evaluate(t)
        return np.concatenate([p, v, [1.0, 0.0, 0.0, 0.0], np.zeros(3)])

    def input_ref(self, params: qd.QuadParams) -> np.ndarray:
        """u*(t): hover thrust on every rotor"""
        return np.full(qd.NU, params.hover_thrust)

    def peak_speed(self) -> float:
        if not self.leg_durations:
            return 0.0
        lengths = [np.linalg.norm(b - a) for a, b in zip(self.waypoints[:-1], self.waypoints[1:])]
        return max(MIN_JERK_PEAK * L / d if d > 0 else 0.0 for L, d in zip(lengths, self.leg_durations))


def min_jerk_reference(p_start, p_goal, v_max: float) -> MinJerkReference:
    """Single-leg minimum-jerk line; p_start == p_goal gives a constant reference"""
    return MinJerkReference([p_start, p_goal], v_max)


@dataclass
class ShootingNLP:
    """
    Multiple-shooting transcription of the per-agent OCP

    Decision variables are X (N+1 stage states) and U (N stage inputs).
    Equalities: X_0 = x0 and X_{k+1} = RK4(X_k, U_k). Inequalities: rotor box,
    softened speed cap on X_1..X_N and softened ECBF rows G_ij + s >= 0.
    """
    x0: np.ndarray
    x_ref: np.ndarray
    u_ref: np.ndarray
    neighbors: List[NeighborSnapshot]
    neighbor_paths: np.ndarray
    ecbf_rows: List[tuple]
    geometries: List[ecbf.SafetyGeometry]
    cfg: OcpConfig
    gains: ecbf.EcbfGains
    params: qd.QuadParams
    frozen_speeds: Optional[np.ndarray] = None

    @property
    def N(self) -> int:
        return self.cfg.N_steps

    @property
    def n_variables(self) -> int:
        return qd.NX * (self.N + 1) + qd.NU * self.N

    @property
    def n_equalities(self) -> int:
        return qd.NX * (self.N + 1)

    def row_counts(self) -> dict:
        return {
            'input_box': 2 * qd.NU * self.N,
            'speed': self.N,
            'speed_slack': 1,
            'ecbf': len(self.ecbf_rows),
            'ecbf_slack': len(self.ecbf_rows),
        }

    def defects(self, X: np.ndarray, U: np.ndarray) -> np.ndarray:
        """Rows: initial-value mismatch, then X_{k+1} - RK4(X_k, U_k)"""
        rows = [X[0] - self.x0]
        for k in range(self.N):
            rows.append(X[k + 1] - qd.rk4_vector(X[k], U[k], self.params, self.cfg.dt))
        return np.array(rows)

    def cost(self, X: np.ndarray, U: np.ndarray) -> float:
        dx = X - self.x_ref
        du = U - self.u_ref
        return float(np.sum(dx * dx * self.cfg.Q) + np.sum(du * du * self.cfg.R_w))

    def ecbf_row(self, row: int, X: np.ndarray, U: np.ndarray):
        k, j = self.ecbf_rows[row]
        nb = self.neighbors[j]
        frozen = None if self.frozen_speeds is None else self.frozen_speeds[j]
        return ecbf.ecbf_constraint_gradient(
            X[k], U[k], self.neighbor_paths[j, k], nb.v, self.geometries[j],
            self.gains, self.params, frozen_speed=frozen,
        )

    def ecbf_values(self, X: np.ndarray, U: np.ndarray) -> np.ndarray:
        return np.array([self.ecbf_row(r, X, U)[0] for r in range(len(self.ecbf_rows))])

    def speed_excess(self, X: np.ndarray) -> np.ndarray:
        v = X[1:, qd.V_SLICE]
        return np.sum(v * v, axis=1) - self.params.v_max ** 2

    def merit(self, X: np.ndarray, U: np.ndarray) -> float:
        """Exact-penalty merit: cost + L1 defects + soft-constraint violation"""
        defect = np.sum(np.abs(self.defects(X, U)))
        ecbf_violation = np.sum(np.maximum(0.0, -self.ecbf_values(X, U))) if self.ecbf_rows else 0.0
        speed_violation = np.sum(np.maximum(0.0, self.speed_excess(X)))
        return (self.cost(X, U) + self.cfg.slack_penalty * (defect + ecbf_violation)
                + self.cfg.speed_slack_penalty * speed_violation)


def transcribe(x0, ref: MinJerkReference, neighbors: Sequence[NeighborSnapshot], cfg: OcpConfig,
               gains: ecbf.EcbfGains, geom: ecbf.SafetyGeometry, params: qd.QuadParams,
               t0: float = 0.0) -> ShootingNLP:
    """
    Build the structured NLP for one agent at time t0

    Args:
        x0: measured ego state (QuadState or 13-vector)
        ref: tracking reference
        neighbors: already filtered by detection range
        cfg, gains, params: OCP settings, ECBF gains, ego vehicle
        geom: margins d_s/d_so and the ego radius r_i; r_j is taken per neighbor
        t0: current time, the reference is sampled at t0 + k dt

    Returns:
        ShootingNLP
    """
    x0 = x0.to_vector() if isinstance(x0, qd.QuadState) else np.asarray(x0, dtype=float)
    N = cfg.N_steps
    times = t0 + cfg.dt * np.arange(N + 1)
    x_ref = np.array([ref.state_vector(t) for t in times])
    u_ref = np.tile(ref.input_ref(params), (N, 1))

    neighbors = list(neighbors)
    stage_times = cfg.dt * np.arange(N + 1)
    if neighbors:
        paths = np.array([[nb.predicted_position(t) for t in stage_times] for nb in neighbors])
    else:
        paths = np.zeros((0, N + 1, 3))
    geometries = [geom.for_pair(nb.radius, nb.is_obstacle) for nb in neighbors]

    stages = range(N) if cfg.ecbf_all_nodes else range(1)
    ecbf_rows = [(k, j) for j in range(len(neighbors)) for k in stages]

    frozen = None
    if cfg.frozen_vrel:
        frozen = np.array([np.linalg.norm(nb.v - x0[qd.V_SLICE]) for nb in neighbors])

    return ShootingNLP(
        x0=x0, x_ref=x_ref, u_ref=u_ref, neighbors=neighbors, neighbor_paths=paths,
        ecbf_rows=ecbf_rows, geometries=geometries, cfg=cfg, gains=gains, params=params,
        frozen_speeds=frozen,
    )


def initial_guess(nlp: ShootingNLP) -> OcpSolution:
    """Hover inputs rolled out from x0: zero defects, box feasible"""
    u_hover = np.clip(nlp.u_ref[0], nlp.params.u_min, nlp.params.u_max)
    U = np.tile(u_hover, (nlp.N, 1))
    X = np.empty((nlp.N + 1, qd.NX))
    X[0] = nlp.x0
    for k in range(nlp.N):
        X[k + 1] = qd.rk4_vector(X[k], U[k], nlp.params, nlp.cfg.dt)
    return OcpSolution(u_traj=U, x_traj=X, slacks=np.zeros(len(nlp.ecbf_rows)),
                       kkt_residual=np.inf, status=STATUS_MAX_ITERS)


class _CondensedQP:
    """
    Gauss-Newton QP in (dU, s_ecbf, s_speed) after eliminating dX

    Every ECBF row (stage, neighbor) has its own slack; the speed cap shares
    a single slack over the horizon.
    """

    def __init__(self, nlp: ShootingNLP, X: np.ndarray, U: np.ndarray):
        cfg, params = nlp.cfg, nlp.params
        N, nx, nu = nlp.N, qd.NX, qd.NU
        n_du = nu * N
        n_e = len(nlp.ecbf_rows)
        self.n_du, self.n_e, self.N = n_du, n_e, N
        n = n_du + n_e + 1
        speed_col = n - 1

        # dX_k = M_k dU + m_k
        M = np.zeros((N + 1, nx, n_du))
        m = np.zeros((N + 1, nx))
        m[0] = nlp.x0 - X[0]
        for k in range(N):
            x_next, A, B = qd.rk4_sensitivities_vector(X[k], U[k], params, cfg.dt)
            M[k + 1] = A @ M[k]
            M[k + 1][:, nu * k:nu * (k + 1)] += B
            m[k + 1] = A @ m[k] + (x_next - X[k + 1])
        self.M, self.m = M, m

        H = np.zeros((n, n))
        g = np.zeros(n)
        Q = cfg.Q
        for k in range(1, N + 1):
            r = X[k] + m[k] - nlp.x_ref[k]
            QM = M[k] * Q[:, None]
            H[:n_du, :n_du] += 2.0 * M[k].T @ QM
            g[:n_du] += 2.0 * QM.T @ r
        R_diag = np.tile(cfg.R_w, N)
        H[:n_du, :n_du] += np.diag(2.0 * R_diag)
        g[:n_du] += 2.0 * R_diag * (U - nlp.u_ref).reshape(-1)
        slack_idx = np.arange(n_du, n)
        H[slack_idx, slack_idx] = cfg.slack_quadratic
        g[n_du:n_du + n_e] = cfg.slack_penalty
        g[speed_col] = cfg.speed_slack_penalty
        self.H, self.g = H, g

        # rotor box
        U_flat = U.reshape(-1)
        box = np.zeros((2 * n_du, n))
        box[:n_du, :n_du] = np.eye(n_du)
        box[n_du:, :n_du] = -np.eye(n_du)
        box_rhs = np.concatenate([params.u_min - U_flat, U_flat - params.u_max])

        # softened ECBF rows
        ecbf_rows = np.zeros((len(nlp.ecbf_rows), n))
        ecbf_rhs = np.zeros(len(nlp.ecbf_rows))
        for r_idx, (k, _) in enumerate(nlp.ecbf_rows):
            G, dGx, dGu = nlp.ecbf_row(r_idx, X, U)
            ecbf_rows[r_idx, :n_du] = dGx @ M[k]
            ecbf_rows[r_idx, nu * k:nu * (k + 1)] += dGu
            ecbf_rows[r_idx, n_du + r_idx] = 1.0
            ecbf_rhs[r_idx] = -G - dGx @ m[k]

        # softened speed cap on predicted stages
        speed_rows = np.zeros((N, n))
        speed_rhs = np.zeros(N)
        for k in range(1, N + 1):
            v = X[k, qd.V_SLICE]
            speed_rows[k - 1, :n_du] = -2.0 * v @ M[k][qd.V_SLICE]
            speed_rows[k - 1, speed_col] = 1.0
            speed_rhs[k - 1] = v @ v - params.v_max ** 2 + 2.0 * v @ m[k][qd.V_SLICE]

        # slack nonnegativity
        slack_rows = np.zeros((n - n_du, n))
        slack_rows[:, n_du:] = np.eye(n - n_du)

        self.A_in = np.vstack([box, ecbf_rows, speed_rows, slack_rows])
        self.b_in = np.concatenate([box_rhs, ecbf_rhs, speed_rhs, np.zeros(n - n_du)])
        first = self.A_in.shape[0] - (n - n_du)
        self.slack_rows = list(range(first, self.A_in.shape[0]))

    def solve(self):
        return solve_qp(self.H, self.g, A_in=self.A_in, b_in=self.b_in, initial_active=self.slack_rows,
                        reg=config.QP_REGULARIZATION)

    def expand(self, z: np.ndarray):
        """(dX, dU, per-row ECBF slacks) from the QP solution"""
        dU = z[:self.n_du].reshape(self.N, qd.NU)
        dX = np.einsum('kij,j->ki', self.M, z[:self.n_du]) + self.m
        return dX, dU, z[self.n_du:self.n_du + self.n_e]

    def kkt_residual(self, nlp: ShootingNLP, X: np.ndarray, U: np.ndarray, result: QPResult) -> float:
        """
        First-order residual of the NLP at the linearization point (X, U)

        The QP multipliers are checked at a zero input step with the QP's own
        slacks: stationarity of the Lagrangian, linearized feasibility and
        complementarity, together with the shooting defects of (X, U).
        """
        z0 = result.z.copy()
        z0[:self.n_du] = 0.0
        res = kkt_residuals(replace(result, z=z0), self.H, self.g, A_in=self.A_in, b_in=self.b_in)
        defect = float(np.max(np.abs(nlp.defects(X, U)), initial=0.0))
        return max(res['stationarity'], res['primal'], res['complementarity'], defect)


def solve_sqp(nlp: ShootingNLP, warm_start: Optional[OcpSolution] = None,
              max_iters: Optional[int] = None, rti: Optional[bool] = None) -> OcpSolution:
    """
    Gauss-Newton SQP on the shooting NLP

    Each iteration solves one QP and first evaluates the KKT residual of the
    current iterate from its multipliers (see _CondensedQP.kkt_residual); at
    or below kkt_tol the iterate is returned as solved. Otherwise RTI mode
    takes the full step and stops after that single QP, while full SQP mode
    backtracks on the exact-penalty merit function and continues up to
    max_iters. The reported residual belongs to the last linearization point.

    Args:
        nlp: structured NLP from transcribe()
        warm_start: previous solution already shifted by one stage
        max_iters: override of cfg.max_sqp_iters in full mode
        rti: override of cfg.rti

    Returns:
        OcpSolution; the first row of u_traj is the command to apply
    """
    cfg = nlp.cfg
    rti = cfg.rti if rti is None else rti
    iters = 1 if rti else (cfg.max_sqp_iters if max_iters is None else max_iters)
    start = time.perf_counter()

    guess = warm_start if warm_start is not None else initial_guess(nlp)
    X = guess.x_traj.copy()
    U = np.clip(guess.u_traj.copy(), nlp.params.u_min, nlp.params.u_max)
    slacks = np.zeros(len(nlp.ecbf_rows))
    kkt = np.inf
    status = STATUS_MAX_ITERS
    merit_history = [] if rti else [nlp.merit(X, U)]
    done = 0

    for it in range(iters):
        qp = _CondensedQP(nlp, X, U)
        done = it + 1
        try:
            result = qp.solve().raise_for_status()
        except QPInfeasibleError as e:
            logger.warning("%s at SQP iteration %d", e, it)
            status = STATUS_INFEASIBLE
            break
        dX, dU, slacks = qp.expand(result.z)
        kkt = qp.kkt_residual(nlp, X, U, result)
        if kkt <= cfg.kkt_tol:
            status = STATUS_SOLVED
            break

        if rti:
            X, U = X + dX, U + dU
        else:
            alpha, phi_old = 1.0, merit_history[-1]
            # accept within rounding of the previous merit
            phi_max = phi_old + 1e-12 * max(1.0, abs(phi_old))
            accepted = False
            while alpha >= 1e-4:
                X_try, U_try = X + alpha * dX, U + alpha * dU
                phi = nlp.merit(X_try, U_try)
                if phi <= phi_max:
                    X, U = X_try, U_try
                    merit_history.append(phi)
                    accepted = True
                    break
                alpha *= 0.5
            logger.debug("SQP it %d: kkt %.3e, alpha %.3g, merit %.6g", it, kkt, alpha, merit_history[-1])
            if not accepted:
                break

    U = np.clip(U, nlp.params.u_min, nlp.params.u_max)
    return OcpSolution(
        u_traj=U, x_traj=X, slacks=np.maximum(slacks, 0.0), kkt_residual=kkt, status=status,
        iterations=done, solve_time=time.perf_counter() - start, merit_history=merit_history,
    )


class NmpcController:
    """
    One agent's NMPC. Not reentrant: the warm start is reused across steps
    """

    def __init__(self, agent_id: int, params: qd.QuadParams, gains: ecbf.EcbfGains,
                 geom: ecbf.SafetyGeometry, cfg: OcpConfig, reference: MinJerkReference):
        self.agent_id = agent_id
        self.params = params
        self.gains = gains
        self.geom = geom
        self.cfg = cfg
        self.reference = reference
        self._solution: Optional[OcpSolution] = None
        self.last_command = qd.MotorCommand.hover(params)

    def reset(self):
        self._solution = None
        self.last_command = qd.MotorCommand.hover(self.params)

    def control(self, x0, t: float, neighbors: Sequence[NeighborSnapshot]):
        """
        Compute the command for the current step

        Returns:
            (MotorCommand, stats dict); on an infeasible QP the previous
            command is held and stats['fallback'] is True
        """
        nlp = transcribe(x0, self.reference, neighbors, self.cfg, self.gains, self.geom, self.params, t0=t)
        if self._solution is None:
            solution = solve_sqp(nlp, None, max_iters=self.cfg.initial_sqp_iters, rti=False)
        else:
            warm = self._solution.shifted(self.params, self.cfg.dt)
            solution = solve_sqp(nlp, warm)

        stats = solution.stats()
        stats['n_neighbors'] = len(nlp.neighbors)
        if solution.status == STATUS_INFEASIBLE:
            logger.warning("Agent %d: infeasible QP at t=%.2f, holding last command", self.agent_id, t)
            stats['fallback'] = True
            return qd.MotorCommand(self.last_command.u.copy()), stats

        stats['fallback'] = False
        self._solution = solution
        self.last_command = solution.command
        return solution.command, stats
