"""
Multi-quadrotor closed-loop simulator
Randomized and scripted scenarios, range-limited neighbor detection,
decentralized NMPC with snapshot semantics, violation accounting and
campaign sweeps
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import brentq
from scipy.spatial.distance import cdist, pdist
from tqdm import tqdm

import config
import ecbf_core as ecbf
import quad_dynamics as qd
import range_bounds as rb
from exceptions import ConfigError, NonFiniteStateError, ScenarioGenerationError
from nmpc_solver import MinJerkReference, NeighborSnapshot, NmpcController, OcpConfig

logger = logging.getLogger(__name__)

SCENARIO_KINDS = ('random', 'swap', 'crossing')
SWEEP_COLUMNS = ['N', 'N_o', 'regime', 'R_dd', 'R_ddo', 'seeds', 'violations',
                 'agent_agent', 'agent_obstacle']

# Scripted crossing: three vehicles on a circle flying to antipodal points past three posts
CROSSING_RADIUS = 3.0
CROSSING_AGENT_ANGLES = (0.0, 125.0, 235.0)
CROSSING_OBSTACLE_RING = 1.5
CROSSING_OBSTACLE_ANGLES = (30.0, 150.0, 270.0)
CROSSING_STAGGER = 1.5  # s between consecutive departures
CROSSING_SETTLE = 5.0  # s after the last leg

SWAP_ENTRY_MARGIN = 2.0  # m beyond the tested range at which the swap starts
SWAP_SETTLE = 3.0  # s after the reference crossing time


def default_gains() -> ecbf.EcbfGains:
    return ecbf.EcbfGains.from_alphas(config.ALPHA1, config.ALPHA2)


@dataclass
class ScenarioConfig:
    """One simulation run: world generation, detection ranges and controller settings"""
    seed: int = 0
    N: int = 2
    N_o: int = 0
    kind: str = 'random'
    env_bounds: Tuple = config.ENV_BOUNDS
    r_o_range: Tuple[float, float] = config.OBSTACLE_RADIUS_RANGE
    R_dd: float = math.inf
    R_ddo: float = math.inf
    d_s: float = config.D_S
    d_so: float = config.D_SO
    gains: ecbf.EcbfGains = field(default_factory=default_gains)
    params: qd.QuadParams = field(default_factory=qd.QuadParams)
    ocp: OcpConfig = field(default_factory=OcpConfig)
    sim_duration: float = config.SIM_DURATION
    control_dt: float = config.CONTROL_DT
    plant_substeps: int = config.PLANT_SUBSTEPS
    back_and_forth: bool = False
    cycles: int = config.BACK_AND_FORTH_CYCLES
    obstacle_radius: float = 0.15
    swap_length: float = config.SWAP_LENGTH
    swap_altitude: float = config.SWAP_ALTITUDE
    rejection_budget: int = config.REJECTION_BUDGET
    stop_at_goal: bool = True
    parallel: int = 1

    def __post_init__(self):
        self.env_bounds = tuple(tuple(float(v) for v in b) for b in self.env_bounds)
        self.r_o_range = tuple(float(v) for v in self.r_o_range)
        if self.kind not in SCENARIO_KINDS:
            raise ConfigError(f"unknown scenario kind {self.kind!r}", 'scenario', 'kind')
        if self.N < 1:
            raise ConfigError("at least one agent required", 'scenario', 'N')
        if self.N_o < 0:
            raise ConfigError("obstacle count must be nonnegative", 'scenario', 'N_o')
        if len(self.env_bounds) != 3 or any(lo >= hi for lo, hi in self.env_bounds):
            raise ConfigError("env_bounds must be three nonempty intervals", 'scenario', 'env_bounds')
        if not 0 < self.r_o_range[0] <= self.r_o_range[1]:
            raise ConfigError("obstacle radii must lie in (0, inf)", 'scenario', 'r_o_range')
        if self.R_dd < 0 or self.R_ddo < 0:
            raise ConfigError("detection ranges must be nonnegative", 'detection', 'R_dd')
        if abs(self.control_dt - self.ocp.dt) > 1e-12:
            raise ConfigError("control_dt must equal the OCP shooting interval", 'ocp', 'dt')
        if self.plant_substeps < 1:
            raise ConfigError("plant_substeps must be >= 1", 'scenario', 'plant_substeps')

    @property
    def geom(self) -> ecbf.SafetyGeometry:
        return ecbf.SafetyGeometry(self.d_s, self.d_so, self.params.radius, self.params.radius)

    @property
    def agent_safety_distance(self) -> float:
        return self.d_s + 2.0 * self.params.radius

    def obstacle_safety_distance(self, r_o: float) -> float:
        return self.d_so + self.params.radius + r_o

    @property
    def max_obstacle_radius(self) -> float:
        return self.obstacle_radius if self.kind == 'crossing' else self.r_o_range[1]

    def to_dict(self) -> dict:
        return {
            'seed': self.seed, 'N': self.N, 'N_o': self.N_o, 'kind': self.kind,
            'env_bounds': [list(b) for b in self.env_bounds], 'r_o_range': list(self.r_o_range),
            'R_dd': self.R_dd, 'R_ddo': self.R_ddo, 'd_s': self.d_s, 'd_so': self.d_so,
            'gains': self.gains.to_dict(), 'params': self.params.to_dict(), 'ocp': self.ocp.to_dict(),
            'sim_duration': self.sim_duration, 'control_dt': self.control_dt,
            'plant_substeps': self.plant_substeps, 'back_and_forth': self.back_and_forth,
            'cycles': self.cycles, 'obstacle_radius': self.obstacle_radius,
            'swap_length': self.swap_length, 'swap_altitude': self.swap_altitude,
            'stop_at_goal': self.stop_at_goal,
        }


@dataclass(frozen=True)
class Obstacle:
    id: int
    p: np.ndarray
    radius: float


@dataclass
class World:
    """Time, agent states (N x 13), goals, obstacles and per-agent references"""
    t: float
    states: np.ndarray
    starts: np.ndarray
    goals: np.ndarray
    obstacles: List[Obstacle]
    references: List[MinJerkReference]
    commands: np.ndarray = None
    agent_radius: float = config.ROBOT_RADIUS

    def __post_init__(self):
        if self.commands is None:
            self.commands = np.zeros((len(self.states), qd.NU))

    @property
    def n_agents(self) -> int:
        return len(self.states)

    @property
    def positions(self) -> np.ndarray:
        return self.states[:, qd.P_SLICE]

    @property
    def velocities(self) -> np.ndarray:
        return self.states[:, qd.V_SLICE]

    @property
    def obstacle_positions(self) -> np.ndarray:
        if not self.obstacles:
            return np.zeros((0, 3))
        return np.array([o.p for o in self.obstacles])

    @property
    def obstacle_radii(self) -> np.ndarray:
        return np.array([o.radius for o in self.obstacles])

    def snapshot(self) -> 'World':
        return replace(self, states=self.states.copy(), commands=self.commands.copy())

    def agent_distances(self) -> np.ndarray:
        """Condensed pairwise distance vector (pdist order)"""
        if self.n_agents < 2:
            return np.zeros(0)
        return pdist(self.positions)

    def obstacle_distances(self) -> np.ndarray:
        """(N, N_o) center distances"""
        return cdist(self.positions, self.obstacle_positions) if self.obstacles else np.zeros((self.n_agents, 0))


@dataclass
class SimTrace:
    """Per-step records plus the configuration echo"""
    config: dict
    obstacles: List[Obstacle]
    records: List[dict] = field(default_factory=list)
    completed: bool = False

    @property
    def times(self) -> np.ndarray:
        return np.array([r['t'] for r in self.records])

    def min_agent_distance(self) -> float:
        values = [r['agent_distances_min'].min() for r in self.records if len(r['agent_distances_min'])]
        return float(min(values)) if values else math.inf

    def min_obstacle_clearance(self) -> float:
        """Smallest center distance minus the pair safety distance"""
        best = math.inf
        for r in self.records:
            d = r['obstacle_distances_min']
            if d.size:
                best = min(best, float(np.min(d - self._obstacle_thresholds())))
        return best

    def _obstacle_thresholds(self) -> np.ndarray:
        d_so = self.config['d_so']
        r_q = self.config['params']['radius']
        return np.array([d_so + r_q + o.radius for o in self.obstacles])


@dataclass
class ViolationReport:
    """Onset events: (pair, onset time, min distance); one per pair per run"""
    agent_agent_events: List[tuple] = field(default_factory=list)
    agent_obstacle_events: List[tuple] = field(default_factory=list)

    @property
    def total_count(self) -> int:
        return len(self.agent_agent_events) + len(self.agent_obstacle_events)

    def to_frame(self) -> pd.DataFrame:
        rows = [{'kind': 'agent-agent', 'i': i, 'j': j, 'onset': t, 'min_distance': d}
                for (i, j), t, d in self.agent_agent_events]
        rows += [{'kind': 'agent-obstacle', 'i': i, 'j': o, 'onset': t, 'min_distance': d}
                 for (i, o), t, d in self.agent_obstacle_events]
        return pd.DataFrame(rows, columns=['kind', 'i', 'j', 'onset', 'min_distance'])


def _sample_point(rng: np.random.Generator, bounds) -> np.ndarray:
    lows = np.array([b[0] for b in bounds])
    highs = np.array([b[1] for b in bounds])
    return rng.uniform(lows, highs)


def _place(rng, cfg: ScenarioConfig, obstacles: List[Obstacle], count: int, what: str) -> np.ndarray:
    """Rejection-sample `count` agent positions clear of each other and of obstacles"""
    placed: List[np.ndarray] = []
    attempts = 0
    while len(placed) < count:
        attempts += 1
        if attempts > cfg.rejection_budget:
            raise ScenarioGenerationError(
                f"could not place {count} {what} within {cfg.rejection_budget} draws "
                f"(N={cfg.N}, N_o={cfg.N_o}, seed={cfg.seed})"
            )
        p = _sample_point(rng, cfg.env_bounds)
        if any(np.linalg.norm(p - q) < cfg.agent_safety_distance for q in placed):
            continue
        if any(np.linalg.norm(p - o.p) < cfg.obstacle_safety_distance(o.radius) for o in obstacles):
            continue
        placed.append(p)
    if attempts > count:
        logger.debug("Placed %d %s after %d draws", count, what, attempts)
    return np.array(placed)


def _level_states(positions: np.ndarray) -> np.ndarray:
    return np.array([qd.QuadState.at(p).to_vector() for p in positions])


def _waypoints(start, goal, cfg: ScenarioConfig) -> list:
    if not cfg.back_and_forth:
        return [start, goal]
    points = [start]
    for _ in range(cfg.cycles):
        points += [goal, start]
    return points


def _references(starts, goals, cfg: ScenarioConfig, offsets=None) -> List[MinJerkReference]:
    offsets = np.zeros(len(starts)) if offsets is None else offsets
    return [MinJerkReference(_waypoints(s, g, cfg), cfg.params.v_max, t0=float(t0))
            for s, g, t0 in zip(starts, goals, offsets)]


def generate_scenario(cfg: ScenarioConfig) -> World:
    """
    Build the initial world for a configuration

    random: obstacle centers and radii, starts and goals drawn uniformly with
    rejection of unsafe placements, seeded by cfg.seed.
    swap: two vehicles exchanging positions along the x axis.
    crossing: three vehicles flying to antipodal points of a circle between
    three posts.

    Raises:
        ScenarioGenerationError: rejection budget exhausted
    """
    offsets = None
    if cfg.kind == 'random':
        rng = np.random.default_rng(cfg.seed)
        obstacles = []
        for k in range(cfg.N_o):
            center = _sample_point(rng, cfg.env_bounds)
            radius = float(rng.uniform(*cfg.r_o_range))
            obstacles.append(Obstacle(id=k, p=center, radius=radius))
        starts = _place(rng, cfg, obstacles, cfg.N, 'starts')
        goals = _place(rng, cfg, obstacles, cfg.N, 'goals')
    elif cfg.kind == 'swap':
        if cfg.N != 2 or cfg.N_o != 0:
            raise ConfigError("swap scenario needs N=2 and N_o=0", 'scenario', 'kind')
        half = 0.5 * cfg.swap_length
        starts = np.array([[-half, 0.0, cfg.swap_altitude], [half, 0.0, cfg.swap_altitude]])
        goals = starts[::-1].copy()
        obstacles = []
    else:
        if cfg.N != 3 or cfg.N_o != 3:
            raise ConfigError("crossing scenario needs N=3 and N_o=3", 'scenario', 'kind')
        z = cfg.swap_altitude
        angles = np.radians(CROSSING_AGENT_ANGLES)
        starts = np.array([[CROSSING_RADIUS * np.cos(a), CROSSING_RADIUS * np.sin(a), z] for a in angles])
        goals = np.array([[-s[0], -s[1], z] for s in starts])
        obstacles = [
            Obstacle(id=k, p=np.array([CROSSING_OBSTACLE_RING * np.cos(a), CROSSING_OBSTACLE_RING * np.sin(a), z]),
                     radius=cfg.obstacle_radius)
            for k, a in enumerate(np.radians(CROSSING_OBSTACLE_ANGLES))
        ]
        offsets = CROSSING_STAGGER * np.arange(3)

    world = World(t=0.0, states=_level_states(starts), starts=starts, goals=goals,
                  obstacles=obstacles, references=_references(starts, goals, cfg, offsets),
                  agent_radius=cfg.params.radius)
    world.commands[:] = cfg.params.hover_thrust
    return world


def detect_neighbors(world: World, i: int, R_dd: float, R_ddo: float):
    """
    Entities within range of agent i, thresholds inclusive

    Returns:
        (agent snapshots, obstacle snapshots) as NeighborSnapshot lists
    """
    p_i = world.states[i, qd.P_SLICE]
    agents, obstacles = [], []
    for j in range(world.n_agents):
        if j == i:
            continue
        p_j = world.states[j, qd.P_SLICE]
        if np.linalg.norm(p_j - p_i) <= R_dd:
            agents.append(NeighborSnapshot(id=j, kind='agent', p=p_j, v=world.states[j, qd.V_SLICE],
                                           radius=world.agent_radius))
    for o in world.obstacles:
        if np.linalg.norm(o.p - p_i) <= R_ddo:
            obstacles.append(NeighborSnapshot(id=o.id, kind='obstacle', p=o.p, v=np.zeros(3), radius=o.radius))
    return agents, obstacles


def make_controllers(world: World, cfg: ScenarioConfig) -> List[NmpcController]:
    return [NmpcController(i, cfg.params, cfg.gains, cfg.geom, cfg.ocp, world.references[i])
            for i in range(world.n_agents)]


def _solve_agent(args):
    controller, snapshot, cfg = args
    i = controller.agent_id
    agents, obstacles = detect_neighbors(snapshot, i, cfg.R_dd, cfg.R_ddo)
    cmd, stats = controller.control(snapshot.states[i], snapshot.t, agents + obstacles)
    return cmd, stats, [n.id for n in agents], [n.id for n in obstacles]


def _record(world: World, commands=None, neighbors=None, stats=None) -> dict:
    """Sampled distances at t; the *_min entries are lowered by step_world over the interval"""
    agent_distances = world.agent_distances()
    obstacle_distances = world.obstacle_distances()
    return {
        't': world.t,
        'states': world.states.copy(),
        'commands': None if commands is None else commands.copy(),
        'neighbors': neighbors,
        'agent_distances': agent_distances,
        'obstacle_distances': obstacle_distances,
        'agent_distances_min': agent_distances.copy(),
        'obstacle_distances_min': obstacle_distances.copy(),
        'stats': stats,
    }


def step_world(world: World, controllers: Sequence[NmpcController], cfg: ScenarioConfig,
               pool: Optional[ThreadPoolExecutor] = None, order: Optional[Sequence[int]] = None):
    """
    Advance the closed loop by one control interval

    Every controller sees the same frozen snapshot; the first-stage commands
    are applied together and the plant is integrated with cfg.plant_substeps
    RK4 substeps.

    Args:
        world: current world (not modified)
        controllers: one per agent, indexed by agent id
        cfg: scenario configuration
        pool: optional thread pool for the per-agent solves
        order: optional solve order (results are placed by agent id)

    Returns:
        (next world, step record)
    """
    snapshot = world.snapshot()
    order = list(range(world.n_agents)) if order is None else list(order)
    jobs = [(controllers[i], snapshot, cfg) for i in order]
    results = list(pool.map(_solve_agent, jobs)) if pool is not None else [_solve_agent(j) for j in jobs]

    commands = np.empty((world.n_agents, qd.NU))
    neighbors: List[dict] = [None] * world.n_agents
    stats: List[dict] = [None] * world.n_agents
    for i, (cmd, st, agent_ids, obstacle_ids) in zip(order, results):
        commands[i] = cmd.u
        neighbors[i] = {'agents': agent_ids, 'obstacles': obstacle_ids}
        stats[i] = st
        if st.get('fallback'):
            logger.warning("t=%.2f agent %d held its previous command", world.t, i)

    record = _record(snapshot, commands, neighbors, stats)

    # distances are checked after every substep so dips between control samples count
    h = cfg.control_dt / cfg.plant_substeps
    states = snapshot.states.copy()
    plant = replace(snapshot, states=states)
    agent_min = record['agent_distances_min']
    obstacle_min = record['obstacle_distances_min']
    for _ in range(cfg.plant_substeps):
        for i in range(world.n_agents):
            states[i] = qd.rk4_vector(states[i], commands[i], cfg.params, h)
        finite = np.all(np.isfinite(states), axis=1)
        if not finite.all():
            i = int(np.flatnonzero(~finite)[0])
            raise NonFiniteStateError(f"agent {i} state became non-finite at t={world.t:.2f}")
        np.minimum(agent_min, plant.agent_distances(), out=agent_min)
        np.minimum(obstacle_min, plant.obstacle_distances(), out=obstacle_min)
    next_world = replace(snapshot, t=world.t + cfg.control_dt, states=states, commands=commands)
    return next_world, record


def _at_goals(world: World, cfg: ScenarioConfig) -> bool:
    for i, ref in enumerate(world.references):
        if world.t < ref.t_end:
            return False
        if np.linalg.norm(world.states[i, qd.P_SLICE] - ref.goal) > config.GOAL_RADIUS:
            return False
        if np.linalg.norm(world.states[i, qd.V_SLICE]) > config.GOAL_SPEED:
            return False
    return True


def run_world(world: World, cfg: ScenarioConfig, duration: float, progress: bool = False) -> SimTrace:
    """Closed loop from a prepared world until all goals are reached or duration elapses"""
    controllers = make_controllers(world, cfg)
    trace = SimTrace(config=cfg.to_dict(), obstacles=list(world.obstacles))
    n_steps = int(math.ceil(duration / cfg.control_dt - 1e-9))
    pool = ThreadPoolExecutor(max_workers=cfg.parallel) if cfg.parallel > 1 else None
    try:
        steps = tqdm(range(n_steps), desc='simulate', disable=not progress, leave=False)
        for _ in steps:
            world, record = step_world(world, controllers, cfg, pool)
            trace.records.append(record)
            if cfg.stop_at_goal and _at_goals(world, cfg):
                trace.completed = True
                break
    finally:
        if pool is not None:
            pool.shutdown()
    trace.records.append(_record(world))
    return trace


def scenario_duration(world: World, cfg: ScenarioConfig) -> float:
    if cfg.back_and_forth:
        return max(cfg.sim_duration, max(r.t_end for r in world.references) + CROSSING_SETTLE)
    return cfg.sim_duration


def run_scenario(cfg: ScenarioConfig, progress: bool = False) -> Tuple[SimTrace, ViolationReport]:
    """
    Generate and simulate one scenario

    Returns:
        (SimTrace, ViolationReport)

    Raises:
        ScenarioGenerationError: propagated from generate_scenario
    """
    world = generate_scenario(cfg)
    logger.info("Running %s scenario seed=%d N=%d N_o=%d R_dd=%.3f R_ddo=%.3f",
                cfg.kind, cfg.seed, cfg.N, cfg.N_o, cfg.R_dd, cfg.R_ddo)
    trace = run_world(world, cfg, scenario_duration(world, cfg), progress=progress)
    report = detect_violations(trace, cfg)
    if report.total_count:
        logger.warning("seed=%d: %d barrier violations", cfg.seed, report.total_count)
    return trace, report


def detect_violations(trace: SimTrace, cfg: Optional[ScenarioConfig] = None) -> ViolationReport:
    """
    Onset events from the recorded distances

    A pair counts once per run, at the first step whose interval (every
    plant substep up to the next control sample) brings its distance below
    its safety distance; the event carries the smallest distance seen for
    that pair from onset on.
    """
    conf = trace.config if cfg is None else cfg.to_dict()
    agent_threshold = conf['d_s'] + 2.0 * conf['params']['radius']
    obstacle_thresholds = np.array([conf['d_so'] + conf['params']['radius'] + o.radius for o in trace.obstacles])

    aa: Dict[tuple, list] = {}
    ao: Dict[tuple, list] = {}
    for record in trace.records:
        d = record['agent_distances_min']
        if len(d):
            n = int(round((1 + math.sqrt(1 + 8 * len(d))) / 2))
            pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
            for pair, dist in zip(pairs, d):
                if pair in aa:
                    aa[pair][1] = min(aa[pair][1], float(dist))
                elif dist < agent_threshold:
                    aa[pair] = [record['t'], float(dist)]
        od = record['obstacle_distances_min']
        if od.size:
            for i, o in zip(*np.nonzero(od < obstacle_thresholds[None, :])):
                ao.setdefault((int(i), int(o)), [record['t'], float(od[i, o])])
            for (i, o), event in ao.items():
                event[1] = min(event[1], float(od[i, o]))

    return ViolationReport(
        agent_agent_events=[(pair, t, d) for pair, (t, d) in sorted(aa.items())],
        agent_obstacle_events=[(pair, t, d) for pair, (t, d) in sorted(ao.items())],
    )


def range_regime(name: str, cfg: ScenarioConfig) -> Tuple[float, float]:
    """(R_dd, R_ddo) for a named detection-range regime"""
    if name not in config.RANGE_REGIMES:
        raise ConfigError(f"unknown range regime {name!r}", 'detection', 'regime')
    ranges = config.RANGE_REGIMES[name]
    if ranges is not None:
        return ranges
    pair = rb.homogeneous_range_pair(cfg.gains, cfg.params, cfg.d_s, cfg.d_so,
                                     cfg.max_obstacle_radius, cfg.control_dt)
    return pair.R_dd_discrete, pair.R_ddo_discrete


def with_regime(cfg: ScenarioConfig, name: str) -> ScenarioConfig:
    R_dd, R_ddo = range_regime(name, cfg)
    return replace(cfg, R_dd=R_dd, R_ddo=R_ddo)


def _run_cell_seed(cfg: ScenarioConfig) -> Tuple[int, int]:
    _, report = run_scenario(cfg)
    return len(report.agent_agent_events), len(report.agent_obstacle_events)


def sweep_campaign(grid: Sequence[Tuple[int, int, str]], seeds: Sequence[int], base: ScenarioConfig,
                   parallel: int = 1, progress: bool = True) -> pd.DataFrame:
    """
    Violation totals per (N, N_o, regime) cell summed over seeds

    Runs are independent and may be spread over `parallel` processes; the table
    is assembled in grid order, so it does not depend on scheduling.
    """
    jobs, cells = [], []
    for N, N_o, regime in grid:
        cell_cfg = with_regime(replace(base, N=int(N), N_o=int(N_o), kind='random'), regime)
        cells.append((N, N_o, regime, cell_cfg))
        jobs += [replace(cell_cfg, seed=int(s)) for s in seeds]

    if not jobs:
        return pd.DataFrame(columns=SWEEP_COLUMNS)

    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as executor:
            results = list(tqdm(executor.map(_run_cell_seed, jobs), total=len(jobs), desc='sweep',
                                disable=not progress))
    else:
        results = [_run_cell_seed(job) for job in tqdm(jobs, desc='sweep', disable=not progress)]

    rows = []
    per_cell = len(seeds)
    for k, (N, N_o, regime, cell_cfg) in enumerate(cells):
        chunk = results[k * per_cell:(k + 1) * per_cell]
        aa = sum(r[0] for r in chunk)
        ao = sum(r[1] for r in chunk)
        rows.append({'N': N, 'N_o': N_o, 'regime': regime, 'R_dd': cell_cfg.R_dd, 'R_ddo': cell_cfg.R_ddo,
                     'seeds': per_cell, 'violations': aa + ao, 'agent_agent': aa, 'agent_obstacle': ao})
        logger.info("Cell N=%d N_o=%d %s: %d violations", N, N_o, regime, aa + ao)
    return pd.DataFrame(rows, columns=SWEEP_COLUMNS)


@dataclass
class SwapScenario:
    """
    Two vehicles exchanging positions head-on, used to test detection ranges

    Each run starts both vehicles on their references at the instant their
    reference separation equals the tested range plus a margin, so the time
    spent out of range is skipped.
    """
    params: qd.QuadParams = field(default_factory=qd.QuadParams)
    gains: ecbf.EcbfGains = field(default_factory=default_gains)
    d_s: float = config.D_S
    d_so: float = config.D_SO
    ocp: OcpConfig = field(default_factory=OcpConfig)
    length: float = config.SWAP_LENGTH
    altitude: float = config.SWAP_ALTITUDE
    plant_substeps: int = config.PLANT_SUBSTEPS

    @property
    def geom(self) -> ecbf.SafetyGeometry:
        return ecbf.SafetyGeometry(self.d_s, self.d_so, self.params.radius, self.params.radius)

    def with_speed(self, v_max: float) -> 'SwapScenario':
        return replace(self, params=qd.QuadParams(**{**self.params.to_dict(), 'v_max': float(v_max)}))

    def scenario_config(self, R_dd: float) -> ScenarioConfig:
        return ScenarioConfig(kind='swap', N=2, N_o=0, R_dd=R_dd, R_ddo=math.inf, d_s=self.d_s, d_so=self.d_so,
                              gains=self.gains, params=self.params, ocp=self.ocp, control_dt=self.ocp.dt,
                              plant_substeps=self.plant_substeps, swap_length=self.length,
                              swap_altitude=self.altitude, stop_at_goal=False)

    def min_distance(self, R_dd: float) -> float:
        """Smallest separation reached when both vehicles detect each other at R_dd"""
        cfg = self.scenario_config(R_dd)
        world = generate_scenario(cfg)
        ref = world.references[0]
        L = self.length
        gap = min(L, R_dd + SWAP_ENTRY_MARGIN)
        t_mid = ref.t0 + 0.5 * ref.duration
        if gap < L:
            # reference separation is L - 2 x(t), decreasing until t_mid
            t_entry = brentq(lambda t: L - 2.0 * (ref.position(t)[0] - ref.waypoints[0][0]) - gap, ref.t0, t_mid)
        else:
            t_entry = ref.t0
        t_entry = cfg.control_dt * math.floor(t_entry / cfg.control_dt)
        world.t = t_entry
        for i, r in enumerate(world.references):
            x = r.state_vector(t_entry)
            world.states[i] = x
        trace = run_world(world, cfg, duration=t_mid - t_entry + SWAP_SETTLE)
        return trace.min_agent_distance()

    def violates(self, R_dd: float) -> bool:
        return self.min_distance(R_dd) < self.geom.safety_distance
