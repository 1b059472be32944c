"""
Tests for the closed-loop simulator
Scenario generation, neighbor detection, snapshot stepping, violation
accounting and the campaign acceptance runs (marked slow)
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np
import pytest

import config
import quad_dynamics as qd
import range_bounds as rb
import swarm_sim as sim
import trace_export
from exceptions import ConfigError, ScenarioGenerationError
from nmpc_solver import min_jerk_reference


def small_config(**kwargs):
    base = dict(seed=3, N=3, N_o=2, env_bounds=((-4, 4), (-4, 4), (0.5, 2.0)), sim_duration=2.0)
    base.update(kwargs)
    return sim.ScenarioConfig(**base)


def line_world(positions, velocities=None, obstacles=()):
    positions = np.asarray(positions, dtype=float)
    states = np.array([qd.QuadState.at(p).to_vector() for p in positions])
    if velocities is not None:
        states[:, qd.V_SLICE] = velocities
    goals = positions + np.array([4.0, 0.0, 0.0])
    refs = [min_jerk_reference(s, g, config.V_MAX) for s, g in zip(positions, goals)]
    world = sim.World(t=0.0, states=states, starts=positions, goals=goals,
                      obstacles=list(obstacles), references=refs)
    world.commands[:] = qd.QuadParams().hover_thrust
    return world


def test_generation_is_deterministic():
    cfg = small_config(N=5, N_o=5, env_bounds=config.ENV_BOUNDS)
    a, b = sim.generate_scenario(cfg), sim.generate_scenario(cfg)
    np.testing.assert_array_equal(a.states, b.states)
    np.testing.assert_array_equal(a.goals, b.goals)
    assert [(o.p.tolist(), o.radius) for o in a.obstacles] == [(o.p.tolist(), o.radius) for o in b.obstacles]
    other = sim.generate_scenario(replace(cfg, seed=4))
    assert not np.array_equal(a.states, other.states)


def test_generated_positions_respect_margins():
    cfg = small_config(N=5, N_o=5, env_bounds=config.ENV_BOUNDS)
    world = sim.generate_scenario(cfg)
    assert world.agent_distances().min() >= cfg.agent_safety_distance
    for points in (world.starts, world.goals):
        for o in world.obstacles:
            assert np.all(np.linalg.norm(points - o.p, axis=1) >= cfg.obstacle_safety_distance(o.radius))
    for o in world.obstacles:
        assert cfg.r_o_range[0] <= o.radius <= cfg.r_o_range[1]
    np.testing.assert_allclose(world.commands, cfg.params.hover_thrust)


def test_generation_without_obstacles():
    world = sim.generate_scenario(small_config(N_o=0))
    assert world.obstacles == []
    assert world.obstacle_distances().shape == (3, 0)


def test_rejection_budget_exhausted():
    cfg = small_config(N=4, N_o=0, env_bounds=((0, 0.1), (0, 0.1), (1, 1.1)), rejection_budget=50)
    with pytest.raises(ScenarioGenerationError):
        sim.generate_scenario(cfg)


def test_scripted_scenarios_check_their_sizes():
    with pytest.raises(ConfigError):
        sim.generate_scenario(small_config(kind='swap', N=3, N_o=0))
    with pytest.raises(ConfigError):
        sim.generate_scenario(small_config(kind='crossing', N=3, N_o=2))
    with pytest.raises(ConfigError):
        small_config(kind='orbit')


def test_crossing_geometry():
    cfg = small_config(kind='crossing', N=3, N_o=3, back_and_forth=True)
    world = sim.generate_scenario(cfg)
    np.testing.assert_allclose(np.linalg.norm(world.starts[:, :2], axis=1), sim.CROSSING_RADIUS)
    np.testing.assert_allclose(world.goals[:, :2], -world.starts[:, :2])
    assert all(o.radius == pytest.approx(0.15) for o in world.obstacles)
    starts = [r.t0 for r in world.references]
    assert starts == pytest.approx([0.0, sim.CROSSING_STAGGER, 2 * sim.CROSSING_STAGGER])
    assert len(world.references[0].waypoints) == 2 * cfg.cycles + 1


def test_config_validation():
    with pytest.raises(ConfigError):
        small_config(control_dt=0.05)
    with pytest.raises(ConfigError):
        small_config(R_dd=-1.0)
    with pytest.raises(ConfigError):
        small_config(N=0)


def test_detection_is_inclusive_and_excludes_self():
    obstacle = sim.Obstacle(id=0, p=np.array([0.0, 3.0, 1.0]), radius=0.5)
    world = line_world([[0, 0, 1], [2, 0, 1], [5, 0, 1]], obstacles=[obstacle])
    agents, obstacles = sim.detect_neighbors(world, 0, 2.0, 3.0)
    assert [n.id for n in agents] == [1]
    assert [n.id for n in obstacles] == [0]
    assert obstacles[0].radius == 0.5
    np.testing.assert_array_equal(obstacles[0].v, 0.0)

    agents, obstacles = sim.detect_neighbors(world, 0, 1.99, 2.99)
    assert agents == [] and obstacles == []

    agents, _ = sim.detect_neighbors(world, 1, math.inf, math.inf)
    assert sorted(n.id for n in agents) == [0, 2]


def test_step_is_independent_of_solve_order():
    cfg = small_config(N_o=0)
    world = sim.generate_scenario(cfg)
    forward, rec_a = sim.step_world(world, sim.make_controllers(world, cfg), cfg)
    shuffled, rec_b = sim.step_world(world, sim.make_controllers(world, cfg), cfg, order=[2, 0, 1])
    np.testing.assert_array_equal(forward.states, shuffled.states)
    np.testing.assert_array_equal(rec_a['commands'], rec_b['commands'])
    assert forward.t == pytest.approx(cfg.control_dt)


def test_step_does_not_mutate_the_input_world():
    cfg = small_config()
    world = sim.generate_scenario(cfg)
    before = world.states.copy()
    obstacles = [(o.p.copy(), o.radius) for o in world.obstacles]
    nxt, _ = sim.step_world(world, sim.make_controllers(world, cfg), cfg)
    np.testing.assert_array_equal(world.states, before)
    for (p, r), o in zip(obstacles, nxt.obstacles):
        np.testing.assert_array_equal(o.p, p)
        assert o.radius == r


def test_out_of_range_agent_does_not_affect_command():
    cfg = sim.ScenarioConfig(N=3, N_o=0, R_dd=2.5, R_ddo=2.5)
    positions = [[0, 0, 1], [2, 0, 1], [6, 0, 1]]
    calm = line_world(positions)
    moving = line_world(positions, velocities=[[0, 0, 0], [0, 0, 0], [-1.5, 0.5, 0]])
    _, rec_calm = sim.step_world(calm, sim.make_controllers(calm, cfg), cfg)
    _, rec_moving = sim.step_world(moving, sim.make_controllers(moving, cfg), cfg)
    np.testing.assert_array_equal(rec_calm['commands'][0], rec_moving['commands'][0])
    assert rec_calm['neighbors'][0] == {'agents': [1], 'obstacles': []}


def test_threaded_step_matches_serial():
    cfg = small_config()
    world = sim.generate_scenario(cfg)
    serial, _ = sim.step_world(world, sim.make_controllers(world, cfg), cfg)
    with ThreadPoolExecutor(max_workers=3) as pool:
        threaded, _ = sim.step_world(world, sim.make_controllers(world, cfg), cfg, pool=pool)
    np.testing.assert_array_equal(serial.states, threaded.states)


def fake_trace(cfg, agent_distances, obstacle_distances, obstacles):
    records = [{'t': 0.1 * k, 'states': None, 'commands': None, 'neighbors': None,
                'agent_distances': np.asarray(d, dtype=float),
                'obstacle_distances': np.asarray(od, dtype=float), 'stats': None,
                'agent_distances_min': np.asarray(d, dtype=float),
                'obstacle_distances_min': np.asarray(od, dtype=float)}
               for k, (d, od) in enumerate(zip(agent_distances, obstacle_distances))]
    return sim.SimTrace(config=cfg.to_dict(), obstacles=obstacles, records=records)


def test_violations_count_onsets_once_per_pair():
    cfg = sim.ScenarioConfig(N=3, N_o=1)
    obstacle = sim.Obstacle(id=0, p=np.zeros(3), radius=0.3)
    # pdist order: (0,1), (0,2), (1,2); agent threshold 0.8, obstacle threshold 0.7
    agent_d = [[1.0, 2.0, 2.0], [0.7, 2.0, 2.0], [0.6, 2.0, 0.9], [0.9, 2.0, 0.79], [0.5, 2.0, 2.0]]
    obstacle_d = [[[1.0], [1.0], [1.0]], [[0.65], [1.0], [1.0]], [[0.75], [1.0], [1.0]],
                  [[0.6], [1.0], [1.0]], [[1.0], [1.0], [1.0]]]
    report = sim.detect_violations(fake_trace(cfg, agent_d, obstacle_d, [obstacle]))
    assert report.total_count == 3
    (pair, onset, dmin), (pair2, onset2, dmin2) = report.agent_agent_events
    assert pair == (0, 1) and onset == pytest.approx(0.1) and dmin == pytest.approx(0.5)
    assert pair2 == (1, 2) and onset2 == pytest.approx(0.3) and dmin2 == pytest.approx(0.79)
    (opair, oonset, odmin), = report.agent_obstacle_events
    assert opair == (0, 0) and oonset == pytest.approx(0.1) and odmin == pytest.approx(0.6)
    frame = report.to_frame()
    assert list(frame['kind']) == ['agent-agent', 'agent-agent', 'agent-obstacle']


class HoverController:
    """Holds hover thrust regardless of neighbors"""

    def __init__(self, agent_id, params):
        self.agent_id = agent_id
        self.params = params

    def control(self, x0, t, neighbors):
        return qd.MotorCommand.hover(self.params), {}


def test_violation_between_control_samples_is_counted():
    # passing at 1.5 m/s each with 0.79 m lateral offset; closest approach at t = 0.05,
    # both control samples sit at 0.804 m
    cfg = sim.ScenarioConfig(N=2, N_o=0, R_dd=0.0, R_ddo=0.0)
    world = line_world([[-0.075, 0, 1], [0.075, 0.79, 1]], velocities=[[1.5, 0, 0], [-1.5, 0, 0]])
    controllers = [HoverController(i, cfg.params) for i in range(2)]
    nxt, record = sim.step_world(world, controllers, cfg)

    assert record['agent_distances'][0] > cfg.agent_safety_distance
    assert nxt.agent_distances()[0] > cfg.agent_safety_distance
    assert record['agent_distances_min'][0] == pytest.approx(0.79, abs=1e-6)

    trace = sim.SimTrace(config=cfg.to_dict(), obstacles=[], records=[record, sim._record(nxt)])
    assert trace.min_agent_distance() == pytest.approx(0.79, abs=1e-6)
    (pair, onset, dmin), = sim.detect_violations(trace).agent_agent_events
    assert pair == (0, 1) and onset == 0.0
    assert dmin == pytest.approx(0.79, abs=1e-6)


def test_range_regimes():
    cfg = sim.ScenarioConfig()
    assert sim.range_regime('inf', cfg) == (math.inf, math.inf)
    assert sim.range_regime('restrictive', cfg) == (1.0, 1.5)
    R_dd, R_ddo = sim.range_regime('nonconservative', cfg)
    assert R_dd == pytest.approx(3.8945, abs=1e-3)
    assert R_ddo == pytest.approx(2.616, abs=1e-3)
    assert sim.with_regime(cfg, 'r2.0').R_dd == 2.0
    with pytest.raises(ConfigError):
        sim.range_regime('wide', cfg)


def test_empty_sweep_grid():
    table = sim.sweep_campaign([], [0, 1], sim.ScenarioConfig(), progress=False)
    assert table.empty
    assert list(table.columns) == sim.SWEEP_COLUMNS


def test_short_run_records_every_step():
    cfg = small_config(sim_duration=0.5)
    trace, report = sim.run_scenario(cfg)
    assert len(trace.records) == 6
    assert trace.times[-1] == pytest.approx(0.5)
    assert trace.records[-1]['commands'] is None
    assert report.total_count == 0


def test_trace_is_reproducible_across_runs_and_workers():
    cfg = small_config(sim_duration=1.0)
    first, _ = sim.run_scenario(cfg)
    second, _ = sim.run_scenario(cfg)
    threaded, _ = sim.run_scenario(replace(cfg, parallel=3))
    assert trace_export.trace_hash(first) == trace_export.trace_hash(second)
    assert trace_export.trace_hash(first) == trace_export.trace_hash(threaded)


def test_swap_scenario_config():
    swap = sim.SwapScenario().with_speed(0.5)
    cfg = swap.scenario_config(2.0)
    assert cfg.kind == 'swap' and cfg.params.v_max == 0.5
    assert cfg.R_dd == 2.0 and not cfg.stop_at_goal
    assert swap.geom.safety_distance == pytest.approx(0.8)


def sweep_totals(N, N_o, regime, seeds=range(10)):
    base = sim.ScenarioConfig(N=N, N_o=N_o)
    table = sim.sweep_campaign([(N, N_o, regime)], list(seeds), base, progress=False)
    return int(table['violations'].iloc[0])


@pytest.mark.slow
@pytest.mark.parametrize('N,N_o', [(2, 0), (2, 5), (5, 0), (5, 5)])
def test_low_density_is_violation_free(N, N_o):
    assert sweep_totals(N, N_o, 'nonconservative') == 0


@pytest.mark.slow
@pytest.mark.parametrize('N,N_o', [(2, 5), (5, 5)])
def test_unlimited_and_bounded_ranges_agree(N, N_o):
    assert sweep_totals(N, N_o, 'inf') == sweep_totals(N, N_o, 'nonconservative')


@pytest.mark.slow
@pytest.mark.parametrize('N_o', [10, 20])
def test_high_density(N_o):
    bounded = sweep_totals(10, N_o, 'nonconservative')
    assert bounded <= 4
    assert sweep_totals(10, N_o, 'restrictive') > bounded


@pytest.mark.slow
def test_crossing_keeps_published_clearances():
    cfg = sim.ScenarioConfig(kind='crossing', N=3, N_o=3, back_and_forth=True, cycles=5)
    R_dd, _ = sim.range_regime('nonconservative', cfg)
    cfg = replace(cfg, R_dd=R_dd, R_ddo=1.85)
    trace, report = sim.run_scenario(cfg)
    assert trace.min_agent_distance() >= 0.8
    for record in trace.records:
        assert np.all(record['obstacle_distances_min'] >= 0.55)
    assert report.total_count == 0


@pytest.mark.slow
def test_swap_with_unlimited_range_is_violation_free():
    cfg = sim.ScenarioConfig(kind='swap', N=2, N_o=0, R_dd=math.inf, R_ddo=math.inf)
    trace, report = sim.run_scenario(cfg)
    assert report.total_count == 0
    assert trace.min_agent_distance() >= cfg.agent_safety_distance


@pytest.mark.slow
@pytest.mark.parametrize('seed', range(50))
def test_head_on_at_conservative_range_stays_safe(seed, gains, params):
    """Two vehicles closing at full speed, detected first at the conservative range"""
    pair = rb.homogeneous_range_pair(gains, params, config.D_S, config.D_SO, 1.0, config.CONTROL_DT,
                                     conservative=True)
    R = pair.R_dd_discrete
    rng = np.random.default_rng(seed)
    heading = rng.uniform(0.0, 2.0 * np.pi)
    e = np.array([np.cos(heading), np.sin(heading), 0.0])
    center = np.array([0.0, 0.0, 1.25]) + rng.uniform(-0.5, 0.5, size=3) * np.array([1, 1, 0.2])
    starts = np.array([center - 0.5 * R * e, center + 0.5 * R * e])
    goals = np.array([center + (0.5 * R + 2.0) * e, center - (0.5 * R + 2.0) * e])
    states = np.array([qd.QuadState.at(p).to_vector() for p in starts])
    states[0, qd.V_SLICE] = params.v_max * e
    states[1, qd.V_SLICE] = -params.v_max * e
    refs = [min_jerk_reference(s, g, params.v_max) for s, g in zip(starts, goals)]
    world = sim.World(t=0.0, states=states, starts=starts, goals=goals, obstacles=[], references=refs)
    world.commands[:] = params.hover_thrust

    cfg = sim.ScenarioConfig(N=2, N_o=0, R_dd=R, R_ddo=math.inf, stop_at_goal=False)
    trace = sim.run_world(world, cfg, duration=6.0)
    assert trace.min_agent_distance() >= cfg.agent_safety_distance
