"""
ecbf-swarm command line
Bounds report, gain validation, detection-range oracle curves, violation
sweeps and single scenario runs with trace output
"""

import functools
import itertools
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import click
import numpy as np
import pandas as pd
from colorama import Fore, Style
from colorama import init as colorama_init

import config
import ecbf_core as ecbf
import range_bounds as rb
import swarm_sim
import trace_export
from exceptions import ConfigError, EcbfSwarmError, InvalidGainsError, ScenarioGenerationError
from scenario_config import get_config

logger = logging.getLogger(__name__)

EXIT_ERROR = 1
EXIT_CONFIG = 3
EXIT_GENERATION = 4
EXIT_INVALID_GAINS = 5

RANGE_CURVE_COLUMNS = ['v_max', 'conservative_discrete', 'nonconservative_discrete', 'oracle']


def ok(message):
    click.echo(f"{Fore.GREEN}✅ {message}{Style.RESET_ALL}")


def warn(message):
    click.echo(f"{Fore.YELLOW}⚠️  {message}{Style.RESET_ALL}")


def fail(message):
    click.echo(f"{Fore.RED}❌ {message}{Style.RESET_ALL}", err=True)


def handle_errors(func):
    """Map library errors to exit codes"""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except ConfigError as e:
            fail(f"Configuration error: {e}")
            raise SystemExit(EXIT_CONFIG)
        except ScenarioGenerationError as e:
            fail(f"Scenario generation failed: {e}")
            raise SystemExit(EXIT_GENERATION)
        except InvalidGainsError as e:
            fail(f"Invalid ECBF gains: {e}")
            raise SystemExit(EXIT_INVALID_GAINS)
        except EcbfSwarmError as e:
            logger.exception("Command failed")
            fail(str(e))
            raise SystemExit(EXIT_ERROR)
    return wrapper


def common_options(func):
    func = click.option('--config', 'config_path', type=click.Path(), default=None,
                        help='JSON configuration file')(func)
    func = click.option('--seed', type=int, default=None, help='Scenario seed')(func)
    func = click.option('--out', 'out_dir', type=click.Path(file_okay=False), default='results',
                        show_default=True, help='Output directory')(func)
    return func


def regime_option(func):
    return click.option('--regime', type=click.Choice(list(config.RANGE_REGIMES)), default=None,
                        help='Detection-range regime')(func)


def parallel_option(func):
    return click.option('--parallel', type=click.IntRange(min=1), default=1, show_default=True,
                        help='Worker count')(func)


def _prepare(command, config_path, out_dir, seed=None):
    if config_path is not None and not os.path.exists(config_path):
        raise ConfigError(f"config file not found: {config_path}")
    swarm = get_config(config_path)
    os.makedirs(out_dir, exist_ok=True)
    manifest = trace_export.RunManifest(command=command, config_path=config_path, output_dir=out_dir,
                                        resolved_config=swarm.to_dict(), seed=seed)
    return swarm, manifest


def _finish(manifest, outputs):
    manifest.finish(outputs)
    path = manifest.write()
    ok(f"Outputs written to {manifest.output_dir} ({', '.join(manifest.outputs + [os.path.basename(path)])})")


@click.group()
@click.option('--log-level', default='WARNING', show_default=True,
              type=click.Choice(['DEBUG', 'INFO', 'WARNING', 'ERROR'], case_sensitive=False))
@click.option('--log-file', type=click.Path(dir_okay=False), default=None)
@click.version_option(config.TOOL_VERSION, prog_name='ecbf-swarm')
def main(log_level, log_file):
    """Decentralized NMPC with ECBF constraints for quadrotor teams"""
    colorama_init()
    config.setup_logging(log_level, log_file)


def bounds_frame(swarm) -> pd.DataFrame:
    gains = swarm.gains
    params = swarm.params
    dt = swarm.ocp.dt
    r_o = float(swarm.raw['scenario']['r_o_range'][1])
    cases = [
        ('agent-agent', rb.pair_inputs(gains, params, swarm.geom)),
        ('agent-obstacle', rb.pair_inputs(gains, params, swarm.geom, obstacle_radius=r_o)),
    ]
    rows = []
    for case, inputs in cases:
        for kind, fn in (('conservative', rb.conservative_bound), ('nonconservative', rb.nonconservative_bound)):
            result = fn(inputs)
            literal = fn(inputs, combine='min')
            rows.append({
                'case': case,
                'kind': kind,
                'v_rel_max': inputs.v_rel_max,
                'safety_distance': inputs.geom.safety_distance,
                'threshold_i': result.threshold_i,
                'threshold_ii': np.nan if result.ii_unbounded_below else result.threshold_ii,
                'threshold_iii': result.threshold_iii,
                'bound': result.bound,
                'bound_literal_min': literal.bound,
                'discrete': rb.discretize_bound(result.bound, dt, inputs.v_rel_max),
            })
    return pd.DataFrame(rows)


@main.command()
@common_options
@handle_errors
def bounds(config_path, seed, out_dir):
    """Closed-form detection-range bounds"""
    swarm, manifest = _prepare('bounds', config_path, out_dir, seed)
    frame = bounds_frame(swarm)
    click.echo(frame.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    for row in frame.itertuples():
        if row.bound_literal_min < row.bound:
            warn(f"{row.case} {row.kind}: literal min combination gives {row.bound_literal_min:.3f} m "
                 f"< {row.bound:.3f} m required by all conditions")
    path = trace_export.write_table(frame, os.path.join(out_dir, 'bounds.csv'))
    _finish(manifest, [path])


@main.command('validate-gains')
@common_options
@handle_errors
def validate_gains(config_path, seed, out_dir):
    """Pole check and initial-condition membership for the configured world"""
    swarm, manifest = _prepare('validate-gains', config_path, out_dir, seed)
    report = ecbf.validate_gains(swarm.alpha1, swarm.alpha2)
    rows = [{'kind': 'gains', 'i': None, 'j': None, 'alpha1': report['alpha1'], 'alpha2': report['alpha2'],
             'p1': report['p1'], 'p2': report['p2'], 'valid': report.valid, 'reason': report['reason']}]
    path = os.path.join(out_dir, 'gains_report.csv')
    if not report.valid:
        trace_export.write_table(pd.DataFrame(rows), path)
        _finish(manifest, [path])
        raise InvalidGainsError(report['reason'])
    ok(f"Gains valid: poles ({report['p1']:.4f}, {report['p2']:.4f})")

    cfg = swarm.scenario(seed=seed)
    world = swarm_sim.generate_scenario(cfg)
    gains = swarm.gains
    boundary = 0
    entries = [(i, j, 'agent', world.states[j, :3], 0.0) for i in range(world.n_agents)
               for j in range(i + 1, world.n_agents)]
    entries += [(i, o.id, 'obstacle', o.p, o.radius) for i in range(world.n_agents) for o in world.obstacles]
    for i, j, kind, p_j, r_j in entries:
        rel = ecbf.relative_state(world.states[i, :3], world.states[i, 3:6], p_j,
                                  world.states[j, 3:6] if kind == 'agent' else np.zeros(3))
        geom = swarm.geom.for_pair(swarm.params.radius if kind == 'agent' else r_j, kind == 'obstacle')
        nu = ecbf.validate_initial_conditions(rel, geom, gains)
        boundary += int(nu['on_boundary'])
        rows.append({'kind': kind, 'i': i, 'j': j, 'nu0': nu['nu0'], 'nu1': nu['nu1'],
                     'in_c0': nu['in_c0'], 'in_c1': nu['in_c1'], 'on_boundary': nu['on_boundary'],
                     'valid': nu.valid})
        if not nu.valid:
            warn(f"Pair ({i}, {kind} {j}) starts outside the safe set: nu0={nu['nu0']:.4f} nu1={nu['nu1']:.4f}")
    if boundary:
        warn(f"{boundary} pair(s) start on the safe-set boundary")
    trace_export.write_table(pd.DataFrame(rows), path)
    _finish(manifest, [path])


def _oracle_point(args):
    scenario, v_max, tolerance = args
    return rb.min_range_oracle(v_max, scenario, tolerance)


@main.command('range-curve')
@common_options
@parallel_option
@handle_errors
def range_curve(config_path, seed, out_dir, parallel):
    """Theoretical versus simulated minimum detection range over v_max"""
    swarm, manifest = _prepare('range-curve', config_path, out_dir, seed)
    v_list = [float(v) for v in swarm.experiments['curve_v_max']]
    tolerance = float(swarm.experiments['oracle_tolerance'])
    scenario = swarm.swap()
    jobs = [(scenario, v, tolerance) for v in v_list]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as executor:
            oracle = list(executor.map(_oracle_point, jobs))
    else:
        oracle = [_oracle_point(job) for job in jobs]

    table = rb.bound_table(v_list, swarm.gains, swarm.params, swarm.geom, swarm.ocp.dt, oracle)
    frame = pd.DataFrame({
        'v_max': table['v_max'],
        'conservative_discrete': [rb.discretize_bound(R, swarm.ocp.dt, 2.0 * v)
                                  for R, v in zip(table['theory_conservative'], table['v_max'])],
        'nonconservative_discrete': table['theory_discrete'],
        'oracle': table['oracle_value'],
    }, columns=RANGE_CURVE_COLUMNS)
    click.echo(frame.to_string(index=False, float_format=lambda v: f"{v:.3f}"))
    for row in frame.itertuples():
        if row.oracle > row.nonconservative_discrete:
            warn(f"v_max={row.v_max}: oracle {row.oracle:.3f} m exceeds the bound {row.nonconservative_discrete:.3f} m")
    path = os.path.join(out_dir, 'range_curve.csv')
    frame.to_csv(path, index=False)
    _finish(manifest, [path])


@main.command()
@common_options
@regime_option
@parallel_option
@handle_errors
def sweep(config_path, seed, out_dir, regime, parallel):
    """Violation totals over agent count, obstacle count and detection regime"""
    swarm, manifest = _prepare('sweep', config_path, out_dir, seed)
    exp = swarm.experiments
    regimes = [regime] if regime else list(exp['sweep_regimes'])
    grid = list(itertools.product(exp['sweep_N'], exp['sweep_N_o'], regimes))
    first = int(swarm.raw['scenario']['seed'] if seed is None else seed)
    seeds = list(range(first, first + int(exp['sweep_seeds'])))
    base = swarm.scenario(seed=first)
    table = swarm_sim.sweep_campaign(grid, seeds, base, parallel=parallel)
    click.echo(table.to_string(index=False))
    path = trace_export.write_table(table, os.path.join(out_dir, 'sweep.csv'))
    _finish(manifest, [path])


@main.command()
@common_options
@regime_option
@parallel_option
@click.option('--scenario', 'kind', type=click.Choice(swarm_sim.SCENARIO_KINDS), default=None,
              help='Scenario kind (default from the config file)')
@handle_errors
def simulate(config_path, seed, out_dir, regime, parallel, kind):
    """Run one scenario and write its trace"""
    swarm, manifest = _prepare('simulate', config_path, out_dir, seed)
    if kind == 'crossing':
        cfg = swarm.crossing(seed=seed, regime=regime)
    elif kind == 'swap':
        cfg = swarm.scenario(regime=regime, seed=seed, kind='swap', N=2, N_o=0)
    else:
        cfg = swarm.scenario(regime=regime, seed=seed, **({'kind': kind} if kind else {}))
    cfg = replace(cfg, parallel=parallel)
    manifest.resolved_config = {'file': swarm.to_dict(), 'scenario': cfg.to_dict()}

    trace, report = swarm_sim.run_scenario(cfg, progress=True)
    outputs = [
        trace_export.write_trace(trace, os.path.join(out_dir, trace_export.TRACE_FILE)),
        trace_export.write_distances(trace, os.path.join(out_dir, trace_export.DISTANCES_FILE)),
        trace_export.write_violations(report, os.path.join(out_dir, trace_export.VIOLATIONS_FILE)),
    ]
    click.echo(f"Steps: {len(trace.records)}  goals reached: {trace.completed}")
    click.echo(f"Min inter-agent distance: {trace.min_agent_distance():.3f} m "
               f"(safety distance {cfg.agent_safety_distance:.3f} m)")
    if trace.obstacles:
        click.echo(f"Min obstacle clearance: {trace.min_obstacle_clearance():.3f} m")
    click.echo(f"Trace hash: {trace_export.trace_hash(trace)}")
    if report.total_count:
        warn(f"{report.total_count} barrier violation(s)")
    else:
        ok("No barrier violations")
    _finish(manifest, outputs)


if __name__ == '__main__':
    main()
