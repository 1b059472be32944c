"""
Configuration loading for the ECBF swarm toolkit
Sectioned JSON file, defaults from config.py, ECBF_SWARM_<SECTION>_<KEY>
environment overrides (a local .env is honoured) and construction of the
typed objects every module consumes
"""

import copy
import json
import logging
import math
import os
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional

import numpy as np
from dotenv import load_dotenv

import config
import ecbf_core as ecbf
import quad_dynamics as qd
from exceptions import ConfigError, InvalidGainsError
from nmpc_solver import OcpConfig
from swarm_sim import ScenarioConfig, SwapScenario, range_regime

logger = logging.getLogger(__name__)

DEFAULTS = {
    'vehicle': {
        'mass': config.MASS,
        'inertia_diag': list(config.INERTIA_DIAG),
        'arm_length': config.ARM_LENGTH,
        'torque_coeff': config.TORQUE_COEFF,
        'u_min': config.U_MIN,
        'u_max': config.U_MAX,
        'v_max': config.V_MAX,
        'a_max': config.A_MAX,
        'radius': config.ROBOT_RADIUS,
        'gravity': config.GRAVITY,
    },
    'ecbf': {
        'alpha1': config.ALPHA1,
        'alpha2': config.ALPHA2,
    },
    'safety': {
        'd_s': config.D_S,
        'd_so': config.D_SO,
    },
    'ocp': {
        'T': config.HORIZON,
        'dt': config.CONTROL_DT,
        'q_position': config.Q_POSITION,
        'q_velocity': config.Q_VELOCITY,
        'q_quaternion': config.Q_QUATERNION,
        'q_rate': config.Q_RATE,
        'r_input': config.R_INPUT,
        'slack_penalty': config.SLACK_PENALTY,
        'slack_quadratic': config.SLACK_QUADRATIC,
        'speed_slack_penalty': config.SPEED_SLACK_PENALTY,
        'max_sqp_iters': config.MAX_SQP_ITERS,
        'initial_sqp_iters': config.INITIAL_SQP_ITERS,
        'kkt_tol': config.KKT_TOL,
        'rti': True,
        'frozen_vrel': False,
        'ecbf_all_nodes': True,
    },
    'scenario': {
        'kind': 'random',
        'seed': 0,
        'N': 2,
        'N_o': 0,
        'env_bounds': [list(b) for b in config.ENV_BOUNDS],
        'r_o_range': list(config.OBSTACLE_RADIUS_RANGE),
        'sim_duration': config.SIM_DURATION,
        'plant_substeps': config.PLANT_SUBSTEPS,
        'back_and_forth': False,
        'cycles': config.BACK_AND_FORTH_CYCLES,
        'obstacle_radius': 0.15,
        'swap_length': config.SWAP_LENGTH,
        'swap_altitude': config.SWAP_ALTITUDE,
        'rejection_budget': config.REJECTION_BUDGET,
        'parallel': 1,
    },
    'detection': {
        'regime': 'inf',
        'R_dd': None,
        'R_ddo': None,
    },
    'experiments': {
        'curve_v_max': list(config.ORACLE_V_MAX_LIST),
        'oracle_tolerance': config.ORACLE_TOLERANCE,
        'sweep_N': [2, 5, 10],
        'sweep_N_o': [0, 5, 10, 20],
        'sweep_regimes': list(config.RANGE_REGIMES),
        'sweep_seeds': 10,
        'crossing_R_ddo': 1.85,
    },
}


def parse_value(text: str):
    """JSON literal if possible, 'inf' accepted, otherwise the raw string"""
    try:
        return json.loads(text)
    except (TypeError, ValueError):
        if text.strip().lower() in ('inf', 'infinity', '+inf'):
            return math.inf
        return text


def _float(value, section, key) -> float:
    if isinstance(value, str) and value.strip().lower() in ('inf', 'infinity'):
        return math.inf
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"expected a number, got {value!r}", section, key)


def apply_env_overrides(raw: dict, environ: Mapping[str, str]) -> dict:
    """Override raw[section][key] from ECBF_SWARM_<SECTION>_<KEY> variables"""
    prefix = config.ENV_PREFIX
    for name, text in environ.items():
        if not name.startswith(prefix):
            continue
        rest = name[len(prefix):]
        for section in raw:
            head = section.upper() + '_'
            if rest.startswith(head):
                wanted = rest[len(head):].lower()
                key = next((k for k in raw[section] if k.lower() == wanted), None)
                if key is None:
                    raise ConfigError(f"unknown key in environment variable {name}", section, wanted)
                raw[section][key] = parse_value(text)
                logger.debug("Config override from %s", name)
                break
        else:
            raise ConfigError(f"environment variable {name} names no config section", None, None)
    return raw


def load_raw(path: Optional[str] = None, environ: Optional[Mapping[str, str]] = None) -> dict:
    """Defaults merged with the JSON file and the environment"""
    raw = copy.deepcopy(DEFAULTS)
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}", None, None)
        try:
            with open(path) as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path} is not valid JSON: {e}", None, None)
        if not isinstance(data, dict):
            raise ConfigError(f"{path} must contain an object of sections", None, None)
        for section, values in data.items():
            if section not in raw:
                raise ConfigError("unknown section", section, None)
            if not isinstance(values, dict):
                raise ConfigError("section must be an object", section, None)
            for key, value in values.items():
                if key not in raw[section]:
                    raise ConfigError("unknown key", section, key)
                raw[section][key] = value
    return apply_env_overrides(raw, os.environ if environ is None else environ)


@dataclass
class SwarmConfig:
    """Typed view of one resolved configuration"""
    raw: dict
    params: qd.QuadParams
    ocp: OcpConfig
    d_s: float
    d_so: float
    alpha1: float
    alpha2: float
    path: Optional[str] = None
    experiments: dict = field(default_factory=dict)

    @property
    def gains(self) -> ecbf.EcbfGains:
        """Raises InvalidGainsError for complex or nonpositive poles"""
        return ecbf.make_gains(self.alpha1, self.alpha2)

    @property
    def geom(self) -> ecbf.SafetyGeometry:
        return ecbf.SafetyGeometry(self.d_s, self.d_so, self.params.radius, self.params.radius)

    def scenario(self, regime: Optional[str] = None, seed: Optional[int] = None, **overrides) -> ScenarioConfig:
        """ScenarioConfig with detection ranges from explicit values or a regime"""
        s = self.raw['scenario']
        det = self.raw['detection']
        try:
            cfg = ScenarioConfig(
                seed=int(s['seed'] if seed is None else seed),
                N=int(s['N']),
                N_o=int(s['N_o']),
                kind=str(s['kind']),
                env_bounds=tuple(tuple(b) for b in s['env_bounds']),
                r_o_range=tuple(s['r_o_range']),
                d_s=self.d_s,
                d_so=self.d_so,
                gains=self.gains,
                params=self.params,
                ocp=self.ocp,
                sim_duration=_float(s['sim_duration'], 'scenario', 'sim_duration'),
                control_dt=self.ocp.dt,
                plant_substeps=int(s['plant_substeps']),
                back_and_forth=bool(s['back_and_forth']),
                cycles=int(s['cycles']),
                obstacle_radius=_float(s['obstacle_radius'], 'scenario', 'obstacle_radius'),
                swap_length=_float(s['swap_length'], 'scenario', 'swap_length'),
                swap_altitude=_float(s['swap_altitude'], 'scenario', 'swap_altitude'),
                rejection_budget=int(s['rejection_budget']),
                parallel=int(s['parallel']),
            )
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e), 'scenario', None)
        if overrides:
            cfg = replace(cfg, **overrides)

        name = regime or det['regime']
        R_dd, R_ddo = range_regime(name, cfg)
        if regime is None:
            if det['R_dd'] is not None:
                R_dd = _float(det['R_dd'], 'detection', 'R_dd')
            if det['R_ddo'] is not None:
                R_ddo = _float(det['R_ddo'], 'detection', 'R_ddo')
        return replace(cfg, R_dd=R_dd, R_ddo=R_ddo)

    def crossing(self, seed: Optional[int] = None, regime: Optional[str] = None) -> ScenarioConfig:
        """Three-vehicle back-and-forth crossing between three posts"""
        cfg = self.scenario(regime=regime or 'nonconservative', seed=seed, kind='crossing', N=3, N_o=3,
                            back_and_forth=True)
        return replace(cfg, R_ddo=_float(self.experiments['crossing_R_ddo'], 'experiments', 'crossing_R_ddo'))

    def swap(self) -> SwapScenario:
        s = self.raw['scenario']
        return SwapScenario(params=self.params, gains=self.gains, d_s=self.d_s, d_so=self.d_so, ocp=self.ocp,
                            length=_float(s['swap_length'], 'scenario', 'swap_length'),
                            altitude=_float(s['swap_altitude'], 'scenario', 'swap_altitude'),
                            plant_substeps=int(s['plant_substeps']))

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)


def _build_params(v: dict) -> qd.QuadParams:
    try:
        return qd.QuadParams(
            mass=_float(v['mass'], 'vehicle', 'mass'),
            inertia_diag=tuple(_float(j, 'vehicle', 'inertia_diag') for j in v['inertia_diag']),
            arm_length=_float(v['arm_length'], 'vehicle', 'arm_length'),
            torque_coeff=_float(v['torque_coeff'], 'vehicle', 'torque_coeff'),
            u_min=_float(v['u_min'], 'vehicle', 'u_min'),
            u_max=_float(v['u_max'], 'vehicle', 'u_max'),
            v_max=_float(v['v_max'], 'vehicle', 'v_max'),
            a_max=_float(v['a_max'], 'vehicle', 'a_max'),
            radius=_float(v['radius'], 'vehicle', 'radius'),
            gravity=_float(v['gravity'], 'vehicle', 'gravity'),
        )
    except TypeError as e:
        raise ConfigError(str(e), 'vehicle', None)


def _build_ocp(o: dict) -> OcpConfig:
    Q = np.concatenate([
        np.full(3, _float(o['q_position'], 'ocp', 'q_position')),
        np.full(3, _float(o['q_velocity'], 'ocp', 'q_velocity')),
        np.full(4, _float(o['q_quaternion'], 'ocp', 'q_quaternion')),
        np.full(3, _float(o['q_rate'], 'ocp', 'q_rate')),
    ])
    return OcpConfig(
        T=_float(o['T'], 'ocp', 'T'),
        dt=_float(o['dt'], 'ocp', 'dt'),
        Q=Q,
        R_w=np.full(qd.NU, _float(o['r_input'], 'ocp', 'r_input')),
        slack_penalty=_float(o['slack_penalty'], 'ocp', 'slack_penalty'),
        slack_quadratic=_float(o['slack_quadratic'], 'ocp', 'slack_quadratic'),
        speed_slack_penalty=_float(o['speed_slack_penalty'], 'ocp', 'speed_slack_penalty'),
        max_sqp_iters=int(o['max_sqp_iters']),
        initial_sqp_iters=int(o['initial_sqp_iters']),
        kkt_tol=_float(o['kkt_tol'], 'ocp', 'kkt_tol'),
        rti=bool(o['rti']),
        frozen_vrel=bool(o['frozen_vrel']),
        ecbf_all_nodes=bool(o['ecbf_all_nodes']),
    )


def get_config(path: Optional[str] = None, environ: Optional[Mapping[str, str]] = None,
               use_dotenv: bool = True) -> SwarmConfig:
    """
    Resolve the configuration

    Args:
        path: JSON file of sections; None uses the built-in defaults
        environ: mapping used for overrides (default os.environ)
        use_dotenv: load a .env file from the working directory first

    Returns:
        SwarmConfig

    Raises:
        ConfigError: unreadable file, unknown section/key or invalid value
    """
    if use_dotenv and environ is None:
        load_dotenv(override=False)
    raw = load_raw(path, environ)

    params = _build_params(raw['vehicle'])
    ocp = _build_ocp(raw['ocp'])
    safety = raw['safety']
    d_s = _float(safety['d_s'], 'safety', 'd_s')
    d_so = _float(safety['d_so'], 'safety', 'd_so')
    if d_s < 0 or d_so < 0:
        raise ConfigError("safety margins must be nonnegative", 'safety', 'd_s')
    if raw['detection']['regime'] not in config.RANGE_REGIMES:
        raise ConfigError(f"unknown regime {raw['detection']['regime']!r}", 'detection', 'regime')

    swarm = SwarmConfig(
        raw=raw, params=params, ocp=ocp, d_s=d_s, d_so=d_so,
        alpha1=_float(raw['ecbf']['alpha1'], 'ecbf', 'alpha1'),
        alpha2=_float(raw['ecbf']['alpha2'], 'ecbf', 'alpha2'),
        path=path, experiments=dict(raw['experiments']),
    )
    try:
        swarm.gains
    except InvalidGainsError as e:
        logger.warning("Configured gains are invalid: %s", e)
    return swarm
