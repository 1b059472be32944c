"""
Detection range bounds
Closed-form minimum activation distances for the ECBF constraint (conservative
and non-conservative), discrete-time correction, pairwise compatibility
verdicts and the simulation-based bisection oracle
"""

import logging
import math
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd

import config
import ecbf_core as ecbf
import quad_dynamics as qd
from exceptions import InternalConsistencyError

logger = logging.getLogger(__name__)

UNBOUNDED_BELOW = None

VERDICT_GUARANTEED = 'guaranteed'
VERDICT_PAIRWISE = 'pairwise-only'
VERDICT_NONE = 'no-guarantee'


@dataclass(frozen=True)
class RangeBoundInputs:
    """Everything one pair needs for a closed-form bound"""
    gains: ecbf.EcbfGains
    geom: ecbf.SafetyGeometry
    a_max_i: float
    v_rel_max: float
    p1: Optional[float] = None

    def __post_init__(self):
        if self.p1 is None:
            object.__setattr__(self, 'p1', self.gains.p1)
        if self.a_max_i < 0 or self.v_rel_max < 0:
            raise ValueError("a_max and v_rel_max must be nonnegative")
        if not (math.isclose(self.p1, self.gains.p1, rel_tol=1e-9)
                or math.isclose(self.p1, self.gains.p2, rel_tol=1e-9)):
            raise ValueError(f"p1={self.p1} is not one of the gain poles")


@dataclass(frozen=True)
class RangeBoundResult:
    """
    Per-condition thresholds and their combination

    threshold_ii is None when its polynomial has no real root, i.e. the
    condition holds for every range.
    """
    threshold_i: float
    threshold_ii: Optional[float]
    threshold_iii: float
    bound: float
    combine: str = 'max'

    @property
    def ii_unbounded_below(self) -> bool:
        return self.threshold_ii is UNBOUNDED_BELOW

    def thresholds(self) -> List[float]:
        return [t for t in (self.threshold_i, self.threshold_ii, self.threshold_iii) if t is not None]

    def to_dict(self) -> dict:
        return {
            'threshold_i': self.threshold_i,
            'threshold_ii': self.threshold_ii,
            'threshold_iii': self.threshold_iii,
            'bound': self.bound,
            'combine': self.combine,
        }


class RangePair(NamedTuple):
    R_dd: float
    R_ddo: float
    R_dd_discrete: float
    R_ddo_discrete: float


def _larger_root(a: float, b: float, c: float) -> Optional[float]:
    """Larger real root of aR^2 + bR + c with a > 0, None without real roots"""
    disc = b * b - 4.0 * a * c
    if disc < 0:
        return None
    sq = math.sqrt(disc)
    q = -0.5 * (b + math.copysign(sq, b))
    if q == 0.0:
        return 0.0
    return max(q / a, c / q)


def condition_i_coefficients(inputs: RangeBoundInputs, conservative: bool):
    """(a, b, c) of the acceleration condition"""
    alpha1, alpha2 = inputs.gains.alpha1, inputs.gains.alpha2
    v = inputs.v_rel_max
    D = inputs.geom.safety_distance
    if conservative:
        b = -2.0 * (inputs.a_max_i + alpha2 * v)
    else:
        b = 2.0 * (inputs.a_max_i - alpha2 * v)
    return alpha1, b, 2.0 * v * v - alpha1 * D * D


def condition_ii_coefficients(inputs: RangeBoundInputs):
    D = inputs.geom.safety_distance
    return inputs.p1, -2.0 * inputs.v_rel_max, inputs.p1 * D * D


def _bound(inputs: RangeBoundInputs, conservative: bool, combine: str) -> RangeBoundResult:
    if combine not in ('max', 'min'):
        raise ValueError(f"combine must be 'max' or 'min', got {combine!r}")
    a, b, c = condition_i_coefficients(inputs, conservative)
    root_i = _larger_root(a, b, c)
    if root_i is None:
        raise InternalConsistencyError(
            f"acceleration condition has no real root (a={a}, b={b}, c={c})"
        )
    threshold_i = max(root_i, 0.0)
    root_ii = _larger_root(*condition_ii_coefficients(inputs))
    threshold_ii = UNBOUNDED_BELOW if root_ii is None else max(root_ii, 0.0)
    threshold_iii = inputs.geom.safety_distance

    finite = [t for t in (threshold_i, threshold_ii, threshold_iii) if t is not None]
    bound = max(finite) if combine == 'max' else min(finite)
    return RangeBoundResult(threshold_i, threshold_ii, threshold_iii, bound, combine)


def conservative_bound(inputs: RangeBoundInputs, combine: str = 'max') -> RangeBoundResult:
    """
    Range at which any admissible ego action keeps the pair safe

    Args:
        inputs: gains, geometry, a_max and v_rel_max of the pair
        combine: 'max' (all conditions must hold) or 'min' (literal reading,
            for comparison only)

    Returns:
        RangeBoundResult
    """
    return _bound(inputs, conservative=True, combine=combine)


def nonconservative_bound(inputs: RangeBoundInputs, combine: str = 'max') -> RangeBoundResult:
    """Range at which some admissible ego action keeps the pair safe"""
    return _bound(inputs, conservative=False, combine=combine)


def discretize_bound(R: float, dt: float, v_rel_max: float) -> float:
    """Add the worst-case closing distance covered during one control interval"""
    if dt < 0 or v_rel_max < 0:
        raise ValueError("dt and v_rel_max must be nonnegative")
    return R + dt * v_rel_max


def pair_inputs(gains: ecbf.EcbfGains, params: qd.QuadParams, geom: ecbf.SafetyGeometry,
                obstacle_radius: Optional[float] = None, v_max_j: Optional[float] = None) -> RangeBoundInputs:
    """Inputs for an agent-agent pair or, with obstacle_radius, an agent-obstacle pair"""
    if obstacle_radius is not None:
        pair_geom = geom.for_pair(obstacle_radius, obstacle=True)
        v_rel_max = params.v_max
    else:
        pair_geom = geom.for_pair(params.radius, obstacle=False)
        v_rel_max = params.v_max + (params.v_max if v_max_j is None else v_max_j)
    return RangeBoundInputs(gains=gains, geom=pair_geom, a_max_i=params.a_max, v_rel_max=v_rel_max)


def homogeneous_range_pair(gains: ecbf.EcbfGains, params: qd.QuadParams, d_s: float, d_so: float,
                           obstacle_radius: float, dt: float, conservative: bool = False) -> RangePair:
    """
    Agent-agent and agent-obstacle detection ranges for identical vehicles

    Agent pairs close at 2 v_max, obstacles are static (v_max). The largest
    obstacle radius in the scenario should be passed.
    """
    geom = ecbf.SafetyGeometry(d_s, d_so, params.radius, params.radius)
    fn = conservative_bound if conservative else nonconservative_bound
    agent = pair_inputs(gains, params, geom)
    obst = pair_inputs(gains, params, geom, obstacle_radius=obstacle_radius)
    R_dd = fn(agent).bound
    R_ddo = fn(obst).bound
    return RangePair(
        R_dd=R_dd,
        R_ddo=R_ddo,
        R_dd_discrete=discretize_bound(R_dd, dt, agent.v_rel_max),
        R_ddo_discrete=discretize_bound(R_ddo, dt, obst.v_rel_max),
    )


def compatibility_check(agents: Sequence[RangeBoundInputs], ranges: Sequence[float],
                        dt: float = 0.0) -> pd.DataFrame:
    """
    Per-pair verdict for the activation distances actually used

    A pair is 'guaranteed' when its distance meets the conservative bound (the
    joint forward-invariance hypothesis), 'pairwise-only' when it meets only the
    non-conservative one and 'no-guarantee' otherwise. With dt > 0 both bounds
    are discretized first.

    Returns:
        DataFrame with one row per pair plus an `all_guaranteed` attribute
    """
    if len(agents) != len(ranges):
        raise ValueError("one activation distance per pair required")
    rows = []
    for k, (inputs, R) in enumerate(zip(agents, ranges)):
        hat = discretize_bound(conservative_bound(inputs).bound, dt, inputs.v_rel_max)
        check = discretize_bound(nonconservative_bound(inputs).bound, dt, inputs.v_rel_max)
        if R >= hat:
            verdict = VERDICT_GUARANTEED
        elif R >= check:
            verdict = VERDICT_PAIRWISE
        else:
            verdict = VERDICT_NONE
        rows.append({'pair': k, 'range': float(R), 'conservative': hat,
                     'nonconservative': check, 'verdict': verdict})
    report = pd.DataFrame(rows, columns=['pair', 'range', 'conservative', 'nonconservative', 'verdict'])
    report.attrs['all_guaranteed'] = bool((report['verdict'] == VERDICT_GUARANTEED).all())
    return report


def min_range_oracle(v_max: float, scenario=None, tolerance: float = config.ORACLE_TOLERANCE) -> float:
    """
    Smallest detection range for which the head-on swap stays violation free

    Bisection between the safety distance and an upper bracket derived from
    the discretized conservative bound, doubled until it is violation free.

    Args:
        v_max: cruise speed of both vehicles
        scenario: swarm_sim.SwapScenario (defaults to the published setup)
        tolerance: bracket width at which the search stops

    Returns:
        Upper end of the final bracket (a range known to be safe)
    """
    # imported here, the simulator depends on this module
    import swarm_sim

    if scenario is None:
        scenario = swarm_sim.SwapScenario()
    scenario = scenario.with_speed(v_max)
    lo = scenario.geom.safety_distance
    if v_max <= 0 or not scenario.violates(lo):
        logger.info("v_max=%.2f: no violation at the safety distance %.3f", v_max, lo)
        return lo

    inputs = pair_inputs(scenario.gains, scenario.params, scenario.geom)
    hi = 1.5 * discretize_bound(conservative_bound(inputs).bound, scenario.ocp.dt, inputs.v_rel_max)
    for _ in range(4):
        if not scenario.violates(hi):
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise InternalConsistencyError(f"no violation-free detection range found up to {hi:.2f} m")

    while hi - lo > tolerance:
        mid = 0.5 * (lo + hi)
        violated = scenario.violates(mid)
        logger.info("Oracle v_max=%.2f trying R=%.3f -> %s", v_max, mid, 'violation' if violated else 'safe')
        if violated:
            lo = mid
        else:
            hi = mid
    return hi


def bound_table(v_max_list: Sequence[float], gains: ecbf.EcbfGains, params: qd.QuadParams,
                geom: ecbf.SafetyGeometry, dt: float, oracle_values: Optional[Sequence[float]] = None) -> pd.DataFrame:
    """Theory curves versus v_max for two identical vehicles"""
    rows = []
    for k, v in enumerate(v_max_list):
        vehicle = qd.QuadParams(**{**params.to_dict(), 'v_max': float(v)})
        inputs = pair_inputs(gains, vehicle, geom)
        hat = conservative_bound(inputs).bound
        check = nonconservative_bound(inputs).bound
        rows.append({
            'v_max': float(v),
            'theory_conservative': hat,
            'theory_nonconservative': check,
            'theory_discrete': discretize_bound(check, dt, inputs.v_rel_max),
            'oracle_value': np.nan if oracle_values is None else float(oracle_values[k]),
        })
    return pd.DataFrame(rows, columns=['v_max', 'theory_conservative', 'theory_nonconservative',
                                       'theory_discrete', 'oracle_value'])
