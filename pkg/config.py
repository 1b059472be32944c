# Configuration defaults for the ECBF swarm toolkit

import logging
import math

# Vehicle (QuadParams defaults)
MASS = 1.0  # kg
INERTIA_DIAG = (0.005, 0.005, 0.009)  # kg*m^2
ARM_LENGTH = 0.17  # m
TORQUE_COEFF = 0.016  # m, yaw drag torque per newton of thrust
U_MIN = 0.0  # N per rotor
U_MAX = 6.0  # N per rotor
V_MAX = 1.5  # m/s
A_MAX = 2.0  # m/s^2, certified translational acceleration bound
ROBOT_RADIUS = 0.2  # r_q, m
GRAVITY = 9.81

# ECBF gains
ALPHA1 = 36.0
ALPHA2 = 22.0

# Safety margins
D_S = 0.4  # agent-agent, m
D_SO = 0.2  # agent-obstacle, m

# NMPC
HORIZON = 1.0  # s
CONTROL_DT = 0.1  # s
Q_POSITION = 10.0
Q_VELOCITY = 1.0
Q_QUATERNION = 1.0
Q_RATE = 0.1
R_INPUT = 0.1
SLACK_PENALTY = 1.0e4
SLACK_QUADRATIC = 1.0  # keeps the slack block positive definite
SPEED_SLACK_PENALTY = 1.0e3
MAX_SQP_ITERS = 50
INITIAL_SQP_ITERS = 5  # full SQP iterations on the first control step
KKT_TOL = 1.0e-6
QP_REGULARIZATION = 1.0e-8

# Simulation
PLANT_SUBSTEPS = 10
SIM_DURATION = 40.0  # s
GOAL_RADIUS = 0.10  # m
GOAL_SPEED = 0.10  # m/s
ENV_BOUNDS = ((-8.0, 8.0), (-8.0, 8.0), (0.5, 2.0))
OBSTACLE_RADIUS_RANGE = (0.1, 1.0)
REJECTION_BUDGET = 10000
BACK_AND_FORTH_CYCLES = 5

# Detection range regimes (R_dd, R_ddo); "nonconservative" is computed
RANGE_REGIMES = {
    'inf': (math.inf, math.inf),
    'nonconservative': None,
    'r2.0': (2.0, 2.0),
    'restrictive': (1.0, 1.5),
}

# Head-on swap used by the detection-range oracle
SWAP_LENGTH = 24.0  # m
SWAP_ALTITUDE = 1.25  # m
ORACLE_TOLERANCE = 0.05  # m
ORACLE_V_MAX_LIST = (0.5, 1.0, 1.5, 2.0)

# Output
SCHEMA_VERSION = "1.0"
TOOL_VERSION = "0.3.0"
ENV_PREFIX = "ECBF_SWARM_"

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def setup_logging(level='INFO', log_file=None):
    """Setup logging for command-line runs

    Args:
        level: logging level name
        log_file: optional path of an additional log file

    Returns:
        The package root logger
    """
    handlers = [logging.StreamHandler()]
    if log_file:
        handlers.append(logging.FileHandler(log_file))

    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.INFO),
        format=LOG_FORMAT,
        handlers=handlers,
        force=True,
    )
    return logging.getLogger('ecbf_swarm')
