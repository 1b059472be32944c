"""
Error types for the ECBF swarm toolkit
Every diagnostic raised by the library derives from EcbfSwarmError
"""


class EcbfSwarmError(Exception):
    """Base class for all library errors"""


class ConfigError(EcbfSwarmError):
    """Invalid or missing configuration value"""

    def __init__(self, message, section=None, key=None):
        if section and key:
            message = f"[{section}] {key}: {message}"
        super().__init__(message)
        self.section = section
        self.key = key


class InvalidGainsError(EcbfSwarmError):
    """ECBF gains with complex or nonpositive poles"""


class DegenerateGeometryError(EcbfSwarmError):
    """Relative geometry where the pair direction is undefined"""


class NonFiniteStateError(EcbfSwarmError):
    """NaN or infinite values in a state or command"""


class ScenarioGenerationError(EcbfSwarmError):
    """Rejection sampling could not place every entity"""


class InternalConsistencyError(EcbfSwarmError):
    """A numerical situation that valid inputs cannot produce"""


class QPInfeasibleError(EcbfSwarmError):
    """QP subproblem proven infeasible by a dual certificate"""
