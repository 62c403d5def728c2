"""Phase-field crystal simulation with periodic B-spline Galerkin discretisation
and energy-stable convex-splitting time integration."""

from .assembly import FieldState, Operators, TensorSpace, build_tensor_space
from .bspline import SplineSpace, build_periodic_space
from .config import ConfigError, InitialCondition, SimulationConfig, load_config, parse_config
from .initial import generate_ic
from .integrator import Integrator, RunAborted, SchemeOrder, SchemeViolation, StepFailure
from .model import ModelParams, dispersion_rate, free_energy

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "FieldState", "InitialCondition", "Integrator", "ModelParams", "Operators",
    "RunAborted", "SchemeOrder", "SchemeViolation", "SimulationConfig", "SplineSpace",
    "StepFailure", "TensorSpace", "build_periodic_space", "build_tensor_space",
    "dispersion_rate", "free_energy", "generate_ic", "load_config", "parse_config",
]
