"""Energy-dissipative finite elements for Navier-Stokes coupled to a diffusive
Oldroyd-B/Giesekus left Cauchy-Green tensor on the unit square."""

from .mesh import TriMesh, build_crisscross
from .params import ConfigError, ModelParams
from .spaces import FESpaces
from .stepper import SolverConfig, Stepper, TimeStepState, run

__all__ = ["TriMesh", "build_crisscross", "ConfigError", "ModelParams", "FESpaces",
           "SolverConfig", "Stepper", "TimeStepState", "run"]
__version__ = "0.1.0"
