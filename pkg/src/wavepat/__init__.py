"""Regularization-robust preconditioned saddle-point solver for wave-equation
constrained inverse source problems (photoacoustic tomography on a box)."""
from .assembly import ProblemConfig, SaddleSystem, assemble_system, build_spaces
from .solver import condition_number, factorize_preconditioner, minres
from .spline import Constraint, SplineSpace1D, make_space

__version__ = "0.1.0"
