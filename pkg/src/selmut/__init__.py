"""Small-mutation asymptotics for a selection-mutation model with one nutrient."""
from .errors import (BlowUpError, BoundaryContactError, DegeneracyError, DomainError, SelmutError,
                     ValidationError)
from .grid import Grid1D, GridField
from .model import Bump, GrowthModel, InitialData, WeightFunction, optimal_intake, validate_assumptions
from .eps_solver import EpsConfig, make_eps_config, run_eps
from .limit_solver import run_limit, quadratic_oracle
from .corrections import compute_K, solve_first_order
from .moments import asymptotic_moments, numeric_moments
from .harness import SweepConfig, fit_order, run_sweep
from .config import parse_config

__version__ = "0.1.0"
