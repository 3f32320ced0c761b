"""ADMM-GAMP and GAMP for generalized linear models with separable penalties."""

from .admm import (FixedPointResiduals, RunReport, SolverConfig, SolverState, fixed_point_residuals,
                   map_two_stage_solve, solve)
from .errors import (DegenerateCurvatureError, InvariantViolation, NumericalError, ParameterError,
                     UnsupportedModeError)
from .estimators import (FAMILIES, BernoulliGaussian, GaussianOutput, LogCoshQuadratic,
                         OneBitOutput, PureQuadratic, ScalarEstimator, map_prox, quadrature_mmse)
from .experiments import SweepConfig, genie_mmse, monte_carlo_sweep
from .gamp import gamp_solve
from .problem import GlmProblem, Truth, nmse_db

__version__ = "0.1.0"

__all__ = [
    "BernoulliGaussian", "DegenerateCurvatureError", "FAMILIES", "FixedPointResiduals",
    "GaussianOutput", "GlmProblem", "InvariantViolation", "LogCoshQuadratic", "NumericalError",
    "OneBitOutput", "ParameterError", "PureQuadratic", "RunReport", "ScalarEstimator",
    "SolverConfig", "SolverState", "SweepConfig", "Truth", "UnsupportedModeError",
    "fixed_point_residuals", "gamp_solve", "genie_mmse", "map_prox", "map_two_stage_solve",
    "monte_carlo_sweep", "nmse_db", "quadrature_mmse", "solve",
]
