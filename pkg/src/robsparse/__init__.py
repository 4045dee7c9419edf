"""Robust sparse maximum association between two sets of variables."""

from .covariance import DataMatrix, JointCovariance, estimate_joint, read_csv
from .errors import (
    AlignmentError,
    ConditioningError,
    ConvergenceError,
    DegenerateScaleError,
    DimensionError,
    DivergenceError,
    DomainError,
    ParseError,
    RobSparseError,
    SingularityError,
)
from .hyperopt import SearchSpace, optimize_hyperparams, tpo_score, tuned_fit
from .optimizer import FitResult, OptimizerSettings, fit
from .oracle import classical_cca, true_directions
from .problem import DirectionPair, MaxAssocProblem, PenaltyConfig

__version__ = "0.1.0"
