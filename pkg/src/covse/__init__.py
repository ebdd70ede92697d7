"""Spectral efficiency of massive MIMO with estimated channel covariance matrices."""

from .engine import (PilotBudget, Regularization, SEReport, TermSet, ThresholdResult, known_cov_terms,
                     nq_threshold, nr_threshold, nr_threshold_literal, se_report, sinr,
                     spectral_efficiency, thm1_terms, thm2_terms, thm3_terms)
from .errors import (BudgetExhaustedError, ConfigError, CovseError, DimensionError, InvalidRegimeError,
                     NotHermitianError, NotPSDError, PoleError, SingularEstimateError)
from .estimators import EstimatorKind
from .harness import SweepResult, compare_curves, run_sweep, simulate_terms
from .numkit import RngStream
from .scenario import CovarianceSet, SystemConfig, build_covariance_set, covariance_set_from_matrices

__version__ = "0.1.0"
