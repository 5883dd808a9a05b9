"""Parallel mean-field inference for discrete random fields with KL-proximal damping."""
from .energy import (MeanFieldState, ObjectiveValue, free_energy, kl_to_posterior,
                     mean_from_natural, theta_star, theta_star_all)
from .estimator import MeanFieldInference
from .harness import accuracy, decode_map, run_experiment, sensitivity_sweep
from .lipschitz import SpectralEstimate, hessian_matvec, spectral_norm, suggest_damping
from .model import (DiscreteField, Factor, FieldError, GroundTruth, UAIFormatError,
                    generate_synthetic, parse_uai, potts_field, serialize_uai, validate)
from .oracle import OracleResult, best_factorized_kl, enumerate_field
from .schedules import ScheduleConfig, TraceRecord, init_state, run_schedule

__version__ = "0.1.0"
