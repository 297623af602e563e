"""Coalescing stochastic flows, their smooth SDE approximations, inverse
flows and pushforward measures, with a statistical verification harness."""

__version__ = "0.1.0"

from .covariance import (COALESCING, NON_COALESCING, CovarianceSpec,
                         build_exact, build_mollified, check_positive_definite,
                         classify_boundary, eval_phi, one_minus_phi)
from .gaussian_field import (FieldSampler, Factorization, FactorizationError,
                             factorize, gram, sample_increment)
from .harris_flow import (FlowMap, TrajectoryBundle, coalesce_rule,
                          evolve_harris, flow_map)
from .smooth_flow import evolve_smooth, min_gap_statistics
from .inverse_flow import (InverseQuery, WindowExhaustedError, backward_path,
                           embed, invert)
from .dyadic import DyadicBundle, simulate_dyadic_bundle
from .measure import EmpiricalMeasure, integrate, pushforward, wasserstein1
from .stats import (SweepConfig, SweepRow, convergence_sweep,
                    empirical_covariation, ks_one_sample_normal,
                    ks_two_sample, moment_bound_check, w1_samples)
from .montecarlo import spawn_seeds, spawn_streams
from .config import ConfigError, ExperimentConfig

__all__ = [name for name in dir() if not name.startswith("_")]
