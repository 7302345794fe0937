"""Tamed, explicit and implicit Euler schemes for SDEs with superlinear drift,
with coupled Brownian sampling, strong-error estimation, dominator
diagnostics and benchmarking."""
from .brownian import (IncrementBatch, IncrementGrid, brownian_path, coarsen, dump_grid,
                       load_grid, sample_batch, sample_grid)
from .diagnostics import (DominationReport, DominatorTrace, assert_domination, batch_domination,
                          dominator_trace, omega_complement_rate)
from .error_analysis import (ErrorEstimate, MomentRow, convergence_sweep, divergence_demo,
                             estimate_order, exact_gbm_reference, moment_sweep, predict_error,
                             strong_error)
from .exceptions import (ArgumentError, ConfigurationError, InvariantViolation, NumericError,
                         PreconditionError, SdeError, SolverError)
from .schemes import (SCHEMES, DiscretePath, PathBatch, SolverOptions, explicit_euler,
                      implicit_cardano_cubic, implicit_euler, run_scheme, tamed_euler,
                      tamed_interpolant, taming_defect)
from .sde_model import BUILTIN_NAMES, SdeProblem, make_builtin, validate_problem

__version__ = "0.1.0"
