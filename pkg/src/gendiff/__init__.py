"""Local-time penalization for generalized one-dimensional diffusions."""

__version__ = "0.1.0"

from .measure import (BoundaryClass, DiffusionSpec, MeasureError, SpeedMeasure, build_spec,
                      builtin_measure, classify_boundary, h0, spec_from_config)
from .eigen import EigenConvergenceError, EigenSolution, GridPolicy, h_q, resolvent, solve_eigen
from .laws import (ClockSpec, LocalTimeLaw, Weight, green_occupation, law_exp_clock, law_hitting_clock,
                   law_inverse_lt_clock, law_inverse_lt_clock_from_x, law_L_infty, q_total_local_time)
from .pathsim import MCEstimate, Path, PathBatch, Simulator, mc_expect, sample_clock, simulate
from .martingales import (Functional, MartingaleKind, check_martingale, eval_M_beta_a, eval_M_h0f,
                          eval_M_inf_a, eval_M_sf, eval_N_h0f, verify_penalization_limit)
from .penalized import (HTransformKind, TransformedSpec, compare_decomposition_vs_reweighting,
                        resolvent_hc, sample_decomposition, transform_spec)
