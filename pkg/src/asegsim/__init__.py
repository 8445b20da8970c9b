"""Desk-scale simulator for accelerated stochastic extragradient methods on
distributed empirical risk minimization under Hessian similarity."""

from .dataio import (BatchPlan, Partition, SynthSpec, build_partition,
                     gen_synthetic_quadratic, parse_libsvm, write_libsvm)
from .driver import (AsegParams, ConvexSchedule, ReferenceInfo, RunTrace,
                     b_threshold, run_aseg, run_aseg_convex,
                     theta_schedule_convex, theta_schedule_strongly_convex,
                     tune_deterministic, tune_sampled)
from .errors import (ConfigError, DivergenceError, ParseError,
                     ReferenceSolveError)
from .federation import (CommLedger, Federation, NoiseModel, RngPolicy,
                         SamplingPlan)
from .objectives import (Dataset, LossModel, MixtureObjective, Objective,
                         ProblemConstants, estimate_mu, estimate_smoothness,
                         normalize_classification_labels, solve_reference)
from .similarity import (DeltaEstimate, check_gradient_spread_bound,
                         delta_quadratic_exact, delta_sampled, sigma_sim_sq)
from .subproblem import (LooplessReport, SolverConfig, StopPolicy,
                         SubproblemSpec, loopless_compare, sarah_solve,
                         sgd_solve, solve_subproblem, stop_surrogate_check,
                         svrg_epoch_factor, svrg_solve)

__version__ = "0.1.0"
