"""Regularized optimal transport on finite spaces, with statistical inference.

The package solves entropy- and generally-regularized transport problems,
differentiates the solved plan with respect to its marginals, turns that
sensitivity into Gaussian limit-law covariances and bootstrap procedures for
the transport distance, and builds colocalization curves with uniform
confidence bands for paired intensity images.
"""

__version__ = "0.1.0"

from .exceptions import (ConvergenceError, DomainError, NumericalError,
                         ReductionRequiredError)
from .space import (ConstraintOperator, CostVector, GroundSpace, Prob,
                    build_grid_space, cost_from_metric, cost_quantile,
                    empirical_distribution)
from .regularizers import (Regularizer, beta_potential, burg, conjugate_grad,
                           entropy, fermi_dirac, grad, hess_diag, lp_quasi, value)
from .solver import (DualPotentials, ExactBaseline, ReducedSolution,
                     TransportPlan, divergence, dual_potentials,
                     exact_ot_baseline, ot_limit_sample, sinkhorn_entropy,
                     solve_general, solve_reduced)
from .sensitivity import (CovarianceResult, PlanCovarianceAction,
                          SensitivityResult, divergence_variance,
                          entropy_block_schur, multinomial_cov,
                          objective_variance, plan_covariance,
                          plan_covariance_action, plan_gradient)
from .inference import (MCConfig, MCReport, SampleDistribution,
                        bootstrap_statistic, confidence_interval,
                        dirichlet_sample, gaussian_limit_sampler, ks_distance,
                        mc_experiment, sinkhorn_statistic)
from .coloc import (BootstrapBand, IntensityImage, RColAnalysis, RColCurve,
                    image_to_distribution, rcol, rcol_cb_bootstrap,
                    rcol_cb_gaussian, rcol_diff, rcol_pipeline, read_image,
                    resample_distribution)
