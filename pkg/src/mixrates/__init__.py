"""Learning rates of regularized empirical risk minimizers on mixing processes."""

from .bounds import (CoveringModel, OracleInputs, approximation_error_model, erm_oracle_rhs,
                     gaussian_schedule, generic_schedule, oracle_bound, oracle_confidence,
                     oracle_rhs, phi_of_eps, rate_exponent_generic, rate_exponent_smooth,
                     solve_radius)
from .errors import ConfigurationError, DomainError, MixratesError
from .harness import (ExperimentConfig, RateReport, fit_slope, run_bernstein_experiment,
                      run_oracle_experiment, run_rate_experiment)
from .learners import (KernelSpec, Predictor, SolveReport, certify_crerm, erm_finite, gram,
                       lssvm_train, predict, quantile_svm_train)
from .losses import (LossSpec, clip, empirical_risk, excess_risk_mc, loss_value,
                     variance_bound_check)
from .mixing import (BernsteinConstants, HBounds, bernstein_bound, bernstein_bound_tau_form,
                     bernstein_constants, bernstein_epsilon_for_tau, effective_observations,
                     markov_beta_coefficient, markov_log_beta_coefficient, verify_bernstein_mc,
                     wilson_interval)
from .processes import (MixingClass, MixingSpec, RegressionModel, SamplePath, sample,
                        sample_ar1, sample_cmixing_map, sample_iid, sample_markov)

__version__ = "0.1.0"
