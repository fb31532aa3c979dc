"""Low-rank tensor completion under missing-not-at-random observation.

The package fits a rank-R CP model to a partially observed order-3 tensor
by joint maximum likelihood over an exponential-family observation model
(gaussian, bernoulli, poisson) and a logistic model tying each cell's
observation probability to its signal.  It also provides BIC rank
selection, a sample-splitting test of missing-completely-at-random, and a
simulation harness with the standard recovery metrics.
"""

from .errors import (
    CollinearDesignError,
    DegenerateFactorError,
    DegenerateResponseError,
    DimensionError,
    DuplicateEntryError,
    MetricError,
    MnartcError,
    NaturalParameterOverflowError,
    NoDataError,
    NumericalFailureError,
    ParseError,
    ProbabilityRangeError,
    SchemaVersionError,
    SeparationError,
    SupportError,
)
from .families import BERNOULLI, FAMILY_KINDS, GAUSSIAN, POISSON, Family
from .tensors import (
    CPModel,
    DenseTensor3,
    MaskedData,
    align_components,
    normalize_column,
    reconstruct_entry,
    reconstruct_full,
)
from .missingness import (
    MissingnessParams,
    SliceDiagnostics,
    mask_loglik,
    mask_loglik_grad_theta,
    obs_prob,
    slice_diagnostics,
)
from .likelihood import (
    ModelState,
    grad_lambda,
    grad_theta,
    grad_u_entry,
    grad_v_entry,
    grad_w_entry,
    hess_lambda,
    hess_theta,
    hess_u_entry,
    hess_v_entry,
    hess_w_entry,
    objective,
    objective_arrays,
)
from .fitting import FitOptions, FitReport, bic_score, fit, initialize, select_rank
from .inference import SplitPlan, TestResult, logistic_fit_2param, split_indices, test_mnar
from .simulate import (
    ReplicateResult,
    ScenarioSpec,
    auc_missing,
    d_metric,
    generate,
    rmse_missing,
    run_experiment,
)
from .dataio import read_coo, read_model, write_coo, write_model

__version__ = "0.1.0"

__all__ = [
    "MnartcError",
    "DimensionError",
    "DegenerateFactorError",
    "SupportError",
    "NaturalParameterOverflowError",
    "ProbabilityRangeError",
    "NoDataError",
    "NumericalFailureError",
    "SeparationError",
    "DegenerateResponseError",
    "CollinearDesignError",
    "MetricError",
    "ParseError",
    "DuplicateEntryError",
    "SchemaVersionError",
    "Family",
    "GAUSSIAN",
    "BERNOULLI",
    "POISSON",
    "FAMILY_KINDS",
    "DenseTensor3",
    "CPModel",
    "MaskedData",
    "normalize_column",
    "reconstruct_entry",
    "reconstruct_full",
    "align_components",
    "MissingnessParams",
    "SliceDiagnostics",
    "obs_prob",
    "mask_loglik",
    "mask_loglik_grad_theta",
    "slice_diagnostics",
    "ModelState",
    "objective",
    "objective_arrays",
    "grad_u_entry",
    "grad_v_entry",
    "grad_w_entry",
    "grad_lambda",
    "grad_theta",
    "hess_u_entry",
    "hess_v_entry",
    "hess_w_entry",
    "hess_lambda",
    "hess_theta",
    "FitOptions",
    "FitReport",
    "bic_score",
    "initialize",
    "fit",
    "select_rank",
    "SplitPlan",
    "TestResult",
    "split_indices",
    "logistic_fit_2param",
    "test_mnar",
    "ScenarioSpec",
    "ReplicateResult",
    "generate",
    "rmse_missing",
    "auc_missing",
    "d_metric",
    "run_experiment",
    "read_coo",
    "write_coo",
    "read_model",
    "write_model",
]
