"""Causal effect estimation in linear SEMs from multi-environment data.

The estimators operate on differences of per-environment Gram statistics:
a closed form for two environments, a min-max fit for several, and an
l1-regularized variant solved by an exact linear-program reduction. The
package also ships the SEM simulator (hidden confounding, additive
interventions, errors-in-variables), identifiability diagnostics, baseline
estimators, and a CLI benchmark harness.
"""

__version__ = "0.1.0"

from .baselines import (
    ActiveSet,
    lasso_cd,
    lasso_preselect,
    ols_pooled,
    two_stage_fit,
    wald_iv,
)
from .diagnostics import (
    CcifQuery,
    IdentifiabilityReport,
    ResidualInvarianceReport,
    ccif,
    ccif_perturbation_gap,
    ccif_value,
    check_identifiability,
    population_gram,
    residual_invariance_test,
    zstar,
)
from .errors import (
    CausalDantzigError,
    DegenerateInstrumentError,
    DegenerateMomentError,
    IllConditionedGramError,
    LpSolverError,
    NonconvergenceError,
    NotPsdError,
    NumericalError,
    ResponseInterventionError,
    SingularStructureError,
    SpecFormatError,
    ValidationError,
)
from .estimator import (
    DantzigFit,
    confidence_intervals,
    estimate_covariance,
    fit_closed_form,
    fit_envs,
    fit_minmax,
    fit_table,
    fit_to_dict,
    with_inference,
)
from .gram import (
    GramShift,
    apply_scaling,
    center_datasets,
    compute_gram_shift,
    compute_multi_gram,
    env_second_moments,
    gram_from_dict,
    gram_from_envs,
    gram_to_dict,
)
from .lp import LpProblem, LpResult, solve_lp, solve_minmax_linf
from .regularized import (
    RegPath,
    active_set,
    compute_path,
    cross_validate,
    fit_regularized,
    lambda_grid,
)
from .rng import Stream, derive_key
from .sem import (
    BUILTIN_NAMES,
    EnvDataset,
    InterventionSpec,
    SemSpec,
    builtin_spec,
    population_innerprod,
    population_second_moment,
    read_datasets_csv,
    simulate,
    simulate_all,
    spec_from_dict,
    spec_hash,
    spec_to_dict,
    split_total,
    true_beta,
    validate_spec,
    write_datasets_csv,
)
from .studies import (
    StudyConfig,
    run_coverage_study,
    run_iv_compare,
    run_regpath_study,
)
