"""Inverse-probability-weighted estimation of treatment effects under rescue-medication switching.

The balanced estimand compares the active arm, with switching re-weighted to
follow the control arm's switching law, against the control arm as observed.
"""

__version__ = "0.1.0"

from .data import Schema, TrialDataset, TrialRecord, load_dataset, write_dataset
from .errors import (
    AllSwitchers,
    BadValue,
    DataError,
    DegenerateArm,
    DimensionMismatch,
    EmptyArm,
    EmptyStratum,
    EstimationError,
    MissingColumn,
    MissingL,
    NonConvergence,
    RankDeficientDesign,
    RescueIPWError,
    SwitchingImbalanceWarning,
    TooManyFailures,
    TruncationUnsupported,
    VarianceError,
)
from .estimators import (
    Estimand,
    EstimateResult,
    compute_weight,
    estimate_balanced,
    estimate_hypothetical,
    estimate_treatment_policy,
    fit_switch_models,
    nearest_rank,
    switch_weights,
    truncate_weights,
)
from .logistic import LogisticFit, expit, fit_logistic, fit_propensity
from .simulate import (
    SCENARIOS,
    TOY_TABLE,
    PotentialOutcomeTable,
    ScenarioConfig,
    Truth,
    generate_scenario,
    toy_estimands,
    true_values,
    true_values_quadrature,
)
from .study import StudyResult, cached_true_values, run_mc_study, sensitivity_sweep
from .tilt import SwitchModels, Variant, lambda_residual, q_terms, solve_lambda, tilt_weights
from .variance import (
    BootstrapResult,
    EstimatorSpec,
    IFComponents,
    bootstrap,
    influence_components,
    influence_se_balanced,
)
