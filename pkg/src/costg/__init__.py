"""costg: joint causal effects of time-varying treatment regimes on
censored cumulative costs.

The package estimates the mean cumulative cost a population would incur
under a hypothetical treatment regime, from longitudinal panels with
interval costs, time-varying confounding, death, and right censoring.
Sequential conditional models are fitted by pooled partial likelihood and
integrated by Monte-Carlo simulation; inference uses the subject-level
nonparametric bootstrap. Inverse-weighted intent-to-treat estimators and
a full simulation-study harness are included for comparison studies.
"""

from .comparators import (
    IttEstimate,
    StepSurvival,
    fit_propensity,
    ipcw_complete_case,
    iptw_partitioned,
    km_censoring_survival,
    partitioned_ipcw,
)
from .dgp import (
    CensoringMechanism,
    ConfounderDynamics,
    CostDynamics,
    DeathRisk,
    DgpConfig,
    OracleResult,
    TreatmentAssignment,
    generate_cohort,
    model_set_from_config,
    no_censoring,
    nonrandom_dropout_censoring,
    random_censoring,
    staggered_entry_censoring,
    true_values_oracle,
    with_mixed_arm_families,
    with_null_effect,
)
from .errors import (
    CensoredSubjectError,
    CostgError,
    DegenerateInferenceError,
    InferenceError,
    InputError,
    InsufficientDataError,
    ModelError,
    NonConvergenceError,
    PositivityError,
    ResponseDomainError,
    SimulationDomainError,
    SingularDesignError,
    StudyError,
)
from .gformula import (
    CohortTables,
    DeltaEstimate,
    FittedTriple,
    GMeanResult,
    PathSample,
    SequentialModelSet,
    SequentialModelSpec,
    TreatmentRegime,
    default_model_spec,
    estimate_delta,
    fit_sequential_models,
    g_compute_mean,
    simulate_paths,
)
from .glm import (
    FittedGlm,
    GlmSpec,
    fit_glm,
    predict_mean,
    sample_response,
    score_residual_norm,
)
from .inference import (
    BootstrapConfig,
    EffectReport,
    WaldTest,
    bootstrap_delta,
    replicate_variance,
    wald_test,
)
from .panel import (
    Cohort,
    CompleteCaseFlags,
    IntervalGrid,
    IntervalRecord,
    SubjectPanel,
    ValidationReport,
    Violation,
    complete_case_flags,
    cumulative_cost,
    interval_cost_matrix,
    read_cohort_csv,
    validate_cohort,
    write_cohort_csv,
)
from .streams import derive_seed, substream
from .study import (
    LevelStudyResult,
    RepRecord,
    StudyConfig,
    StudyResult,
    StudyRow,
    run_level_study,
    run_study,
    write_study_reps,
    write_study_summary,
)

__version__ = "0.1.0"
