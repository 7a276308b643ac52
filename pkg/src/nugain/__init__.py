"""Non-uniform small-gain analysis for contracting/wandering interconnections."""

from .errors import (
    ConfigurationError,
    DomainError,
    EvaluationError,
    IntegrationError,
    InvariantViolation,
    MonotonicityError,
    NugainError,
    OptimizerError,
    StateError,
)
from .gains import (
    ContractionEnvelope,
    ScalarFn,
    WanderingBound,
    beta_t_inverse,
    check_factorization,
    parse_scalar_fn,
    validate_class_k,
)
from .smallgain import (
    GeneralScheduleSpec,
    Schedule,
    ScheduleParams,
    build_schedule,
    check_small_gain_existence,
    check_theorem_conditions,
    check_trapping_separable,
    compute_B1_B2,
    default_schedule_spec,
    identifier_gain_bound,
    optimize_G,
    small_gain_G,
    trapping_x0_bound,
)

__version__ = "0.1.0"
