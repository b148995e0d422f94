"""Closed-loop preference learning for hip assistance torque profiles."""

from .engine import (
    SessionConfig,
    SessionState,
    initialize,
    optimize_query,
    present_next_query,
    run_validation,
    submit_choice,
    validation_round,
)
from .gait import GaitTrace, PhaseEstimator, detect_events, segment_cycles
from .metrics import feature_stats, power_profile, power_ratio
from .oracle import SimulatedUser
from .preference import (
    Belief,
    Choice,
    Query,
    choice_likelihood,
    mh_update,
    posterior_summary,
    prior_belief,
    reward,
)
from .profiles import (
    FAMILIARIZATION_PROFILE,
    FeatureRanges,
    TorqueProfileFeatures,
    interpolate,
    normalize_features,
    perturb,
    sample_batch,
)

__version__ = "0.1.0"

__all__ = [
    "Belief",
    "Choice",
    "FAMILIARIZATION_PROFILE",
    "FeatureRanges",
    "GaitTrace",
    "PhaseEstimator",
    "Query",
    "SessionConfig",
    "SessionState",
    "SimulatedUser",
    "TorqueProfileFeatures",
    "choice_likelihood",
    "detect_events",
    "feature_stats",
    "initialize",
    "interpolate",
    "mh_update",
    "normalize_features",
    "optimize_query",
    "perturb",
    "posterior_summary",
    "power_profile",
    "power_ratio",
    "present_next_query",
    "prior_belief",
    "reward",
    "run_validation",
    "sample_batch",
    "segment_cycles",
    "submit_choice",
    "validation_round",
    "__version__",
]
