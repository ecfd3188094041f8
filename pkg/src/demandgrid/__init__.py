"""Censored spatial-temporal demand estimation for shared micromobility."""

from .choice import (
    InfeasibleP0Error,
    ThresholdDistribution,
    fit_threshold_distribution,
    solve_sigma,
    threshold_probs,
)
from .em import (
    EMConfig,
    EMDiagnostics,
    MembershipWeights,
    PiMatrix,
    RateMatrix,
    TripSet,
    compute_pi,
    e_step,
    log_likelihood,
    m_step,
    naive_estimate,
    pi_vector,
    run_em,
)
from .grid import DistanceClassTable, GridSpec, OutOfBoundsError, build_grid, distance_classes
from .pipeline import EstimateParams, ResultBundle, estimate_from_file, estimate_from_frame
from .timeline import (
    AvailabilityEvent,
    AvailabilityTimeline,
    EventSource,
    NearestBikeProfile,
    PeriodScheme,
    alpha_matrix,
    build_timeline,
    nearest_profile,
)

__version__ = "0.1.0"
