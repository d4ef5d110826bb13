"""Density evolution, decoding thresholds and simulation for k-MUD IRSA."""

__version__ = "0.1.0"

from .de import (
    DEResult,
    DEState,
    SystemConfig,
    Variant,
    arrival_mass,
    asymptotic_fixed_point,
    de_step_first_slot,
    de_step_uniform,
    initial_state,
    replica_mass,
    run_de,
    slot_failure_prob,
)
from .degree_dist import (
    DegreeDistribution,
    PRESET_COEFFS,
    make_distribution,
    parse_distribution,
    preset,
    resolve_distribution,
)
from .experiment import ExperimentSpec, run_sweep, validate_and_report
from .potential import (
    PotentialProfile,
    ThresholdResult,
    capacity_bound,
    capacity_bound_quadrature,
    capacity_root,
    find_threshold,
    fixed_point_margin,
    overload_prob,
    potential,
    potential_derivative,
    potential_profile,
    stationary_points,
)
from .sim import (
    AggregateMetrics,
    PolicyKind,
    ReceiverPolicy,
    SimMetrics,
    User,
    brute_force_decode,
    generate_traffic,
    run_replications,
    run_simulation,
    sic_peel,
    spawn_seeds,
)

__all__ = [name for name in dir() if not name.startswith("_")]
