"""Monte Carlo and exact tools for branching processes in random environment."""

from .bpre import (
    STRATEGIES,
    WeightedSampleSet,
    annealed_mean_check,
    conditioned_survival_sampler,
    default_r,
    quenched_replicas,
    quenched_survival,
    simulate_quenched,
)
from .environment import (
    EnvironmentSpec,
    Regime,
    calibrate_lognormal,
    calibrate_two_atom,
    classify,
    lognormal_geometric,
    mixture,
    point_environment,
    sample_environment,
    two_atom_oracle_spec,
)
from .experiments import DEFAULT_THRESHOLDS, ExperimentResult, run_experiment
from .offspring import OffspringLaw, eta, mean, size_bias, zeta
from .oracle import ExactLaw, enumerate_bpre, enumerate_walk
from .spine import alpha_beta, simulate_spine, simulate_spine_batch, wplus_trajectory
from .streams import Stream
from .walk import (
    RenewalTable,
    WalkPath,
    check_harmonicity,
    estimate_renewal,
    path_stats,
    sample_conditioned_path,
    sample_conditioned_paths,
)

__version__ = "0.1.0"
