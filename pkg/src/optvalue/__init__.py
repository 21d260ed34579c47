"""Online one-step inference for the value of an optimal treatment rule."""

from .bootstrap import BootstrapCI, BootstrapConfig, default_m_grid, m_out_of_n_ci
from .dgp import DgpSpec, OracleTruth, is_exceptional, oracle, sample, value_of_rule
from .estimator import (
    ChunkSchedule,
    ClassicalEstimate,
    OnlineValueEstimate,
    build_chunk_schedule,
    classical_one_step,
    estimate_sigma,
    lower_bound,
    online_one_step,
    two_sided_ci,
)
from .harness import (
    ExperimentConfig,
    MonteCarloReport,
    ReplicateRecord,
    bootstrap_sweep,
    elln_sensitivity,
    permutation_sensitivity,
    run_experiment,
)
from .model import (
    Dataset,
    DomainError,
    NuisanceModel,
    Observation,
    TreatmentRule,
    influence_term,
    influence_values,
    rule_from_blip,
)
from .nuisance import (
    BandwidthGrid,
    IllDefinedNpmle,
    KernelLearner,
    LearnerError,
    NpmleLearner,
    cv_select_bandwidth,
    fit_npmle,
    nw_blip,
)

__all__ = [name for name in dir() if not name.startswith("_")]
