"""Bayesian D-optimal partial profile designs for discrete choice experiments."""
from .ce import CeConfig, restricted_coordinate_exchange, two_stage_ce
from .core import (
    Design,
    DesignError,
    DesignSpace,
    InfeasibleSpaceError,
    InvalidInputError,
    InvalidPriorError,
    ModelSpec,
    PriorSpec,
    effects_code,
    model_matrix,
    random_design,
    validate_design,
)
from .criterion import (
    CriterionValue,
    EfficiencyReport,
    Objective,
    RobustCriterionSpec,
    d_criterion,
    db_criterion,
    efficiency_report,
    information_matrix,
    logdet_psd,
    mnl_probabilities,
    relative_db_efficiency,
    robust_criterion,
    sample_prior,
    with_draws,
)
from .master import MasterDesign, MasterObjective, optimize_master, variance_balance_weights
from .sa import SaConfig, anneal, explore, hyperbolic_temperature, initial_temperature, metropolis_accept
from .scenarios import build_prior_family
from .simulation import EstimationResult, SimulationPlan, compare_designs, emse, fit_mnl, simulate_choices

__version__ = "0.1.0"
