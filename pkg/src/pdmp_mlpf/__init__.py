"""Multilevel particle filters for partially observed piecewise
deterministic Markov processes."""

from .costs import CostCounter
from .coupling import CoupledPair, CoupledTransition, simulate_coupled, weight_envelope
from .errors import (BudgetError, ConfigError, ContractViolationError,
                     DegenerateWeightsError, FilterCollapseError,
                     InsufficientDataError, MeasureSingularityError,
                     NumericFailureError, PdmpError, RateBoundViolationError)
from .flow import (ExactFlow, HybridState, Level, VectorField, delta,
                   euler_flow, euler_flow_at)
from .pdmp import (JumpKernel, PathRecord, PdmpModel, PdmpPath, evaluate_path,
                   replay_path, simulate)
from .smc import (CoupledFilterState, FilterEstimate, ObservationModel,
                  WeightedEnsemble, coupled_pf_step, ess,
                  initial_coupled_state, initial_ensemble,
                  maximal_coupling_resample, ml_estimate, pf_step)

__version__ = "0.1.0"

__all__ = [
    "BudgetError", "ConfigError", "ContractViolationError", "CostCounter",
    "CoupledFilterState", "CoupledPair", "CoupledTransition",
    "DegenerateWeightsError", "ExactFlow", "FilterCollapseError",
    "FilterEstimate", "HybridState", "InsufficientDataError", "JumpKernel",
    "Level", "MeasureSingularityError", "NumericFailureError",
    "ObservationModel", "PathRecord", "PdmpError", "PdmpModel", "PdmpPath",
    "RateBoundViolationError", "VectorField", "WeightedEnsemble",
    "coupled_pf_step", "delta", "ess", "euler_flow", "euler_flow_at",
    "evaluate_path", "initial_coupled_state", "initial_ensemble",
    "maximal_coupling_resample", "ml_estimate", "pf_step", "replay_path",
    "simulate", "simulate_coupled", "weight_envelope",
]
