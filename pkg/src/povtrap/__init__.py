"""Household poverty-trap models: simulation, attractors, basins and intervention plans."""

__version__ = "0.1.0"

from .basins import BasinGrid, basin_fractions, map_basins
from .equilibria import AttractorSet, Equilibrium, attractor_set, classify, find_equilibria, jacobian
from .errors import ConfigurationError, DomainError, NoBracketError, SolverFailure, UnresolvedBasinsError
from .integrator import SolverSettings, Trajectory, flow_endpoint, flow_endpoints, integrate
from .interventions import (
    EscapeReport,
    InterventionEvent,
    InterventionPlan,
    MenuItem,
    enumerate_plans,
    escape_threshold,
    run_plan,
)
from .model import (
    ParameterSet,
    ScenarioModel,
    StateVector,
    builtin_scenario,
    production,
    reduced_loss,
    rhs,
    savings_rate,
    scenario_from_spec,
)

__all__ = [
    "AttractorSet", "BasinGrid", "ConfigurationError", "DomainError", "Equilibrium", "EscapeReport",
    "InterventionEvent", "InterventionPlan", "MenuItem", "NoBracketError", "ParameterSet", "ScenarioModel",
    "SolverFailure", "SolverSettings", "StateVector", "Trajectory", "UnresolvedBasinsError",
    "attractor_set", "basin_fractions", "builtin_scenario", "classify", "enumerate_plans",
    "escape_threshold", "find_equilibria", "flow_endpoint", "flow_endpoints", "integrate", "jacobian",
    "map_basins", "production", "reduced_loss", "rhs", "run_plan", "savings_rate", "scenario_from_spec",
]
