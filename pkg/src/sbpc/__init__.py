"""Exact branch-price-and-cut for vehicle routing with stochastic demands under
optimal restocking, plus a Bayesian restocking policy for correlated demands."""

from .instance import (
    DemandDistribution,
    InstanceError,
    StochasticInstance,
    build_instance,
    build_poisson,
    load_instance,
    parse_instance,
)
from .restocking import build_policy, route_cost_or, simulate_execution

__all__ = [
    "DemandDistribution",
    "InstanceError",
    "StochasticInstance",
    "build_instance",
    "build_poisson",
    "load_instance",
    "parse_instance",
    "build_policy",
    "route_cost_or",
    "simulate_execution",
]

__version__ = "0.1.0"
