"""Synthesis of thermofluid networks by mixed-integer linear programming.

Given a component catalog and a load specification, the package assembles a
linear mixed-integer model of the purchase and operation decisions, solves it
with a built-in branch-and-bound engine, and checks candidate solutions
against the exact nonlinear heat-transfer relations.
"""

__version__ = "0.1.0"

from .domain import (
    Catalog,
    ComponentSpec,
    InputError,
    LoadSpec,
    Network,
    build_network,
    load_catalog,
    validate_load_spec,
)

__all__ = [
    "Catalog",
    "ComponentSpec",
    "InputError",
    "LoadSpec",
    "Network",
    "build_network",
    "load_catalog",
    "validate_load_spec",
    "__version__",
]
