"""Voltage instability index and cost-based attacker/defender investment games on power grids."""

from .case import Branch, Bus, CaseError, PowerSystemCase, load_case, parse_matpower_case, parse_native_case
from .stability import StabilityModel, build_stability_model, instability_index

__version__ = "0.1.0"

__all__ = [
    "Branch",
    "Bus",
    "CaseError",
    "PowerSystemCase",
    "StabilityModel",
    "build_stability_model",
    "instability_index",
    "load_case",
    "parse_matpower_case",
    "parse_native_case",
]
