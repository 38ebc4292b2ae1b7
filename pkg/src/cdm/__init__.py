"""Causal effect estimation vs. causal decision making, side by side."""
from .core import (
    Dataset,
    EffectModel,
    OutcomeModel,
    Policy,
    Sample,
    SyntheticSample,
    fixed_policy,
    outcome_policy,
    threshold_policy,
)

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "EffectModel",
    "OutcomeModel",
    "Policy",
    "Sample",
    "SyntheticSample",
    "fixed_policy",
    "outcome_policy",
    "threshold_policy",
]
