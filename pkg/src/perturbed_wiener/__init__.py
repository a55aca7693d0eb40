"""Inference from hitting times of a Wiener process perturbed by an intervention."""
from .errors import (
    BadBracket, DegenerateSample, HorizonTooShort, InfeasibleStart, NonConvergence,
    NonFinite, NotPositiveDefinite, OptimFailure, PerturbedWienerError, StudyFailure,
)
from .model import Model, ObservationPair, Scenario, WienerPhase

__all__ = [
    "BadBracket", "DegenerateSample", "HorizonTooShort", "InfeasibleStart", "NonConvergence",
    "NonFinite", "NotPositiveDefinite", "OptimFailure", "PerturbedWienerError", "StudyFailure",
    "Model", "ObservationPair", "Scenario", "WienerPhase",
]
