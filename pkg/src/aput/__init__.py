"""Active privacy-utility trade-off for sequential data release."""

from .belief import Belief
from .env import BeliefThreshold, CostParams, MIBudget, PrivacyEnv
from .model import HypothesisSpace, ObservationModel, Prior, build_synthetic, desk_instance

__version__ = "0.1.0"

__all__ = [
    "Belief", "BeliefThreshold", "CostParams", "MIBudget", "PrivacyEnv",
    "HypothesisSpace", "ObservationModel", "Prior", "build_synthetic", "desk_instance",
]
