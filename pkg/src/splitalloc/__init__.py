"""Split allocation under random feature masks.

Simulators, exact terminal-law computations and risk functionals for the
branch-growth process of feature-subsampled midpoint trees, plus an honest
score-window forest for the empirical side.
"""

from .environment import (
    ModelConfig,
    check_eta_requirement,
    drift_constant,
    hypergeom_pmf,
    opportunity_rate,
    sample_mask,
)
from .policies import CountState, PolicySpec, action_distribution, gain, select

__all__ = [
    "ModelConfig",
    "sample_mask",
    "hypergeom_pmf",
    "opportunity_rate",
    "drift_constant",
    "check_eta_requirement",
    "CountState",
    "PolicySpec",
    "gain",
    "action_distribution",
    "select",
]
