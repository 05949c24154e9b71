"""Offline decoupled prioritized resampling (ODPR).

Advantage- and return-based priority weights for offline RL datasets, the
decoupled uniform/prioritized samplers that consume them, desk-scale learners
for a toy continuous bandit, and exact tabular oracles used to check the
behavior-policy improvement guarantees.
"""

from odpr.dataset import Dataset, Transition, TrajectoryReturns, compute_trajectory_returns
from odpr.priority import OdprConfig, PriorityWeights, iterate_odpr_a, linear_priority, return_priority
from odpr.sampling import DecoupledSamplers, IndexSampler
from odpr.value import FitConfig, fit_value_td

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "DecoupledSamplers",
    "FitConfig",
    "IndexSampler",
    "OdprConfig",
    "PriorityWeights",
    "TrajectoryReturns",
    "Transition",
    "compute_trajectory_returns",
    "fit_value_td",
    "iterate_odpr_a",
    "linear_priority",
    "return_priority",
]
