"""Offline imitation learning from imperfect demonstrations via expert-state
identification and rollback selection, on tabular finite-horizon MDPs."""

from .mdp import TabularMdp, TabularPolicy, build_four_rooms, evaluate_policy_exact, value_iteration
from .trajectory import Trajectory

__version__ = "0.1.0"

__all__ = [
    "TabularMdp",
    "TabularPolicy",
    "Trajectory",
    "build_four_rooms",
    "evaluate_policy_exact",
    "value_iteration",
]
