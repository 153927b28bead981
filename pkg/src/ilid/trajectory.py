"""Trajectory container shared by the MDP and dataset modules."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple


@dataclass(frozen=True)
class Trajectory:
    """An ordered sequence of (state, action) pairs.

    ``states[h]`` is the state visited at step ``h + 1`` and ``actions[h]``
    the action taken there. Episodes that hit an absorbing state stop early,
    so the length may be shorter than the horizon.
    """

    states: Tuple[int, ...]
    actions: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(int(s) for s in self.states))
        object.__setattr__(self, "actions", tuple(int(a) for a in self.actions))
        if len(self.states) != len(self.actions):
            raise ValueError(
                f"states ({len(self.states)}) and actions ({len(self.actions)}) differ in length"
            )

    def __len__(self) -> int:
        return len(self.states)

    def pairs(self):
        return zip(self.states, self.actions)

    def to_dict(self) -> dict:
        return {"states": list(self.states), "actions": list(self.actions)}
