"""Demonstration datasets, empirical marginals and JSONL persistence."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np

from .mdp import TabularMdp, TabularPolicy, _rollout, make_rng
from .trajectory import Trajectory

logger = logging.getLogger(__name__)

ROLES = ("expert", "imperfect", "union", "supplementary")


@dataclass(frozen=True)
class Dataset:
    trajectories: Tuple[Trajectory, ...]
    role: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown dataset role {self.role!r}; expected one of {ROLES}")
        object.__setattr__(self, "trajectories", tuple(self.trajectories))

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    def __getitem__(self, i) -> Trajectory:
        return self.trajectories[i]

    @property
    def num_transitions(self) -> int:
        return sum(len(t) for t in self.trajectories)

    def flat(self) -> Tuple[np.ndarray, np.ndarray]:
        """All (state, action) pairs as two aligned integer arrays."""
        states = [s for t in self.trajectories for s in t.states]
        actions = [a for t in self.trajectories for a in t.actions]
        return np.asarray(states, dtype=np.int64), np.asarray(actions, dtype=np.int64)

    def states_visited(self) -> set:
        return {s for t in self.trajectories for s in t.states}

    def first_states(self) -> set:
        return {t.states[0] for t in self.trajectories if len(t)}

    def digest(self) -> str:
        """SHA-256 of the canonical JSONL serialization."""
        h = hashlib.sha256()
        for line in _jsonl_lines(self):
            h.update(line.encode())
            h.update(b"\n")
        return h.hexdigest()


@dataclass(frozen=True)
class CountTable:
    """Integer visit counts of one dataset.

    Marginals are exact ratios computed on demand, e.g. ``D(s) = state_counts[s] / total``.
    """

    state_counts: np.ndarray
    state_action_counts: np.ndarray
    total: int
    role: str = "union"

    @property
    def num_states(self) -> int:
        return self.state_action_counts.shape[0]

    @property
    def num_actions(self) -> int:
        return self.state_action_counts.shape[1]

    def state_marginal(self, s: int) -> Fraction:
        return Fraction(int(self.state_counts[s]), self.total)

    def pair_marginal(self, s: int, a: int) -> Fraction:
        return Fraction(int(self.state_action_counts[s, a]), self.total)

    def state_marginals(self) -> np.ndarray:
        return self.state_counts / self.total

    def pair_marginals(self) -> np.ndarray:
        return self.state_action_counts / self.total


def empirical_marginals(
    dataset: Dataset, num_states: Optional[int] = None, num_actions: Optional[int] = None
) -> CountTable:
    states, actions = dataset.flat()
    if states.size == 0:
        raise ValueError(f"cannot compute marginals of an empty {dataset.role} dataset")
    S = int(num_states) if num_states is not None else int(states.max()) + 1
    A = int(num_actions) if num_actions is not None else int(actions.max()) + 1
    if states.max() >= S or actions.max() >= A:
        raise ValueError("dataset contains states or actions outside the declared sizes")
    sa = np.zeros((S, A), dtype=np.int64)
    np.add.at(sa, (states, actions), 1)
    return CountTable(sa.sum(axis=1), sa, int(states.size), dataset.role)


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

def epsilon_mix(expert_policy: TabularPolicy, epsilon: float) -> TabularPolicy:
    """With probability ``epsilon`` act uniformly at random, else follow the expert."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    A = expert_policy.num_actions
    return TabularPolicy((1.0 - epsilon) * expert_policy.probs + epsilon / A)


def _generate(mdp: TabularMdp, policy: TabularPolicy, n: int, seed: int, start, role: str) -> Dataset:
    if n <= 0:
        raise ValueError(f"number of {role} trajectories must be positive, got {n}")
    # one child seed per trajectory so datasets can be generated in parallel chunks
    seeds = np.random.SeedSequence(int(seed) & ((1 << 64) - 1)).generate_state(n, dtype=np.uint64)
    trajs = [_rollout(mdp, policy, make_rng(int(s)), start) for s in seeds]
    return Dataset(tuple(trajs), role)


def generate_expert_data(
    mdp: TabularMdp, expert_policy: TabularPolicy, n_e: int, seed: int, start: Optional[int] = None
) -> Dataset:
    if not expert_policy.is_deterministic():
        raise ValueError("expert policy must be deterministic")
    return _generate(mdp, expert_policy, n_e, seed, start, "expert")


def generate_imperfect_data(
    mdp: TabularMdp,
    behavior: TabularPolicy,
    n_b: int,
    seed: int,
    epsilon: Optional[float] = None,
) -> Dataset:
    """Rollouts from the initial distribution.

    If ``epsilon`` is given, ``behavior`` is treated as the expert policy and
    mixed with the uniform policy (see :func:`epsilon_mix`).
    """
    if epsilon is not None:
        behavior = epsilon_mix(behavior, epsilon)
    return _generate(mdp, behavior, n_b, seed, None, "imperfect")


def union_dataset(expert: Dataset, imperfect: Dataset) -> Dataset:
    if expert.role != "expert":
        raise ValueError(f"first argument must be an expert dataset, got role {expert.role!r}")
    if imperfect.role != "imperfect":
        raise ValueError(f"second argument must be an imperfect dataset, got role {imperfect.role!r}")
    return Dataset(expert.trajectories + imperfect.trajectories, "union")


def check_dynamics(mdp: TabularMdp, dataset: Dataset) -> None:
    """Raise if any consecutive pair of states disagrees with the MDP's transitions."""
    for i, traj in enumerate(dataset):
        for h in range(len(traj) - 1):
            s, a = traj.states[h], traj.actions[h]
            if mdp.next_state[s, a] != traj.states[h + 1]:
                raise ValueError(f"trajectory {i} step {h}: T({s},{a}) != {traj.states[h + 1]}")


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def _jsonl_lines(dataset: Dataset):
    for traj in dataset:
        yield json.dumps(traj.to_dict(), separators=(",", ":"))


def save_dataset(dataset: Dataset, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as f:
        for line in _jsonl_lines(dataset):
            f.write(line + "\n")


def load_dataset(path, role: str = "union") -> Dataset:
    """Read a JSONL dataset, one ``{"states": [...], "actions": [...]}`` per line."""
    path = Path(path)
    trajs = []
    with path.open() as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                trajs.append(Trajectory(tuple(doc["states"]), tuple(doc["actions"])))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed trajectory line ({exc})") from exc
    if not trajs:
        logger.warning("dataset file %s is empty", path)
    return Dataset(tuple(trajs), role)


def dataset_from_pairs(pairs: Sequence[Tuple[Sequence[int], Sequence[int]]], role: str) -> Dataset:
    return Dataset(tuple(Trajectory(tuple(s), tuple(a)) for s, a in pairs), role)
