"""Expert-state identification and rollback selection of causal state-actions."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Set, Tuple

import numpy as np

from .datasets import Dataset


@dataclass(frozen=True)
class SelectionConfig:
    sigma: float = 0.2
    rollback_k: int = 20
    # ">=" marks a state as expert when d(s) >= sigma; ">" is the strict variant
    comparison: str = ">="

    def __post_init__(self):
        if not 0.0 < self.sigma < 1.0:
            raise ValueError(f"sigma must lie in (0, 1), got {self.sigma}")
        if int(self.rollback_k) != self.rollback_k or self.rollback_k < 1:
            raise ValueError(f"rollback_k must be a positive integer, got {self.rollback_k}")
        if self.comparison not in (">=", ">"):
            raise ValueError("comparison must be '>=' or '>'")


@dataclass(frozen=True)
class SelectedPair:
    """A causal state-action ``k`` steps before an identified expert state.

    ``source`` is ``(trajectory index, 0-based step index)`` of the pair in
    the imperfect dataset; the anchor sits at step ``source[1] + k``.
    """

    k: int
    state: int
    action: int
    source: Tuple[int, int]

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("rollback index k must be >= 1")
        if self.source[1] < 0:
            raise ValueError("source step must be nonnegative")


def _above(values: np.ndarray, sigma: float, comparison: str) -> np.ndarray:
    return values >= sigma if comparison == ">=" else values > sigma


def identify_expert_states(d, imperfect: Dataset, sigma: float, comparison: str = ">=") -> Set[Tuple[int, int]]:
    """Positions ``(i, h)`` (0-based) with ``h >= 1`` whose state scores at least ``sigma``.

    Step 0 is never an anchor because it has no causal predecessor.
    """
    anchors = set()
    for i, traj in enumerate(imperfect):
        if len(traj) < 2:
            continue
        scores = np.asarray(d(np.asarray(traj.states[1:])), dtype=np.float64)
        for h in np.flatnonzero(_above(scores, sigma, comparison)):
            anchors.add((i, int(h) + 1))
    return anchors


def build_complementary_dataset(imperfect: Dataset, d, cfg: SelectionConfig = SelectionConfig()) -> List[SelectedPair]:
    """For each anchor at step h, add the pairs at steps h-1, ..., h-min(h, K).

    Every occurrence of an expert state is its own anchor, so overlapping
    windows contribute duplicate pairs.
    """
    anchors = identify_expert_states(d, imperfect, cfg.sigma, cfg.comparison)
    pairs = []
    for i, h in sorted(anchors):
        traj = imperfect[i]
        for k in range(1, min(h, cfg.rollback_k) + 1):
            pairs.append(SelectedPair(k, traj.states[h - k], traj.actions[h - k], (i, h - k)))
    return pairs


def full_imperfect_pairs(imperfect: Dataset) -> List[SelectedPair]:
    """Every imperfect transition as a selected pair (ablation: select everything)."""
    return [
        SelectedPair(1, s, a, (i, h))
        for i, traj in enumerate(imperfect)
        for h, (s, a) in enumerate(traj.pairs())
    ]


def selected_arrays(pairs: Sequence[SelectedPair]) -> Tuple[np.ndarray, np.ndarray]:
    return (
        np.fromiter((p.state for p in pairs), dtype=np.int64, count=len(pairs)),
        np.fromiter((p.action for p in pairs), dtype=np.int64, count=len(pairs)),
    )


@dataclass(frozen=True)
class SelectionSummary:
    anchors: int
    selected: int
    coverage: float  # fraction of imperfect transitions selected at least once


def selection_report(pairs: Sequence[SelectedPair], imperfect: Dataset) -> SelectionSummary:
    anchors = {(p.source[0], p.source[1] + p.k) for p in pairs}
    covered = {p.source for p in pairs}
    total = imperfect.num_transitions
    return SelectionSummary(len(anchors), len(pairs), len(covered) / total if total else 0.0)


def write_pairs_csv(pairs: Sequence[SelectedPair], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["k", "state", "action", "traj", "step"])
        for p in pairs:
            w.writerow([p.k, p.state, p.action, p.source[0], p.source[1]])


def read_pairs_csv(path) -> List[SelectedPair]:
    with Path(path).open(newline="") as f:
        return [
            SelectedPair(int(r["k"]), int(r["state"]), int(r["action"]), (int(r["traj"]), int(r["step"])))
            for r in csv.DictReader(f)
        ]
