"""Finite episodic MDPs with deterministic dynamics.

Every random draw in the package goes through :func:`make_rng`, a numpy
``Generator`` on the PCG64 bit generator seeded with a 64-bit integer. PCG64
output is specified bit-for-bit by numpy, so seeds reproduce across platforms.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import FrozenSet, Optional, Sequence, Tuple

import numpy as np

from .trajectory import Trajectory

UP, DOWN, LEFT, RIGHT = 0, 1, 2, 3
ACTION_NAMES = ("up", "down", "left", "right")
ACTION_ARROWS = ("^", "v", "<", ">")
_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))

_SEED_MASK = (1 << 64) - 1


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator for a 64-bit seed."""
    return np.random.Generator(np.random.PCG64(int(seed) & _SEED_MASK))


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TabularMdp:
    """Finite episodic MDP with deterministic transitions.

    ``next_state[s, a]`` and ``reward[s, a]`` are ``(S, A)`` tables; rewards lie
    in ``[0, 1]``. Terminal states must be absorbing with zero reward.
    """

    next_state: np.ndarray
    reward: np.ndarray
    horizon: int
    initial_dist: np.ndarray
    terminal_states: FrozenSet[int] = field(default_factory=frozenset)

    def __post_init__(self):
        ns = np.asarray(self.next_state)
        if ns.ndim != 2 or ns.size == 0:
            raise ValueError("next_state must be a non-empty (S, A) table")
        if not np.issubdtype(ns.dtype, np.integer):
            if not np.all(np.equal(np.mod(ns, 1), 0)):
                raise ValueError("next_state entries must be integers")
        ns = ns.astype(np.int64)
        S, A = ns.shape
        if ns.min() < 0 or ns.max() >= S:
            raise ValueError("next_state entries must be valid state indices")
        r = np.asarray(self.reward, dtype=np.float64)
        if r.shape != (S, A):
            raise ValueError(f"reward shape {r.shape} does not match next_state {(S, A)}")
        if not np.all(np.isfinite(r)) or r.min() < 0.0 or r.max() > 1.0:
            raise ValueError("rewards must lie in [0, 1]")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ValueError("horizon must be a positive integer")
        mu = np.asarray(self.initial_dist, dtype=np.float64)
        if mu.shape != (S,):
            raise ValueError("initial_dist must have one entry per state")
        if mu.min() < 0.0 or abs(mu.sum() - 1.0) > 1e-12:
            raise ValueError("initial_dist must be nonnegative and sum to 1")
        terminals = frozenset(int(s) for s in self.terminal_states)
        for s in terminals:
            if not 0 <= s < S:
                raise ValueError(f"terminal state {s} out of range")
            if np.any(ns[s] != s) or np.any(r[s] != 0.0):
                raise ValueError(f"terminal state {s} must be absorbing with zero reward")
        object.__setattr__(self, "next_state", _frozen(ns))
        object.__setattr__(self, "reward", _frozen(r))
        object.__setattr__(self, "horizon", int(self.horizon))
        object.__setattr__(self, "initial_dist", _frozen(mu))
        object.__setattr__(self, "terminal_states", terminals)

    @property
    def num_states(self) -> int:
        return self.next_state.shape[0]

    @property
    def num_actions(self) -> int:
        return self.next_state.shape[1]

    @property
    def initial_support(self) -> np.ndarray:
        return np.flatnonzero(self.initial_dist > 0)

    def step(self, state: int, action: int) -> Tuple[int, float]:
        return int(self.next_state[state, action]), float(self.reward[state, action])

    def is_terminal(self, state: int) -> bool:
        return state in self.terminal_states

    def with_initial_dist(self, initial_dist) -> "TabularMdp":
        return TabularMdp(
            self.next_state, self.reward, self.horizon, initial_dist, self.terminal_states
        )

    def point_start(self, state: int) -> "TabularMdp":
        mu = np.zeros(self.num_states)
        mu[state] = 1.0
        return self.with_initial_dist(mu)

    def transition_matrix(self, policy: "TabularPolicy") -> np.ndarray:
        """State-to-state matrix ``P[s, s'] = sum_a pi(a|s) [T(s,a) = s']``."""
        S, A = self.next_state.shape
        P = np.zeros((S, S))
        rows = np.repeat(np.arange(S), A)
        np.add.at(P, (rows, self.next_state.ravel()), policy.probs.ravel())
        return P


@dataclass(frozen=True)
class TabularPolicy:
    """Stationary policy as an ``(S, A)`` table of action probabilities."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 2:
            raise ValueError("policy table must be 2-dimensional")
        if not np.all(np.isfinite(p)) or p.min() < 0.0:
            raise ValueError("policy probabilities must be finite and nonnegative")
        if np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("every policy row must sum to 1")
        object.__setattr__(self, "probs", _frozen(p))

    @classmethod
    def uniform(cls, num_states: int, num_actions: int) -> "TabularPolicy":
        return cls(np.full((num_states, num_actions), 1.0 / num_actions))

    @classmethod
    def from_actions(cls, actions: Sequence[int], num_actions: int) -> "TabularPolicy":
        actions = np.asarray(actions, dtype=np.int64)
        probs = np.zeros((len(actions), num_actions))
        probs[np.arange(len(actions)), actions] = 1.0
        return cls(probs)

    @property
    def num_states(self) -> int:
        return self.probs.shape[0]

    @property
    def num_actions(self) -> int:
        return self.probs.shape[1]

    def is_deterministic(self) -> bool:
        return bool(np.all((self.probs == 0.0) | (self.probs == 1.0)))

    def greedy_actions(self) -> np.ndarray:
        """Most probable action per state, lowest index on ties."""
        return np.argmax(self.probs, axis=1)

    def to_dict(self) -> dict:
        return {"probs": self.probs.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "TabularPolicy":
        return cls(np.asarray(doc["probs"], dtype=np.float64))


# ---------------------------------------------------------------------------
# Four Rooms
# ---------------------------------------------------------------------------

# Interior of the classic four-rooms grid; the outer wall is implicit.
# Doorways: (2,5) top hall, (9,5) bottom hall, (5,1) left hall, (6,8) right hall.
FOUR_ROOMS_WALLS = (
    ".....#.....",
    ".....#.....",
    "...........",
    ".....#.....",
    ".....#.....",
    "#.####.....",
    ".....###.##",
    ".....#.....",
    ".....#.....",
    "...........",
    ".....#.....",
)
FOUR_ROOMS_LEFT_START = (1, 1)
FOUR_ROOMS_RIGHT_START = (1, 9)
FOUR_ROOMS_GOAL = (9, 9)


@dataclass(frozen=True)
class FourRoomsSpec:
    grid: Tuple[str, ...] = FOUR_ROOMS_WALLS
    start_states: Tuple[Tuple[int, int], ...] = (FOUR_ROOMS_LEFT_START, FOUR_ROOMS_RIGHT_START)
    goal_state: Tuple[int, int] = FOUR_ROOMS_GOAL
    horizon: int = 50

    def __post_init__(self):
        grid = tuple(str(row) for row in self.grid)
        if not grid or len({len(row) for row in grid}) != 1:
            raise ValueError("grid rows must be non-empty and of equal length")
        for row in grid:
            if set(row) - {"#", "."}:
                raise ValueError("grid may only contain '#' and '.'")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "start_states", tuple(tuple(c) for c in self.start_states))
        object.__setattr__(self, "goal_state", tuple(self.goal_state))
        if not self.start_states:
            raise ValueError("at least one start state is required")
        for cell in (*self.start_states, self.goal_state):
            if not self.is_free(cell):
                raise ValueError(f"cell {cell} is not a free cell")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")

    @property
    def shape(self) -> Tuple[int, int]:
        return len(self.grid), len(self.grid[0])

    def is_free(self, cell) -> bool:
        r, c = cell
        rows, cols = self.shape
        return 0 <= r < rows and 0 <= c < cols and self.grid[r][c] == "."

    def free_cells(self) -> list:
        rows, cols = self.shape
        return [(r, c) for r in range(rows) for c in range(cols) if self.grid[r][c] == "."]

    def layout(self) -> list:
        """Grid as strings of '#', '.', 'S' (start) and 'G' (goal)."""
        rows = [list(row) for row in self.grid]
        for r, c in self.start_states:
            rows[r][c] = "S"
        gr, gc = self.goal_state
        rows[gr][gc] = "G"
        return ["".join(row) for row in rows]

    @classmethod
    def from_layout(cls, layout: Sequence[str], horizon: int = 50) -> "FourRoomsSpec":
        starts, goal, grid = [], None, []
        for r, row in enumerate(layout):
            for c, ch in enumerate(row):
                if ch == "S":
                    starts.append((r, c))
                elif ch == "G":
                    if goal is not None:
                        raise ValueError("layout has more than one goal")
                    goal = (r, c)
                elif ch not in "#.":
                    raise ValueError(f"unexpected layout character {ch!r}")
            grid.append(row.replace("S", ".").replace("G", "."))
        if goal is None:
            raise ValueError("layout has no goal")
        return cls(tuple(grid), tuple(starts), goal, horizon)


@dataclass(frozen=True)
class GridWorld:
    """A :class:`TabularMdp` together with its cell <-> state mapping."""

    mdp: TabularMdp
    spec: FourRoomsSpec
    cells: Tuple[Tuple[int, int], ...]

    def state_of(self, cell) -> int:
        return self.cells.index(tuple(cell))

    def cell_of(self, state: int) -> Tuple[int, int]:
        return self.cells[state]

    @property
    def goal(self) -> int:
        return self.state_of(self.spec.goal_state)

    @property
    def starts(self) -> Tuple[int, ...]:
        return tuple(self.state_of(c) for c in self.spec.start_states)


def grid_distances(spec: FourRoomsSpec, target) -> dict:
    """Breadth-first-search step counts from every free cell to ``target``."""
    dist = {tuple(target): 0}
    queue = deque([tuple(target)])
    while queue:
        r, c = queue.popleft()
        for dr, dc in _MOVES:
            nxt = (r + dr, c + dc)
            if spec.is_free(nxt) and nxt not in dist:
                dist[nxt] = dist[(r, c)] + 1
                queue.append(nxt)
    return dist


def build_four_rooms(spec: Optional[FourRoomsSpec] = None) -> GridWorld:
    """Gridworld MDP: 4 moves, walls block, reward 1 on entering the goal."""
    spec = spec or FourRoomsSpec()
    dist = grid_distances(spec, spec.goal_state)
    unreachable = [c for c in spec.start_states if c not in dist]
    if unreachable:
        raise ValueError(f"goal is unreachable from start cells {unreachable}")
    cells = tuple(spec.free_cells())
    index = {c: i for i, c in enumerate(cells)}
    S, A = len(cells), len(_MOVES)
    goal = index[spec.goal_state]
    next_state = np.zeros((S, A), dtype=np.int64)
    reward = np.zeros((S, A))
    for s, (r, c) in enumerate(cells):
        for a, (dr, dc) in enumerate(_MOVES):
            if s == goal:
                next_state[s, a] = s
                continue
            nxt = (r + dr, c + dc)
            s2 = index[nxt] if spec.is_free(nxt) else s
            next_state[s, a] = s2
            reward[s, a] = 1.0 if s2 == goal else 0.0
    mu = np.zeros(S)
    for cell in spec.start_states:
        mu[index[cell]] += 1.0 / len(spec.start_states)
    mdp = TabularMdp(next_state, reward, spec.horizon, mu, frozenset({goal}))
    return GridWorld(mdp, spec, cells)


# ---------------------------------------------------------------------------
# Dynamic programming
# ---------------------------------------------------------------------------

def optimal_q_values(mdp: TabularMdp) -> np.ndarray:
    """Backward induction. ``q[t, s, a]`` is the optimal return with ``H - t`` steps left."""
    H, S, A = mdp.horizon, mdp.num_states, mdp.num_actions
    q = np.zeros((H, S, A))
    v_next = np.zeros(S)
    for t in range(H - 1, -1, -1):
        q[t] = mdp.reward + v_next[mdp.next_state]
        v_next = q[t].max(axis=1)
    return q


def value_iteration(mdp: TabularMdp, tol: float = 1e-9):
    """Finite-horizon value iteration.

    Returns ``(values, policy)`` where ``values[h - 1, s]`` is the optimal
    return from ``s`` with ``H - h + 1`` steps to go (so ``values[0]`` is the
    step-1 value function) and ``policy`` is a deterministic stationary policy.

    The optimal finite-horizon policy is in general time-dependent. The
    stationary policy returned here is greedy with respect to the full-horizon
    Q-values; ties are broken by the Q-values for successively shorter
    remaining horizons and finally by the lowest action index. On goal-reaching
    problems this picks shortest-path actions, which keeps the stationary
    policy optimal there.
    """
    q = optimal_q_values(mdp)
    values = q.max(axis=2)
    candidates = np.ones((mdp.num_states, mdp.num_actions), dtype=bool)
    for t in range(mdp.horizon):
        masked = np.where(candidates, q[t], -np.inf)
        best = masked.max(axis=1, keepdims=True)
        candidates &= masked >= best - tol
    actions = np.argmax(candidates, axis=1)
    return values, TabularPolicy.from_actions(actions, mdp.num_actions)


def state_values(mdp: TabularMdp, policy: TabularPolicy) -> np.ndarray:
    """``V^pi(s)`` for every start state by backward policy evaluation."""
    P = mdp.transition_matrix(policy)
    r_pi = (policy.probs * mdp.reward).sum(axis=1)
    v = np.zeros(mdp.num_states)
    for _ in range(mdp.horizon):
        v = r_pi + P @ v
    return v


def state_occupancy(mdp: TabularMdp, policy: TabularPolicy, start: Optional[int] = None) -> np.ndarray:
    """``occ[h - 1, s] = Pr(s_h = s)`` for h = 1..H."""
    P = mdp.transition_matrix(policy)
    d = np.zeros(mdp.num_states)
    if start is None:
        d[:] = mdp.initial_dist
    else:
        d[start] = 1.0
    occ = np.zeros((mdp.horizon, mdp.num_states))
    for h in range(mdp.horizon):
        occ[h] = d
        d = d @ P
    return occ


def evaluate_policy_exact(mdp: TabularMdp, policy: TabularPolicy, start: Optional[int] = None) -> float:
    """Exact ``V^pi`` (or ``V^pi(start)``) from the forward occupancy recursion."""
    _check_policy(mdp, policy)
    occ = state_occupancy(mdp, policy, start)
    r_pi = (policy.probs * mdp.reward).sum(axis=1)
    return float((occ @ r_pi).sum())


def _check_policy(mdp: TabularMdp, policy: TabularPolicy) -> None:
    if policy.probs.shape != (mdp.num_states, mdp.num_actions):
        raise ValueError(
            f"policy shape {policy.probs.shape} does not match MDP {(mdp.num_states, mdp.num_actions)}"
        )


def rollout(mdp: TabularMdp, policy: TabularPolicy, rng_seed: int, start: Optional[int] = None) -> Trajectory:
    """Sample one episode; stops early after entering a terminal state."""
    _check_policy(mdp, policy)
    rng = make_rng(rng_seed)
    return _rollout(mdp, policy, rng, start)


def _rollout(mdp: TabularMdp, policy: TabularPolicy, rng: np.random.Generator, start: Optional[int]) -> Trajectory:
    if start is None:
        s = int(rng.choice(mdp.num_states, p=mdp.initial_dist))
    else:
        s = int(start)
    cdf = np.cumsum(policy.probs, axis=1)
    states, actions = [], []
    u = rng.random(mdp.horizon)
    for h in range(mdp.horizon):
        if s in mdp.terminal_states:
            break
        a = int(np.searchsorted(cdf[s], u[h] * cdf[s, -1], side="right"))
        a = min(a, mdp.num_actions - 1)
        states.append(s)
        actions.append(a)
        s = int(mdp.next_state[s, a])
    return Trajectory(tuple(states), tuple(actions))


def trajectory_return(mdp: TabularMdp, traj: Trajectory) -> float:
    return float(sum(mdp.reward[s, a] for s, a in traj.pairs()))


def return_difference_delta(mdp: TabularMdp, expert_policy: TabularPolicy) -> float:
    """Largest gap in expert value between two supported initial states."""
    support = mdp.initial_support
    if support.size == 0:
        raise ValueError("initial distribution has empty support")
    if not expert_policy.is_deterministic():
        raise ValueError("expert policy must be deterministic")
    vals = [evaluate_policy_exact(mdp, expert_policy, int(s)) for s in support]
    return float(max(vals) - min(vals))


# ---------------------------------------------------------------------------
# Random instances and persistence
# ---------------------------------------------------------------------------

def random_deterministic_mdp(
    num_states: int,
    num_actions: int,
    horizon: int,
    seed: int,
    support_size: Optional[int] = None,
    start_links: str = "cycle",
) -> TabularMdp:
    """Random deterministic MDP for bound experiments.

    Next states are uniform over S and rewards uniform in [0, 1]. The initial
    distribution is uniform over a random subset of 2-5 states.

    ``start_links`` wires the supported initial states together:

    * ``"cycle"``: a random cycle through one action each, so every supported
      state can be entered in one step from another one;
    * ``"complete"``: action ``j`` of every supported state leads to the
      ``j``-th supported state (needs ``num_actions >= support_size``);
    * ``"none"``: no rewiring.
    """
    rng = make_rng(seed)
    next_state = rng.integers(0, num_states, size=(num_states, num_actions))
    reward = rng.random((num_states, num_actions))
    if support_size is None:
        hi = min(5, num_states, num_actions) if start_links == "complete" else min(5, num_states)
        support_size = int(rng.integers(min(2, hi), hi + 1))
    support = rng.choice(num_states, size=support_size, replace=False)
    if start_links == "complete":
        if num_actions < support_size:
            raise ValueError("complete start links need num_actions >= support_size")
        order = rng.permutation(support)
        for s in support:
            next_state[s, :support_size] = order
    elif start_links == "cycle" and support_size > 1:
        order = rng.permutation(support)
        for i, s in enumerate(order):
            a = int(rng.integers(num_actions))
            next_state[s, a] = order[(i + 1) % support_size]
    elif start_links not in ("cycle", "none"):
        raise ValueError(f"unknown start_links {start_links!r}")
    mu = np.zeros(num_states)
    mu[support] = 1.0 / support_size
    return TabularMdp(next_state, reward, horizon, mu)


def mdp_to_dict(mdp: TabularMdp, layout: Optional[Sequence[str]] = None) -> dict:
    doc = {
        "num_states": mdp.num_states,
        "num_actions": mdp.num_actions,
        "horizon": mdp.horizon,
        "next_state": mdp.next_state.tolist(),
        "reward": mdp.reward.tolist(),
        "initial_dist": mdp.initial_dist.tolist(),
        "terminal_states": sorted(mdp.terminal_states),
    }
    if layout is not None:
        doc["layout"] = list(layout)
    return doc


def mdp_from_dict(doc: dict) -> TabularMdp:
    mdp = TabularMdp(
        np.asarray(doc["next_state"]),
        np.asarray(doc["reward"], dtype=np.float64),
        int(doc["horizon"]),
        np.asarray(doc["initial_dist"], dtype=np.float64),
        frozenset(doc.get("terminal_states", ())),
    )
    for key, expected in (("num_states", mdp.num_states), ("num_actions", mdp.num_actions)):
        if key in doc and int(doc[key]) != expected:
            raise ValueError(f"{key}={doc[key]} disagrees with table shape ({expected})")
    return mdp


def save_mdp(mdp: TabularMdp, path, layout: Optional[Sequence[str]] = None) -> None:
    Path(path).write_text(json.dumps(mdp_to_dict(mdp, layout)))


def load_mdp(path) -> TabularMdp:
    return mdp_from_dict(json.loads(Path(path).read_text()))
