"""Idealized recovery policy and Monte Carlo checks of its suboptimality bounds.

The supplementary dataset here is the *theoretical* one: single transitions
from an initial state into a first-step expert state. It is unrelated to the
rollback-selected pairs of :mod:`ilid.selection` and is kept as its own type.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .datasets import Dataset
from .mdp import (
    TabularMdp,
    TabularPolicy,
    _rollout,
    evaluate_policy_exact,
    make_rng,
    return_difference_delta,
    value_iteration,
)
from .trajectory import Trajectory

E = math.e


@dataclass(frozen=True)
class TheorySupplementaryDataset:
    transitions: Tuple[Tuple[int, int, int], ...]
    attempts: int = 0

    @property
    def n_s(self) -> int:
        return len(self.transitions)

    def first_states(self) -> set:
        return {s for s, _, _ in self.transitions}

    @property
    def acceptance_rate(self) -> float:
        return self.n_s / self.attempts if self.attempts else 1.0


class BudgetExhausted(RuntimeError):
    pass


def _supplementary(mdp: TabularMdp, targets: set, n_s: int, rng: np.random.Generator,
                   max_attempts: Optional[int]) -> TheorySupplementaryDataset:
    if n_s == 0:
        return TheorySupplementaryDataset((), 0)
    budget = max_attempts if max_attempts is not None else 1000 * n_s
    target_mask = np.zeros(mdp.num_states, dtype=bool)
    target_mask[list(targets)] = True
    qualifying = target_mask[mdp.next_state]  # (S, A)
    out, attempts = [], 0
    # draws are taken in blocks; only the first `budget` count
    while len(out) < n_s:
        if attempts >= budget:
            raise BudgetExhausted(
                f"accepted {len(out)}/{n_s} supplementary transitions in {attempts} draws"
            )
        block = rng.choice(mdp.num_states, size=n_s, p=mdp.initial_dist)
        picks = rng.random(n_s)
        for s, u in zip(block, picks):
            if attempts >= budget or len(out) == n_s:
                break
            attempts += 1
            acts = np.flatnonzero(qualifying[s])
            if acts.size:
                a = int(acts[min(int(u * acts.size), acts.size - 1)])
                out.append((int(s), a, int(mdp.next_state[s, a])))
    return TheorySupplementaryDataset(tuple(out), attempts)


def build_theory_supplementary(
    mdp: TabularMdp, expert: Dataset, n_s: int, seed: int, max_attempts: Optional[int] = None
) -> TheorySupplementaryDataset:
    """Rejection-sample ``n_s`` transitions ``(s, a, T(s,a))`` with ``s ~ mu`` and
    ``T(s,a)`` a first state of some expert trajectory.

    A draw of ``s`` is accepted when at least one action qualifies; one
    qualifying action is then chosen uniformly at random.
    """
    if len(expert) == 0:
        raise ValueError("expert dataset is empty")
    return _supplementary(mdp, expert.first_states(), n_s, make_rng(seed), max_attempts)


# ---------------------------------------------------------------------------
# Idealized policy
# ---------------------------------------------------------------------------

SUPPLEMENTARY, EXPERT, UNIFORM = "supplementary", "expert", "uniform"


def tilde_branches(num_states: int, expert: Dataset, supp: TheorySupplementaryDataset) -> list:
    """Which branch of the idealized policy governs each state.

    Expert states take precedence over supplementary first states.
    """
    expert_states = expert.states_visited()
    supp_states = supp.first_states() - expert.first_states()
    out = []
    for s in range(num_states):
        if s in expert_states:
            out.append(EXPERT)
        elif s in supp_states:
            out.append(SUPPLEMENTARY)
        else:
            out.append(UNIFORM)
    return out


def construct_tilde_policy(mdp: TabularMdp, expert: Dataset, supp: TheorySupplementaryDataset) -> TabularPolicy:
    """Follow logged expert actions on expert states, logged supplementary
    actions on supplementary-only initial states, and act uniformly elsewhere.
    Rows are empirical count ratios."""
    S, A = mdp.num_states, mdp.num_actions
    expert_counts = np.zeros((S, A))
    es, ea = expert.flat()
    np.add.at(expert_counts, (es, ea), 1.0)
    supp_counts = np.zeros((S, A))
    for s, a, _ in supp.transitions:
        supp_counts[s, a] += 1.0
    probs = np.full((S, A), 1.0 / A)
    supp_rows = supp_counts.sum(axis=1) > 0
    for s in expert.first_states():
        supp_rows[s] = False
    probs[supp_rows] = supp_counts[supp_rows] / supp_counts[supp_rows].sum(axis=1, keepdims=True)
    exp_rows = expert_counts.sum(axis=1) > 0
    probs[exp_rows] = expert_counts[exp_rows] / expert_counts[exp_rows].sum(axis=1, keepdims=True)
    return TabularPolicy(probs)


# ---------------------------------------------------------------------------
# Missing mass
# ---------------------------------------------------------------------------

def analytic_eps_e(initial_dist, n_e: int):
    """``sum_s mu(s) (1 - mu(s))^n_e``; exact if ``initial_dist`` holds Fractions."""
    return sum(m * (1 - m) ** n_e for m in initial_dist)


def euler_upper_bound(terms: int = 30) -> Fraction:
    """Rational upper bound on e: ``sum_{k<N} 1/k!`` plus the tail bound
    ``sum_{k>=N} 1/k! <= (N + 1) / (N! N)``."""
    if terms < 1:
        raise ValueError("terms must be positive")
    total, fact = Fraction(0), 1
    for k in range(terms):
        if k:
            fact *= k
        total += Fraction(1, fact)
    fact *= terms  # N!
    return total + Fraction(terms + 1, fact * terms)


def missing_mass_bound_holds(initial_dist: Sequence[Fraction], n_e: int, num_states: int) -> bool:
    """Exact test of ``sum_s mu(s)(1-mu(s))^n <= |S| / (e n)``.

    Uses a rational upper bound on e, so a True result is rigorous.
    """
    lhs = analytic_eps_e(initial_dist, n_e)
    return lhs * euler_upper_bound() * n_e <= num_states


@dataclass(frozen=True)
class MissingMassReport:
    eps_o: float
    eps_e: float
    eps_s: float
    eps_o_se: float
    eps_s_se: float
    eps_e_mc: float
    eps_e_mc_se: float
    methods: Tuple[Tuple[str, str], ...] = (("eps_o", "monte_carlo"), ("eps_e", "analytic"), ("eps_s", "monte_carlo"))


@dataclass
class _Trials:
    v_tilde: np.ndarray
    miss_o: np.ndarray
    miss_e: np.ndarray
    miss_s: np.ndarray


class _ExpertCache:
    """Deterministic expert trajectories keyed by start state."""

    def __init__(self, mdp: TabularMdp, policy: TabularPolicy):
        self.mdp, self.policy, self._cache = mdp, policy, {}

    def __call__(self, start: int) -> Trajectory:
        if start not in self._cache:
            self._cache[start] = _rollout(self.mdp, self.policy, make_rng(0), start)
        return self._cache[start]


def _run_trials(mdp: TabularMdp, expert_policy: TabularPolicy, n_e: int, n_s: int, trials: int,
                seed: int, max_attempts: Optional[int] = None) -> _Trials:
    if n_e < 1:
        raise ValueError("n_e must be at least 1")
    if trials < 1:
        raise ValueError("trials must be at least 1")
    rng = make_rng(seed)
    expert_traj = _ExpertCache(mdp, expert_policy)
    mu = mdp.initial_dist
    out = _Trials(*(np.zeros(trials) for _ in range(4)))
    for t in range(trials):
        starts = rng.choice(mdp.num_states, size=n_e, p=mu)
        expert = Dataset(tuple(expert_traj(int(s)) for s in starts), "expert")
        s1_e = expert.first_states()
        supp = _supplementary(mdp, s1_e, n_s, rng, max_attempts)
        s1_s = supp.first_states()
        policy = construct_tilde_policy(mdp, expert, supp)
        out.v_tilde[t] = evaluate_policy_exact(mdp, policy)
        out.miss_e[t] = mu[list(s1_e)].sum()
        out.miss_s[t] = mu[list(s1_s)].sum() if s1_s else 0.0
        out.miss_o[t] = mu[list(s1_e | s1_s)].sum()
    # stored values are covered mass; convert to missing mass
    out.miss_o, out.miss_e, out.miss_s = 1 - out.miss_o, 1 - out.miss_e, 1 - out.miss_s
    return out


def _mean_se(x: np.ndarray) -> Tuple[float, float]:
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
    return float(x.mean()), se


def _missing_mass_from(trials: _Trials, mdp: TabularMdp, n_e: int) -> MissingMassReport:
    eo, eo_se = _mean_se(trials.miss_o)
    es, es_se = _mean_se(trials.miss_s)
    ee_mc, ee_mc_se = _mean_se(trials.miss_e)
    ee = float(analytic_eps_e(mdp.initial_dist, n_e))
    return MissingMassReport(
        float(np.clip(eo, 0, 1)), float(np.clip(ee, 0, 1)), float(np.clip(es, 0, 1)),
        eo_se, es_se, ee_mc, ee_mc_se,
    )


def missing_mass(mdp: TabularMdp, n_e: int, n_s: int, trials: int, seed: int,
                 expert_policy: Optional[TabularPolicy] = None) -> MissingMassReport:
    """Missing-mass quantities of the first-step expert and supplementary sets.

    ``eps_e`` is analytic (expert first states are i.i.d. draws from mu);
    ``eps_o`` and ``eps_s`` are Monte Carlo means over dataset draws. A Monte
    Carlo estimate of ``eps_e`` is reported alongside as a cross-check.
    """
    if expert_policy is None:
        _, expert_policy = value_iteration(mdp)
    return _missing_mass_from(_run_trials(mdp, expert_policy, n_e, n_s, trials, seed), mdp, n_e)


# ---------------------------------------------------------------------------
# Bound verification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundReport:
    n_e: int
    n_s: int
    trials: int
    horizon: int
    num_states: int
    v_expert: float
    v_tilde_mean: float
    v_tilde_se: float
    delta: float
    eps: MissingMassReport
    theorem1_rhs: float
    theorem1_se: float
    corollary1_rhs: float
    companion_rhs: float
    holds: Dict[str, bool]
    # theorem1_rhs <= corollary1_rhs; only guaranteed when supplementary first
    # states are distributed as mu, so it is reported but not part of `holds`
    rhs_ordering_holds: bool = True

    @property
    def gap(self) -> float:
        return self.v_expert - self.v_tilde_mean

    def row(self) -> dict:
        """Flat CSV row."""
        return {
            "n_e": self.n_e,
            "n_s": self.n_s,
            "gap": self.gap,
            "se": self.v_tilde_se,
            "thm1_rhs": self.theorem1_rhs,
            "thm1_se": self.theorem1_se,
            "cor1_rhs": self.corollary1_rhs,
            "eps_o": self.eps.eps_o,
            "eps_e": self.eps.eps_e,
            "eps_s": self.eps.eps_s,
            "delta": self.delta,
            "holds": all(self.holds.values()),
        }


def theorem1_rhs(horizon: int, eps_o: float, eps_e: float, eps_s: float, delta: float) -> float:
    return horizon * eps_o + (delta + 1.0) * math.sqrt(max(eps_e * (1.0 - eps_s), 0.0))


def corollary1_rhs(num_states: int, horizon: int, n_e: int, n_s: int, delta: float) -> float:
    return num_states * horizon / (E * (n_e + n_s)) + (delta + 1.0) * math.sqrt(num_states / (E * n_e))


def companion_rhs(num_states: int, horizon: int, n_e: int) -> float:
    """Bound from following expert actions alone: |S| H / (e n_e)."""
    return num_states * horizon / (E * n_e)


def _sqrt_term_se(eps_e: float, eps_s: float, eps_s_se: float) -> float:
    x = eps_e * (1.0 - eps_s)
    cap = math.sqrt(eps_e * eps_s_se)  # |sqrt(x) - sqrt(y)| <= sqrt(|x - y|)
    if x <= 0.0:
        return cap
    return min(eps_e * eps_s_se / (2.0 * math.sqrt(x)), cap)


def bound_report(mdp: TabularMdp, n_e: int, n_s: int, trials: int, seed: int,
                 use_eps_s: bool = True, max_attempts: Optional[int] = None) -> BoundReport:
    """Monte Carlo estimate of the expected suboptimality of the idealized
    policy, with both bound right-hand sides on the same dataset draws.

    ``use_eps_s=False`` drops the supplementary coverage from the second
    term, i.e. uses ``(delta + 1) sqrt(eps_e)``.
    """
    _, expert_policy = value_iteration(mdp)
    v_expert = evaluate_policy_exact(mdp, expert_policy)
    delta = return_difference_delta(mdp, expert_policy)
    tr = _run_trials(mdp, expert_policy, n_e, n_s, trials, seed, max_attempts)
    eps = _missing_mass_from(tr, mdp, n_e)
    v_mean, v_se = _mean_se(tr.v_tilde)
    H, S = mdp.horizon, mdp.num_states

    eps_s = eps.eps_s if use_eps_s else 0.0
    thm = theorem1_rhs(H, eps.eps_o, eps.eps_e, eps_s, delta)
    sqrt_se = _sqrt_term_se(eps.eps_e, eps_s, eps.eps_s_se) if use_eps_s else 0.0
    rhs_se = math.hypot(H * eps.eps_o_se, (delta + 1.0) * sqrt_se)
    thm_se = math.hypot(v_se, rhs_se)
    cor = corollary1_rhs(S, H, n_e, n_s, delta)
    comp = companion_rhs(S, H, n_e)
    gap = v_expert - v_mean
    holds = {
        "theorem1": gap <= thm + 2.0 * thm_se,
        "corollary1": gap <= cor + 2.0 * v_se,
        "companion": gap <= comp + 2.0 * v_se,
    }
    return BoundReport(
        n_e, n_s, trials, H, S, v_expert, v_mean, v_se, delta, eps,
        thm, thm_se, cor, comp, holds, thm <= cor + 2.0 * rhs_se,
    )


def verify_theorem1(mdp: TabularMdp, n_e: int, n_s: int, trials: int, seed: int, **kw) -> BoundReport:
    return bound_report(mdp, n_e, n_s, trials, seed, **kw)


def verify_corollary1(mdp: TabularMdp, n_e: int, n_s: int, trials: int, seed: int, **kw) -> BoundReport:
    return bound_report(mdp, n_e, n_s, trials, seed, **kw)


def report_dict(report: BoundReport) -> dict:
    doc = asdict(report)
    doc["gap"] = report.gap
    return doc
