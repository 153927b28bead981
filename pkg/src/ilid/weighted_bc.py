"""Weighted behavior cloning: ILID and the BCE / BCU / DWBC / ISWBC baselines.

Every scheme maximizes a sum of weighted log-likelihood terms

    J(pi) = sum_term  E_{(s,a) ~ term data}[ w(s,a) log pi(a|s) ]

over a tabular policy. The terms are

* ``BCE``   : D_e with weight 1
* ``BCU``   : D_u with weight 1
* ``ISWBC`` : D_u with the importance weight D_e(s,a) / D_u(s,a)
* ``DWBC``  : D_u with the DWBC discriminator weights
* ``ILID``  : D_u with alpha(s,a) = D(s,a) / (1 - D(s,a)) plus the selected
  pairs with beta(s) = 1[d(s) <= sigma]
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .datasets import Dataset, empirical_marginals, union_dataset
from .discriminators import (
    ExactDiscriminator,
    exact_dwbc_discriminator,
    exact_state_action_discriminator,
    exact_state_discriminator,
)
from .mdp import TabularPolicy, make_rng
from .selection import SelectedPair, full_imperfect_pairs, selected_arrays

SCHEMES = ("BCE", "BCU", "ILID", "DWBC", "ISWBC")
FIRST, SECOND = 0, 1


@dataclass(frozen=True)
class SchemeConfig:
    scheme: str = "ILID"
    dwbc_alpha: float = 7.5
    dwbc_eta: float = 0.5
    disable_alpha: bool = False
    disable_beta: bool = False
    use_full_Db_as_Ds: bool = False

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.dwbc_eta <= 0:
            raise ValueError("dwbc_eta must be positive")

    @property
    def label(self) -> str:
        tags = [
            name for flag, name in (
                (self.disable_alpha, "no_alpha"),
                (self.disable_beta, "no_beta"),
                (self.use_full_Db_as_Ds, "full_Db"),
            ) if flag
        ]
        return "+".join([self.scheme, *tags])


# ---------------------------------------------------------------------------
# Weights
# ---------------------------------------------------------------------------

def alpha_weight(D, s, a):
    """Importance weight ``D / (1 - D)``; exactly ``D_e(s,a) / D_u(s,a)`` for the exact backend."""
    if isinstance(D, ExactDiscriminator):
        if np.ndim(s) == 0:
            r = D.ratio(int(s), int(a))
            if r == 1:
                raise ValueError(f"alpha undefined: D_u{(int(s), int(a))} = 0")
            return r / (1 - r)
        pe = D.expert.state_action_counts[s, a] / D.expert.total
        pu = D.union.state_action_counts[s, a] / D.union.total
        if np.any(pu == 0):
            raise ValueError("alpha undefined where D_u(s,a) = 0")
        return pe / pu
    v = D(s, a)
    if np.any(np.asarray(v) >= 1.0):
        raise ValueError("alpha undefined where D(s,a) = 1")
    return v / (1.0 - v)


def beta_weight(d, s, sigma: float):
    """1 where ``d(s) <= sigma`` (state off the expert manifold), else 0."""
    v = d(s)
    out = (np.asarray(v) <= sigma).astype(np.float64)
    return float(out) if np.ndim(s) == 0 else out


def dwbc_weight(d_pi, s, a, in_expert, cfg: SchemeConfig = SchemeConfig("DWBC")):
    """``alpha - eta / (d (1 - d))`` on expert samples, ``1 / (1 - d)`` on imperfect ones."""
    d = np.asarray(d_pi(s, a), dtype=np.float64)
    if np.any((d <= 0.0) | (d >= 1.0)):
        raise ValueError("DWBC weight needs a discriminator output strictly inside (0, 1)")
    out = np.where(in_expert, cfg.dwbc_alpha - cfg.dwbc_eta / (d * (1.0 - d)), 1.0 / (1.0 - d))
    return float(out) if np.ndim(s) == 0 else out


def iswbc_weight(ratios: ExactDiscriminator, s, a):
    """Empirical ratio ``D_e(s,a) / D_u(s,a)``; 0 for pairs absent from ``D_e``."""
    if np.ndim(s) == 0:
        ce = int(ratios.expert.state_action_counts[s, a])
        cu = int(ratios.union.state_action_counts[s, a])
        if cu == 0:
            raise ValueError(f"importance weight undefined: D_u{(int(s), int(a))} = 0")
        return Fraction(ce * ratios.union.total, cu * ratios.expert.total)
    return alpha_weight(ratios, s, a)


def normalized_score(raw: float, random_ref: float, expert_ref: float) -> float:
    """100 (raw - random) / (expert - random)."""
    if expert_ref == random_ref:
        raise ValueError("expert and random references coincide")
    return 100.0 * ((raw - random_ref) / (expert_ref - random_ref))


# ---------------------------------------------------------------------------
# Training data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DataBundle:
    expert: Dataset
    imperfect: Dataset
    num_states: int
    num_actions: int
    selected: Optional[Sequence[SelectedPair]] = None

    @property
    def union(self) -> Dataset:
        return union_dataset(self.expert, self.imperfect)


@dataclass(frozen=True)
class WeightedSamples:
    """Struct-of-arrays view of the weighted training stream."""

    states: np.ndarray
    actions: np.ndarray
    weights: np.ndarray
    term: np.ndarray  # FIRST for the D_u / D_e term, SECOND for selected pairs

    def __len__(self) -> int:
        return self.states.size

    def mass(self, num_states: int, num_actions: int, clamp: bool = True) -> np.ndarray:
        """Per-(s, a) weight mass, each term normalized by its sample count."""
        total = np.zeros((num_states, num_actions))
        w = np.maximum(self.weights, 0.0) if clamp else self.weights
        for t in (FIRST, SECOND):
            sel = self.term == t
            n = int(sel.sum())
            if n:
                np.add.at(total, (self.states[sel], self.actions[sel]), w[sel] / n)
        return total


def _samples(states, actions, weights, term) -> WeightedSamples:
    return WeightedSamples(
        np.asarray(states, dtype=np.int64),
        np.asarray(actions, dtype=np.int64),
        np.asarray(weights, dtype=np.float64),
        np.full(len(states), term, dtype=np.int8),
    )


def _concat(parts: List[WeightedSamples]) -> WeightedSamples:
    return WeightedSamples(*(np.concatenate([getattr(p, f) for p in parts]) for f in ("states", "actions", "weights", "term")))


def weighted_samples(
    scheme: SchemeConfig,
    bundle: DataBundle,
    d=None,
    D=None,
    sigma: float = 0.2,
) -> WeightedSamples:
    """Weighted sample stream for ``scheme``.

    ``d`` (state-only) and ``D`` (state-action; for DWBC the DWBC
    discriminator) default to the exact count-based backends.
    """
    S, A = bundle.num_states, bundle.num_actions
    es, ea = bundle.expert.flat()
    if es.size == 0:
        raise ValueError("expert dataset is empty")
    if scheme.scheme == "BCE":
        return _samples(es, ea, np.ones(es.size), FIRST)

    union = bundle.union
    us, ua = union.flat()
    if scheme.scheme == "BCU":
        return _samples(us, ua, np.ones(us.size), FIRST)

    ce = empirical_marginals(bundle.expert, S, A)
    cu = empirical_marginals(union, S, A)

    if scheme.scheme == "DWBC":
        if D is None:
            bs, _ = bundle.imperfect.flat()
            cb = empirical_marginals(bundle.imperfect, S, A) if bs.size else None
            if cb is None:
                cb = type(ce)(np.zeros(S, dtype=np.int64), np.zeros((S, A), dtype=np.int64), 0, "imperfect")
            D = exact_dwbc_discriminator(ce, cb, scheme.dwbc_eta)
        in_expert = np.zeros(us.size, dtype=bool)
        in_expert[: es.size] = True
        return _samples(us, ua, dwbc_weight(D, us, ua, in_expert, scheme), FIRST)

    if D is None:
        D = exact_state_action_discriminator(ce, cu)
    alpha = np.ones(us.size) if scheme.disable_alpha else alpha_weight(D, us, ua)
    first = _samples(us, ua, alpha, FIRST)
    if scheme.scheme == "ISWBC":
        return first

    # ILID
    if scheme.use_full_Db_as_Ds:
        selected = full_imperfect_pairs(bundle.imperfect)
    elif bundle.selected is None:
        raise ValueError("ILID needs the selected (complementary) dataset")
    else:
        selected = bundle.selected
    ss, sa = selected_arrays(selected)
    if ss.size == 0:
        return first
    if scheme.disable_beta:
        beta = np.ones(ss.size)
    else:
        if d is None:
            d = exact_state_discriminator(ce, cu)
        beta = beta_weight(d, ss, sigma)
    return _concat([first, _samples(ss, sa, beta, SECOND)])


# ---------------------------------------------------------------------------
# Trainers
# ---------------------------------------------------------------------------

def weighted_log_likelihood(policy: TabularPolicy, samples: WeightedSamples, clamp: bool = True) -> float:
    """Objective value; ``-inf`` if positive mass sits on a zero-probability action."""
    mass = samples.mass(policy.num_states, policy.num_actions, clamp)
    with np.errstate(divide="ignore"):
        logp = np.log(policy.probs)
    active = mass != 0
    return float(np.sum(mass[active] * logp[active]))


def closed_form_policy(samples: WeightedSamples, num_states: int, num_actions: int) -> TabularPolicy:
    """Row-wise maximizer: ``pi(a|s)`` proportional to clamped weight mass; uniform if none."""
    mass = samples.mass(num_states, num_actions, clamp=True)
    if not np.any(mass > 0):
        raise ValueError("all sample weights are zero; the scheme is degenerate on this data")
    row = mass.sum(axis=1, keepdims=True)
    probs = np.where(row > 0, mass / np.where(row > 0, row, 1.0), 1.0 / num_actions)
    return TabularPolicy(probs)


@dataclass(frozen=True)
class GradientConfig:
    learning_rate: float = 0.05
    steps: int = 2000
    batch_size: Optional[int] = 256  # None: full-batch gradients
    seed: int = 0


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def gradient_policy(
    samples: WeightedSamples, num_states: int, num_actions: int, cfg: GradientConfig = GradientConfig()
) -> TabularPolicy:
    """Softmax tabular policy trained by Adam on the raw (unclamped) weighted log-likelihood.

    With minibatches, each step draws ``batch_size`` samples from each term.
    """
    if not np.any(samples.weights != 0):
        raise ValueError("all sample weights are zero; the scheme is degenerate on this data")
    rng = make_rng(cfg.seed)
    terms = [np.flatnonzero(samples.term == t) for t in (FIRST, SECOND)]
    terms = [t for t in terms if t.size]
    full_mass = samples.mass(num_states, num_actions, clamp=False)
    logits = np.zeros((num_states, num_actions))
    m = np.zeros_like(logits)
    v = np.zeros_like(logits)
    b1, b2, eps = 0.9, 0.999, 1e-8
    for t in range(1, cfg.steps + 1):
        if cfg.batch_size is None:
            mass = full_mass
        else:
            mass = np.zeros_like(logits)
            for idx in terms:
                pick = idx[rng.integers(0, idx.size, cfg.batch_size)]
                np.add.at(mass, (samples.states[pick], samples.actions[pick]), samples.weights[pick] / cfg.batch_size)
        pi = _softmax(logits)
        grad = mass - pi * mass.sum(axis=1, keepdims=True)
        m = b1 * m + (1 - b1) * grad
        v = b2 * v + (1 - b2) * grad * grad
        logits += cfg.learning_rate * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    return TabularPolicy(_softmax(logits))


def train_policy(
    scheme: SchemeConfig,
    bundle: DataBundle,
    trainer: str = "closed_form",
    d=None,
    D=None,
    sigma: float = 0.2,
    grad_cfg: GradientConfig = GradientConfig(),
) -> TabularPolicy:
    samples = weighted_samples(scheme, bundle, d, D, sigma)
    if trainer == "closed_form":
        return closed_form_policy(samples, bundle.num_states, bundle.num_actions)
    if trainer == "gradient":
        return gradient_policy(samples, bundle.num_states, bundle.num_actions, grad_cfg)
    raise ValueError(f"unknown trainer {trainer!r}")


def save_policy(policy: TabularPolicy, path, meta: Optional[dict] = None) -> None:
    doc = policy.to_dict()
    if meta:
        doc["meta"] = meta
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc))


def load_policy(path) -> TabularPolicy:
    return TabularPolicy.from_dict(json.loads(Path(path).read_text()))
