"""Expert-vs-union discriminators.

Two backends share one calling convention, ``d(states)`` for state-only and
``D(states, actions)`` for state-action discriminators:

* :class:`ExactDiscriminator` evaluates the optimal discriminator
  ``D_e(x) / (D_e(x) + D_u(x))`` directly from visit counts;
* :class:`TrainedDiscriminator` is a one-hidden-layer ReLU network with a
  logistic output, trained by Adam on the log-likelihood objective and
  clamped to ``[0.1, 0.9]`` at query time.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .datasets import CountTable, Dataset
from .mdp import make_rng

STATE = "state"
STATE_ACTION = "state_action"
CONTINUOUS_CONTROL_LEARNING_RATE = 1e-5
DEFAULT_CLIP = (0.1, 0.9)


def _as_index(kind: str, num_actions: int, states, actions):
    states = np.asarray(states, dtype=np.int64)
    if kind == STATE:
        if actions is not None:
            raise TypeError("state-only discriminator takes no actions")
        return states
    if actions is None:
        raise TypeError("state-action discriminator needs actions")
    return states * num_actions + np.asarray(actions, dtype=np.int64)


def _scalar_or_array(x, like):
    return float(np.asarray(x).ravel()[0]) if np.ndim(like) == 0 else x


# ---------------------------------------------------------------------------
# Exact (count-based) backend
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExactDiscriminator:
    """Optimal discriminator from counts; unclipped."""

    kind: str
    expert: CountTable
    union: CountTable

    def __post_init__(self):
        if self.kind not in (STATE, STATE_ACTION):
            raise ValueError(f"unknown discriminator kind {self.kind!r}")
        if self.expert.state_action_counts.shape != self.union.state_action_counts.shape:
            raise ValueError("expert and union count tables have different shapes")

    def _counts(self, table: CountTable) -> np.ndarray:
        if self.kind == STATE:
            return table.state_counts
        return table.state_action_counts.ravel()

    def ratio(self, state: int, action: Optional[int] = None) -> Fraction:
        """Exact value as a fraction; raises where both marginals vanish."""
        idx = int(_as_index(self.kind, self.expert.num_actions, state, action))
        ce, cu = int(self._counts(self.expert)[idx]), int(self._counts(self.union)[idx])
        if ce == 0 and cu == 0:
            raise ValueError(f"discriminator undefined at unseen input {(state, action)}")
        pe = Fraction(ce, self.expert.total)
        pu = Fraction(cu, self.union.total)
        return pe / (pe + pu)

    def __call__(self, states, actions=None):
        idx = _as_index(self.kind, self.expert.num_actions, states, actions)
        ce = self._counts(self.expert)[idx].astype(np.float64)
        cu = self._counts(self.union)[idx].astype(np.float64)
        if np.any((ce == 0) & (cu == 0)):
            raise ValueError("discriminator queried at an input absent from both datasets")
        # ce/ne / (ce/ne + cu/nu) with the totals cleared from the denominators
        num = ce * self.union.total
        out = num / (num + cu * self.expert.total)
        return _scalar_or_array(out, states)

    def table(self) -> np.ndarray:
        """Values over the whole input space, NaN where undefined."""
        ce = self._counts(self.expert).astype(np.float64)
        cu = self._counts(self.union).astype(np.float64)
        num = ce * self.union.total
        den = num + cu * self.expert.total
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)
        if self.kind == STATE_ACTION:
            return out.reshape(self.expert.num_states, self.expert.num_actions)
        return out


def exact_state_discriminator(expert: CountTable, union: CountTable) -> ExactDiscriminator:
    return ExactDiscriminator(STATE, expert, union)


def exact_state_action_discriminator(expert: CountTable, union: CountTable) -> ExactDiscriminator:
    return ExactDiscriminator(STATE_ACTION, expert, union)


@dataclass(frozen=True)
class TableDiscriminator:
    """State-action discriminator stored as a clipped ``(S, A)`` table."""

    values: np.ndarray
    clip: Tuple[float, float] = DEFAULT_CLIP
    kind: str = STATE_ACTION

    def __call__(self, states, actions=None):
        out = np.clip(self.values[np.asarray(states), np.asarray(actions)], *self.clip)
        return _scalar_or_array(out, states)


def exact_dwbc_discriminator(
    expert: CountTable, imperfect: CountTable, eta: float, clip=DEFAULT_CLIP
) -> TableDiscriminator:
    """Pointwise maximizer of the DWBC discriminator objective.

    Maximizing ``p_e log d + (1/eta) p_b log(1-d) - p_e log(1-d)`` over ``d``
    gives ``d = eta p_e / p_b`` when ``p_b > eta p_e`` and ``d -> 1`` otherwise.
    The result is clamped to ``clip``.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    pe = expert.pair_marginals()
    pb = imperfect.pair_marginals() if imperfect.total else np.zeros_like(pe)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.where(pb > eta * pe, eta * pe / np.where(pb > 0, pb, 1.0), 1.0)
    return TableDiscriminator(np.clip(d, *clip), clip)


# ---------------------------------------------------------------------------
# Trained (network) backend
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 256
    steps: int = 3000
    seed: int = 0
    hidden: int = 256
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.steps < 0 or self.hidden <= 0:
            raise ValueError("learning rate, batch size and hidden width must be positive")


class Adam:
    """Adam on a flat parameter vector (gradient *ascent*)."""

    def __init__(self, size: int, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return params + self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass(frozen=True)
class Objective:
    """Coefficients of ``w_pos E_pos[log d] + w_neg E_neg[log(1-d)] + w_pos_neg E_pos[log(1-d)]``."""

    w_pos: float = 1.0
    w_neg: float = 1.0
    w_pos_neg: float = 0.0


GAN_OBJECTIVE = Objective()


@dataclass
class TrainedDiscriminator:
    """``input -> ReLU(hidden) -> logistic`` network over one-hot inputs.

    State-action inputs are one-hot over the joint index ``s * A + a``.
    """

    kind: str
    num_states: int
    num_actions: int
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    clip: Tuple[float, float] = DEFAULT_CLIP
    history: list = field(default_factory=list, repr=False)

    @classmethod
    def init(cls, kind: str, num_states: int, num_actions: int, hidden: int = 256, seed: int = 0):
        if kind not in (STATE, STATE_ACTION):
            raise ValueError(f"unknown discriminator kind {kind!r}")
        rng = make_rng(seed)
        n_in = num_states if kind == STATE else num_states * num_actions
        lim1, lim2 = 1.0 / math.sqrt(n_in), 1.0 / math.sqrt(hidden)
        return cls(
            kind, num_states, num_actions,
            rng.uniform(-lim1, lim1, (n_in, hidden)),
            rng.uniform(-lim1, lim1, hidden),
            rng.uniform(-lim2, lim2, (hidden, 1)),
            rng.uniform(-lim2, lim2, 1),
        )

    @property
    def input_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]

    @property
    def num_params(self) -> int:
        return self.input_dim * self.hidden + 2 * self.hidden + 1

    # parameters as one flat vector, in the order w1, b1, w2, b2
    def get_params(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2.ravel(), self.b2])

    def set_params(self, flat: np.ndarray) -> None:
        n_in, h = self.w1.shape
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.num_params:
            raise ValueError(f"expected {self.num_params} parameters, got {flat.size}")
        i = 0
        self.w1 = flat[i:i + n_in * h].reshape(n_in, h).copy(); i += n_in * h
        self.b1 = flat[i:i + h].copy(); i += h
        self.w2 = flat[i:i + h].reshape(h, 1).copy(); i += h
        self.b2 = flat[i:i + 1].copy()

    def encode(self, states, actions=None) -> np.ndarray:
        return np.atleast_1d(_as_index(self.kind, self.num_actions, states, actions))

    def logits(self, idx: np.ndarray) -> np.ndarray:
        # one-hot input times w1 is a row gather
        pre = self.w1[idx] + self.b1
        return (np.maximum(pre, 0.0) @ self.w2).ravel() + self.b2[0]

    def raw(self, states, actions=None) -> np.ndarray:
        """Unclipped logistic output in (0, 1)."""
        return _sigmoid(self.logits(self.encode(states, actions)))

    def __call__(self, states, actions=None):
        out = np.clip(self.raw(states, actions), *self.clip)
        return _scalar_or_array(out, states)

    def objective(self, pos_idx, neg_idx, obj: Objective = GAN_OBJECTIVE) -> float:
        zp = self.logits(np.asarray(pos_idx))
        zn = self.logits(np.asarray(neg_idx))
        j = -obj.w_pos * _softplus(-zp).mean() - obj.w_neg * _softplus(zn).mean()
        if obj.w_pos_neg:
            j -= obj.w_pos_neg * _softplus(zp).mean()
        return float(j)

    def objective_grad(self, pos_idx, neg_idx, obj: Objective = GAN_OBJECTIVE) -> Tuple[float, np.ndarray]:
        """Objective value and its gradient w.r.t. the flat parameters."""
        pos_idx, neg_idx = np.asarray(pos_idx), np.asarray(neg_idx)
        n_pos, n_neg = pos_idx.size, neg_idx.size
        # one-hot inputs repeat, so the forward/backward pass runs once per distinct input
        uniq, inv = np.unique(np.concatenate([pos_idx, neg_idx]), return_inverse=True)
        pre = self.w1[uniq] + self.b1
        hid = np.maximum(pre, 0.0)
        z = (hid @ self.w2).ravel() + self.b2[0]
        zp, zn = z[inv[:n_pos]], z[inv[n_pos:]]
        dp, dn = _sigmoid(zp), _sigmoid(zn)
        j = -obj.w_pos * _softplus(-zp).mean() - obj.w_neg * _softplus(zn).mean()
        gz_pos = obj.w_pos * (1.0 - dp) / n_pos
        if obj.w_pos_neg:
            j -= obj.w_pos_neg * _softplus(zp).mean()
            gz_pos = gz_pos - obj.w_pos_neg * dp / n_pos
        gz = np.bincount(inv, np.concatenate([gz_pos, -obj.w_neg * dn / n_neg]), minlength=uniq.size)
        g_b2 = np.array([gz.sum()])
        g_w2 = (hid.T @ gz).reshape(-1, 1)
        g_pre = np.outer(gz, self.w2.ravel()) * (pre > 0)
        g_b1 = g_pre.sum(axis=0)
        g_w1 = np.zeros_like(self.w1)
        g_w1[uniq] = g_pre
        return float(j), np.concatenate([g_w1.ravel(), g_b1, g_w2.ravel(), g_b2])

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "encoding": {
                "type": "one_hot_state" if self.kind == STATE else "one_hot_state_action",
                "num_states": self.num_states,
                "num_actions": self.num_actions,
            },
            "shapes": {"w1": list(self.w1.shape), "b1": [self.hidden], "w2": list(self.w2.shape), "b2": [1]},
            "params": self.get_params().tolist(),
            "clip": list(self.clip),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainedDiscriminator":
        enc = doc["encoding"]
        n_in, hidden = doc["shapes"]["w1"]
        net = cls(
            doc["kind"], int(enc["num_states"]), int(enc["num_actions"]),
            np.zeros((n_in, hidden)), np.zeros(hidden), np.zeros((hidden, 1)), np.zeros(1),
            tuple(doc["clip"]),
        )
        net.set_params(np.asarray(doc["params"]))
        return net

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "TrainedDiscriminator":
        return cls.from_dict(json.loads(Path(path).read_text()))


def train_discriminator(
    net: TrainedDiscriminator,
    pos_idx: np.ndarray,
    neg_idx: np.ndarray,
    cfg: TrainConfig,
    obj: Objective = GAN_OBJECTIVE,
) -> TrainedDiscriminator:
    """Minibatch Adam ascent with equal-sized batches from each sample pool."""
    if pos_idx.size == 0 or neg_idx.size == 0:
        raise ValueError("both sample pools must be non-empty")
    rng = make_rng(cfg.seed + 1)
    params = net.get_params()
    opt = Adam(params.size, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    for step in range(cfg.steps):
        pb = pos_idx[rng.integers(0, pos_idx.size, cfg.batch_size)]
        nb = neg_idx[rng.integers(0, neg_idx.size, cfg.batch_size)]
        j, g = net.objective_grad(pb, nb, obj)
        if not (math.isfinite(j) and np.all(np.isfinite(g))):
            raise FloatingPointError(
                f"non-finite discriminator objective at step {step}: objective={j}, "
                f"max |param|={np.abs(params).max():.3g}"
            )
        params = opt.step(params, g)
        net.set_params(params)
        if step % 100 == 0 or step == cfg.steps - 1:
            net.history.append((step, j))
    return net


def _fit(kind, expert: Dataset, union: Dataset, cfg: TrainConfig, num_states, num_actions, obj=GAN_OBJECTIVE):
    if len(expert) == 0 or len(union) == 0:
        raise ValueError("expert and union datasets must be non-empty")
    es, ea = expert.flat()
    us, ua = union.flat()
    net = TrainedDiscriminator.init(kind, num_states, num_actions, cfg.hidden, cfg.seed)
    pos = net.encode(es, ea if kind == STATE_ACTION else None)
    neg = net.encode(us, ua if kind == STATE_ACTION else None)
    return train_discriminator(net, pos, neg, cfg, obj)


def fit_state_discriminator(
    expert: Dataset, union: Dataset, cfg: TrainConfig, num_states: int, num_actions: int
) -> TrainedDiscriminator:
    """Train ``d`` to maximize ``E_{D_e}[log d(s)] + E_{D_u}[log(1 - d(s))]``."""
    return _fit(STATE, expert, union, cfg, num_states, num_actions)


def fit_state_action_discriminator(
    expert: Dataset, union: Dataset, cfg: TrainConfig, num_states: int, num_actions: int
) -> TrainedDiscriminator:
    """Train ``D`` to maximize ``E_{D_e}[log D(s,a)] + E_{D_u}[log(1 - D(s,a))]``."""
    return _fit(STATE_ACTION, expert, union, cfg, num_states, num_actions)


def fit_dwbc_discriminator(
    expert: Dataset, imperfect: Dataset, cfg: TrainConfig, num_states: int, num_actions: int, eta: float
) -> TrainedDiscriminator:
    """State-action discriminator for the DWBC baseline (expert vs. imperfect, eta-scaled)."""
    obj = Objective(w_pos=1.0, w_neg=1.0 / eta, w_pos_neg=1.0)
    return _fit(STATE_ACTION, expert, imperfect, cfg, num_states, num_actions, obj)


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

def numerical_gradient(net: TrainedDiscriminator, pos_idx, neg_idx, step: float = 1e-5,
                       obj: Objective = GAN_OBJECTIVE) -> np.ndarray:
    """Central finite differences of the objective; restores the parameters."""
    theta = net.get_params()
    grad = np.zeros_like(theta)
    probe = theta.copy()
    for i in range(theta.size):
        probe[i] = theta[i] + step
        net.set_params(probe)
        up = net.objective(pos_idx, neg_idx, obj)
        probe[i] = theta[i] - step
        net.set_params(probe)
        down = net.objective(pos_idx, neg_idx, obj)
        probe[i] = theta[i]
        grad[i] = (up - down) / (2 * step)
    net.set_params(theta)
    return grad


def gradient_check(net: TrainedDiscriminator, batch, step: float = 1e-5, floor: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``batch`` is a ``(pos_idx, neg_idx)`` pair of encoded inputs. The relative
    error of each coordinate is ``|g_a - g_n| / max(|g_a| + |g_n|, floor)``;
    the floor keeps exactly-zero gradients (inputs absent from the batch)
    from turning round-off into large relative errors.
    """
    pos_idx, neg_idx = batch
    _, analytic = net.objective_grad(pos_idx, neg_idx)
    numeric = numerical_gradient(net, pos_idx, neg_idx, step)
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))
