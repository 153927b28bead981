from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ilid.datasets import dataset_from_pairs, empirical_marginals, union_dataset
from ilid.discriminators import (
    DEFAULT_CLIP,
    GAN_OBJECTIVE,
    CONTINUOUS_CONTROL_LEARNING_RATE,
    STATE,
    STATE_ACTION,
    Adam,
    TrainConfig,
    TrainedDiscriminator,
    exact_dwbc_discriminator,
    exact_state_action_discriminator,
    exact_state_discriminator,
    fit_state_action_discriminator,
    fit_state_discriminator,
    gradient_check,
    numerical_gradient,
)

from conftest import random_dataset


def _tables(expert_pairs, imperfect_pairs, S, A):
    e = dataset_from_pairs(expert_pairs, "expert")
    u = union_dataset(e, dataset_from_pairs(imperfect_pairs, "imperfect"))
    return e, u, empirical_marginals(e, S, A), empirical_marginals(u, S, A)


# --- exact backend ----------------------------------------------------------------

def test_exact_zero_half_and_hand_ratio():
    # expert: states 0,0 ; imperfect: states 1, 2, 2, 2 (actions irrelevant)
    _, _, ce, cu = _tables([([0, 0], [0, 0])], [([1, 2, 2, 2], [0, 0, 0, 0])], 3, 1)
    d = exact_state_discriminator(ce, cu)
    assert d.ratio(1) == 0
    # D_e(0) = 1, D_u(0) = 2/6
    assert d.ratio(0) == Fraction(1) / (1 + Fraction(1, 3))


def test_exact_equal_marginals_give_half():
    # expert == union when the imperfect set mirrors the expert set
    _, _, ce, cu = _tables([([0, 1], [0, 1])], [([0, 1], [0, 1])], 2, 2)
    d = exact_state_discriminator(ce, cu)
    assert d.ratio(0) == Fraction(1, 2) and d(0) == 0.5
    D = exact_state_action_discriminator(ce, cu)
    assert D.ratio(1, 1) == Fraction(1, 2)


def test_exact_five_sevenths():
    # state 1: D_e = 1/2 (1 of 2 expert steps), D_u = 1/5 (2 of 10 union steps)
    e_pairs = [([0, 1], [0, 0])]
    b_pairs = [([2, 2, 2, 2, 2, 2, 2, 1], [0] * 8)]
    _, _, ce, cu = _tables(e_pairs, b_pairs, 3, 1)
    assert ce.state_marginal(1) == Fraction(1, 2) and cu.state_marginal(1) == Fraction(1, 5)
    assert exact_state_discriminator(ce, cu).ratio(1) == Fraction(5, 7)


def test_exact_undefined_input_raises():
    _, _, ce, cu = _tables([([0], [0])], [([1], [0])], 3, 1)
    d = exact_state_discriminator(ce, cu)
    with pytest.raises(ValueError):
        d.ratio(2)
    with pytest.raises(ValueError):
        d(np.array([0, 2]))
    assert np.isnan(d.table()[2])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_exact_matches_hand_counts(seed):
    rng = np.random.default_rng(seed)
    S, A = 5, 3
    e = random_dataset(rng, "expert", 3, 6, S, A)
    b = random_dataset(rng, "imperfect", 6, 6, S, A)
    u = union_dataset(e, b)
    ce, cu = empirical_marginals(e, S, A), empirical_marginals(u, S, A)
    d, D = exact_state_discriminator(ce, cu), exact_state_action_discriminator(ce, cu)
    es, ea = e.flat()
    us, ua = u.flat()
    for s in set(us.tolist()):
        pe = Fraction(int((es == s).sum()), es.size)
        pu = Fraction(int((us == s).sum()), us.size)
        assert d.ratio(s) == pe / (pe + pu)
        assert d(s) == pytest.approx(float(pe / (pe + pu)), abs=1e-15)
        for a in range(A):
            pu_sa = Fraction(int(((us == s) & (ua == a)).sum()), us.size)
            if pu_sa:
                pe_sa = Fraction(int(((es == s) & (ea == a)).sum()), es.size)
                assert D.ratio(s, a) == pe_sa / (pe_sa + pu_sa)


def test_exact_outputs_lie_in_unit_interval():
    rng = np.random.default_rng(0)
    e = random_dataset(rng, "expert", 4, 8, 6, 2)
    u = union_dataset(e, random_dataset(rng, "imperfect", 20, 8, 6, 2))
    d = exact_state_discriminator(empirical_marginals(e, 6, 2), empirical_marginals(u, 6, 2))
    vals = d.table()
    vals = vals[~np.isnan(vals)]
    assert np.all((vals >= 0) & (vals < 1))


def test_dwbc_table_maximizes_its_objective():
    rng = np.random.default_rng(3)
    S, A, eta = 4, 2, 0.5
    e = random_dataset(rng, "expert", 3, 6, S, A)
    b = random_dataset(rng, "imperfect", 10, 6, S, A)
    ce, cb = empirical_marginals(e, S, A), empirical_marginals(b, S, A)
    table = exact_dwbc_discriminator(ce, cb, eta, clip=(1e-9, 1 - 1e-9)).values
    grid = np.linspace(1e-4, 1 - 1e-4, 9999)
    pe, pb = ce.pair_marginals(), cb.pair_marginals()
    for s in range(S):
        for a in range(A):
            if pe[s, a] == 0 and pb[s, a] == 0:
                continue
            f = pe[s, a] * np.log(grid) + (pb[s, a] / eta - pe[s, a]) * np.log1p(-grid)
            best = grid[np.argmax(f)]
            assert table[s, a] == pytest.approx(best, abs=2e-4) or (best > 0.999 and table[s, a] > 0.999)


# --- trained backend --------------------------------------------------------------

def test_architecture_and_parameter_count():
    net = TrainedDiscriminator.init(STATE_ACTION, 7, 3, hidden=256, seed=0)
    assert net.w1.shape == (21, 256) and net.w2.shape == (256, 1)
    assert net.num_params == 21 * 256 + 256 + 256 + 1 == net.get_params().size
    raw = net.raw(np.arange(7).repeat(3), np.tile(np.arange(3), 7))
    assert np.all((raw > 0) & (raw < 1))
    clipped = net(np.arange(7).repeat(3), np.tile(np.arange(3), 7))
    assert np.all((clipped >= 0.1) & (clipped <= 0.9))


def test_default_hyperparameters():
    assert DEFAULT_CLIP == (0.1, 0.9)
    assert CONTINUOUS_CONTROL_LEARNING_RATE == 1e-5
    cfg = TrainConfig()
    assert cfg.batch_size == 256 and cfg.hidden == 256 and cfg.learning_rate == 1e-3
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)


def test_kind_checks_inputs():
    net = TrainedDiscriminator.init(STATE, 4, 2, hidden=8)
    with pytest.raises(TypeError):
        net(0, 1)
    with pytest.raises(TypeError):
        TrainedDiscriminator.init(STATE_ACTION, 4, 2, hidden=8)(0)


def _skewed_data(rng, S, A, n_e, n_b, pe, pb):
    def sample(p, n, role):
        s = rng.choice(S, size=n, p=p)
        a = rng.integers(0, A, n)
        return dataset_from_pairs([(s[i:i + 10].tolist(), a[i:i + 10].tolist()) for i in range(0, n, 10)], role)

    e = sample(pe, n_e, "expert")
    return e, union_dataset(e, sample(pb, n_b, "imperfect"))


def test_trained_state_discriminator_matches_exact_on_busy_states():
    rng = np.random.default_rng(0)
    S, A = 8, 3
    e, u = _skewed_data(rng, S, A, 1000, 3000, rng.dirichlet(np.full(S, 0.5)), rng.dirichlet(np.ones(S)))
    ce, cu = empirical_marginals(e, S, A), empirical_marginals(u, S, A)
    net = fit_state_discriminator(e, u, TrainConfig(steps=3000, seed=0), S, A)
    busy = np.flatnonzero(cu.state_counts >= 50)
    exact = np.clip(exact_state_discriminator(ce, cu)(busy), *DEFAULT_CLIP)
    assert np.max(np.abs(net(busy) - exact)) <= 0.05
    assert net.history and np.isfinite(net.history[-1][1])


def test_trained_saturates_at_clip_bounds():
    # state 0 only in the expert data and rare in the union; state 1 only in D_b
    S, A = 3, 2
    e = dataset_from_pairs([([0] * 10, [0] * 10)] * 5, "expert")
    b = dataset_from_pairs([([1] * 10, [1] * 10)] * 200 + [([2] * 10, [0] * 10)] * 200, "imperfect")
    u = union_dataset(e, b)
    d = fit_state_discriminator(e, u, TrainConfig(steps=800, seed=1, hidden=32), S, A)
    assert d(0) == pytest.approx(0.9) and d(1) == pytest.approx(0.1)
    D = fit_state_action_discriminator(e, u, TrainConfig(steps=800, seed=1, hidden=32), S, A)
    assert D(0, 0) == pytest.approx(0.9) and D(1, 1) == pytest.approx(0.1)


def test_trained_round_trip(tmp_path):
    net = TrainedDiscriminator.init(STATE_ACTION, 5, 2, hidden=16, seed=4)
    net.save(tmp_path / "d.json")
    again = TrainedDiscriminator.load(tmp_path / "d.json")
    assert np.array_equal(again.get_params(), net.get_params())
    assert again.clip == net.clip and again.kind == STATE_ACTION
    x = np.arange(5)
    assert np.array_equal(again(x, x % 2), net(x, x % 2))


def test_adam_first_step_moves_by_learning_rate():
    opt = Adam(3, lr=0.01)
    params = opt.step(np.zeros(3), np.array([2.0, -0.5, 1e-3]))
    # bias-corrected first step is lr * sign(g), ascending
    assert np.allclose(params, [0.01, -0.01, 0.01], atol=1e-6)


# --- gradient checks -----------------------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_gradient_check_fresh_network(seed):
    rng = np.random.default_rng(seed)
    kind = (STATE, STATE_ACTION)[seed % 2]
    S, A = int(rng.integers(2, 6)), int(rng.integers(1, 4))
    net = TrainedDiscriminator.init(kind, S, A, hidden=int(rng.integers(2, 12)), seed=seed)
    n_in = net.input_dim
    batch = (rng.integers(0, n_in, 7), rng.integers(0, n_in, 7))
    assert gradient_check(net, batch) <= 1e-4


def test_zero_network_bias_gradient():
    net = TrainedDiscriminator.init(STATE, 3, 1, hidden=4, seed=0)
    net.set_params(np.zeros(net.num_params))
    batch = (np.array([0, 1, 2]), np.array([0, 1, 2]))
    _, g = net.objective_grad(*batch)
    num = numerical_gradient(net, *batch)
    assert abs(g[-1] - num[-1]) <= 1e-6
    # symmetric batch at d = 1/2 balances the two terms
    assert abs(g[-1]) <= 1e-12


def test_objective_increases_along_gradient():
    rng = np.random.default_rng(2)
    net = TrainedDiscriminator.init(STATE, 6, 1, hidden=10, seed=2)
    pos, neg = rng.integers(0, 6, 20), rng.integers(0, 6, 20)
    j0, g = net.objective_grad(pos, neg)
    theta = net.get_params()
    net.set_params(theta + 1e-4 * g)
    assert net.objective(pos, neg) > j0
    assert net.objective(pos, neg, GAN_OBJECTIVE) > j0
