from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ilid.datasets import (
    dataset_from_pairs,
    empirical_marginals,
    generate_expert_data,
    generate_imperfect_data,
    union_dataset,
)
from ilid.discriminators import exact_state_discriminator
from ilid.mdp import value_iteration
from ilid.selection import (
    SelectedPair,
    SelectionConfig,
    build_complementary_dataset,
    full_imperfect_pairs,
    identify_expert_states,
    read_pairs_csv,
    selection_report,
    write_pairs_csv,
)

from conftest import random_dataset


class TableD:
    """State discriminator backed by a lookup table."""

    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)

    def __call__(self, states):
        return self.values[np.asarray(states)]


def brute_force(imperfect, d_values, sigma, K, strict=False):
    out = Counter()
    for i, traj in enumerate(imperfect):
        for h in range(1, len(traj)):
            v = d_values[traj.states[h]]
            if (v > sigma) if strict else (v >= sigma):
                for k in range(1, K + 1):
                    if h - k >= 0:
                        out[(k, traj.states[h - k], traj.actions[h - k], (i, h - k))] += 1
    return out


def as_multiset(pairs):
    return Counter((p.k, p.state, p.action, p.source) for p in pairs)


def test_config_defaults_and_validation():
    cfg = SelectionConfig()
    assert cfg.sigma == 0.2 and cfg.rollback_k == 20 and cfg.comparison == ">="
    for bad in (dict(sigma=0.0), dict(sigma=1.0), dict(rollback_k=0), dict(comparison="<")):
        with pytest.raises(ValueError):
            SelectionConfig(**bad)


def test_selected_pair_invariants():
    with pytest.raises(ValueError):
        SelectedPair(0, 1, 1, (0, 0))
    with pytest.raises(ValueError):
        SelectedPair(1, 1, 1, (0, -1))


def test_threshold_inclusion_and_exclusion():
    data = dataset_from_pairs([([0, 0, 0, 1, 2], [0] * 5)], "imperfect")
    d = TableD([0.0, 0.5, 0.15])
    # 0-based step 3 is the 4th position (1-based h = 4 > 1)
    assert identify_expert_states(d, data, 0.2) == {(0, 3)}


def test_first_position_never_an_anchor():
    data = dataset_from_pairs([([1, 0, 0], [0] * 3)], "imperfect")
    assert identify_expert_states(TableD([0.0, 0.9]), data, 0.2) == set()


def test_boundary_uses_configured_comparison():
    data = dataset_from_pairs([([0, 1], [0, 0])], "imperfect")
    d = TableD([0.0, 0.2])
    assert identify_expert_states(d, data, 0.2, ">=") == {(0, 1)}
    assert identify_expert_states(d, data, 0.2, ">") == set()


def test_rollback_example_k2():
    # states s1..s4 -> ids 1..4, actions a1..a3 -> ids 11..13 (anchor s4 at 1-based h=4)
    data = dataset_from_pairs([([1, 2, 3, 4], [11, 12, 13, 14])], "imperfect")
    d = TableD([0, 0, 0, 0, 1.0])
    pairs = build_complementary_dataset(data, d, SelectionConfig(rollback_k=2))
    assert [(p.k, p.state, p.action) for p in pairs] == [(1, 3, 13), (2, 2, 12)]


def test_rollback_truncated_at_trajectory_start():
    data = dataset_from_pairs([([1, 2], [11, 12])], "imperfect")
    pairs = build_complementary_dataset(data, TableD([0, 0, 1.0]), SelectionConfig(rollback_k=5))
    assert [(p.k, p.state, p.action) for p in pairs] == [(1, 1, 11)]


def test_report_counts_mk_when_anchors_are_deep():
    K = 3
    trajs = [([0] * 6 + [1], [0] * 7), ([0] * 9 + [1], [1] * 10)]
    data = dataset_from_pairs(trajs, "imperfect")
    pairs = build_complementary_dataset(data, TableD([0.0, 0.9]), SelectionConfig(rollback_k=K))
    rep = selection_report(pairs, data)
    assert rep.anchors == 2 and rep.selected == 2 * K == len(pairs)
    assert rep.coverage == pytest.approx(6 / 17)


def test_report_without_anchors():
    data = dataset_from_pairs([([0, 0, 0], [0] * 3)], "imperfect")
    pairs = build_complementary_dataset(data, TableD([0.0]))
    rep = selection_report(pairs, data)
    assert pairs == [] and rep.anchors == 0 and rep.coverage == 0.0


def test_pairs_point_at_their_source_and_anchor():
    rng = np.random.default_rng(5)
    data = random_dataset(rng, "imperfect", 15, 10, 6, 3)
    d = TableD(rng.random(6))
    for p in build_complementary_dataset(data, d, SelectionConfig(sigma=0.4, rollback_k=4)):
        i, step = p.source
        traj = data[i]
        assert (traj.states[step], traj.actions[step]) == (p.state, p.action)
        assert d.values[traj.states[step + p.k]] >= 0.4


def test_full_pairs_cover_everything():
    data = random_dataset(np.random.default_rng(1), "imperfect", 4, 5, 3, 2)
    pairs = full_imperfect_pairs(data)
    assert len(pairs) == data.num_transitions
    assert selection_report(pairs, data).coverage == 1.0


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    data = random_dataset(rng, "imperfect", 10, 8, 5, 2)
    pairs = build_complementary_dataset(data, TableD(rng.random(5)), SelectionConfig(sigma=0.3, rollback_k=3))
    write_pairs_csv(pairs, tmp_path / "sel.csv")
    assert read_pairs_csv(tmp_path / "sel.csv") == pairs
    assert (tmp_path / "sel.csv").read_text().splitlines()[0] == "k,state,action,traj,step"


def test_exact_discriminator_selection():
    e = dataset_from_pairs([([0, 1, 2], [1, 1, 1])], "expert")
    b = dataset_from_pairs([([3, 3, 0, 1], [0, 1, 1, 1]), ([3, 3, 3], [0, 0, 0])], "imperfect")
    u = union_dataset(e, b)
    d = exact_state_discriminator(empirical_marginals(e, 4, 2), empirical_marginals(u, 4, 2))
    pairs = build_complementary_dataset(b, d, SelectionConfig())
    assert {p.source for p in pairs} == {(0, 0), (0, 1), (0, 2)}


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), sigma=st.floats(0.05, 0.95), K=st.integers(1, 12),
       strict=st.booleans())
def test_matches_brute_force(seed, sigma, K, strict):
    rng = np.random.default_rng(seed)
    data = random_dataset(rng, "imperfect", int(rng.integers(1, 21)), 10, 6, 3)
    values = rng.random(6)
    cfg = SelectionConfig(sigma, K, ">" if strict else ">=")
    pairs = build_complementary_dataset(data, TableD(values), cfg)
    assert as_multiset(pairs) == brute_force(data, values, sigma, K, strict)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), k1=st.integers(1, 10), k2=st.integers(1, 10),
       s1=st.floats(0.05, 0.95), s2=st.floats(0.05, 0.95))
def test_monotone_in_k_and_sigma(seed, k1, k2, s1, s2):
    rng = np.random.default_rng(seed)
    data = random_dataset(rng, "imperfect", 10, 10, 5, 2)
    d = TableD(rng.random(5))
    lo_k, hi_k = sorted((k1, k2))
    small = as_multiset(build_complementary_dataset(data, d, SelectionConfig(0.3, lo_k)))
    large = as_multiset(build_complementary_dataset(data, d, SelectionConfig(0.3, hi_k)))
    assert not small - large
    lo_s, hi_s = sorted((s1, s2))
    assert identify_expert_states(d, data, hi_s) <= identify_expert_states(d, data, lo_s)


def _four_rooms_coverage(world, seed):
    _, expert_policy = value_iteration(world.mdp)
    e = generate_expert_data(world.mdp, expert_policy, 1, seed, start=world.starts[1])
    b = generate_imperfect_data(world.mdp, expert_policy, 500, seed + 1, epsilon=1.0)
    S = world.mdp.num_states
    d = exact_state_discriminator(empirical_marginals(e, S, 4), empirical_marginals(union_dataset(e, b), S, 4))
    return selection_report(build_complementary_dataset(b, d), b)


def test_four_rooms_coverage_is_reproducible(four_rooms):
    first = _four_rooms_coverage(four_rooms, 0)
    assert first == _four_rooms_coverage(four_rooms, 0)
    assert 0.0 < first.coverage < 1.0
