import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from equistop import (ChainModel, ConfigError, MixedProfile, RewardSpec, StoppingSet,
                      TooManyStates, absorbed_walk, chain_value, check_pure_equilibrium,
                      enumerate_pure_equilibria, four_state_chain, mixed_value,
                      randomized_value, simulate_chain_value, verify_mixed_equilibrium)
from equistop.problems import A, B

from suites import random_chain, random_table_reward

D1_, A_, B_, D2_ = 0, 1, 2, 3


@pytest.fixture(scope="module")
def game():
    return four_state_chain()


def test_continue_value_for_agent_a(game):
    chain, rw = game
    # continue at a, stop at b: 1/2 * F(d1, a) + 1/2 * F(b, a)
    V = chain_value(chain, StoppingSet.from_indices(4, [D1_, B_, D2_]), rw, A)
    assert abs(V[A_] - 1.5) <= 1e-12


def test_never_stop_value_for_agent_b(game):
    chain, rw = game
    # V(b) = V(a)/2 and V(a) = 4/2 + V(b)/2 give 4/3
    V = chain_value(chain, StoppingSet.from_indices(4, [D1_, D2_]), rw, B)
    assert abs(V[B_] - 4.0 / 3.0) <= 1e-12


def test_stop_everywhere_returns_reward(game):
    chain, rw = game
    for agent in chain.states:
        V = chain_value(chain, StoppingSet.full(4), rw, agent)
        np.testing.assert_array_equal(V, rw.column(chain.states, agent))


@pytest.mark.parametrize("members", [[0, 1, 2, 3], [0, 1, 3], [0, 2, 3], [0, 3]])
def test_no_pure_set_is_an_equilibrium(game, members):
    chain, rw = game
    assert not check_pure_equilibrium(chain, StoppingSet.from_indices(4, members), rw).passed


def test_enumeration_of_game_is_empty(game):
    assert enumerate_pure_equilibria(*game) == []


def test_absorbing_states_must_be_in_stop_set(game):
    chain, rw = game
    with pytest.raises(ValueError):
        check_pure_equilibrium(chain, StoppingSet.from_indices(4, [0, 1]), rw)


def test_walk_with_five_interior_nodes_has_both_equilibria():
    chain, rw = absorbed_walk(7)
    found = [S.indices.tolist() for S in enumerate_pure_equilibria(chain, rw)]
    assert [0, 6] in found and list(range(7)) in found


def test_walk_check_discriminates_at_exact_tolerance():
    chain, rw = absorbed_walk(101)
    ends = [0, 100]
    assert check_pure_equilibrium(chain, StoppingSet.from_indices(101, ends), rw, 1e-9).passed
    assert check_pure_equilibrium(chain, StoppingSet.full(101), rw, 1e-9).passed
    bad = check_pure_equilibrium(chain, StoppingSet.from_indices(101, ends + [50]), rw, 1e-9)
    assert not bad.passed and bad.cond2_violation > 1e-3


def test_boundary_layer_gain_is_reported():
    chain, rw = absorbed_walk(101)
    rep = check_pure_equilibrium(chain, StoppingSet.full(101), rw)
    assert rep.extras["boundary_layer_gain"] == pytest.approx(0.495, abs=1e-12)


def test_single_absorbing_state():
    chain = ChainModel([0.0], [[1.0]], absorbing=[0])
    rw = RewardSpec(lambda x, y: 1.0 + 0 * x, 0.0)
    assert [S.indices.tolist() for S in enumerate_pure_equilibria(chain, rw)] == [[0]]


def test_enumeration_cap():
    chain, rw = absorbed_walk(27)
    with pytest.raises(TooManyStates):
        enumerate_pure_equilibria(chain, rw)


def test_mixed_values_at_the_equilibrium():
    prof = MixedProfile(0.2, 0.6)
    assert abs(mixed_value(prof, "a") - 1.0) <= 1e-12
    assert abs(mixed_value(prof, "b") - 1.0) <= 1e-12
    for t in np.linspace(0, 1, 101):
        assert abs(mixed_value(MixedProfile(float(t), 0.6), "a") - 1.0) <= 1e-12
        assert abs(mixed_value(MixedProfile(0.2, float(t)), "b") - 1.0) <= 1e-12


def test_mixed_values_at_corners():
    for q in np.linspace(0, 1, 11):
        assert mixed_value(MixedProfile(1.0, float(q)), "a") == pytest.approx(1.0, abs=1e-15)
    # never stopping: agent a ends at an absorbing state with reward 0
    assert mixed_value(MixedProfile(0.0, 0.0), "a") == 0.0
    assert mixed_value(MixedProfile(0.0, 0.0), "b") == pytest.approx(4.0 / 3.0, abs=1e-15)
    assert mixed_value(MixedProfile(0.0, 1.0), "a") == pytest.approx(1.5, abs=1e-15)


def test_mixed_value_matches_randomized_chain_oracle(game):
    chain, rw = game
    for p in np.linspace(0, 1, 6):
        for q in np.linspace(0, 1, 6):
            prof = MixedProfile(float(p), float(q))
            stop = [1.0, p, q, 1.0]
            assert mixed_value(prof, "a") == pytest.approx(
                randomized_value(chain, stop, rw, A)[A_], abs=1e-12)
            assert mixed_value(prof, "b") == pytest.approx(
                randomized_value(chain, stop, rw, B)[B_], abs=1e-12)


def test_verify_mixed():
    ok, gain = verify_mixed_equilibrium(MixedProfile(0.2, 0.6), 101)
    assert ok and gain <= 1e-12
    ok, gain = verify_mixed_equilibrium(MixedProfile(0.0, 0.0))
    assert not ok and gain == pytest.approx(1.0)  # agent a gains by stopping
    ok, gain = verify_mixed_equilibrium(MixedProfile(1.0, 1.0))
    assert not ok and gain == pytest.approx(0.5)  # agent a gains by p = 0
    with pytest.raises(ConfigError):
        MixedProfile(1.2, 0.0)


def test_chain_value_against_simulation(game):
    chain, rw = game
    S = StoppingSet.from_indices(4, [D1_, D2_])
    exact = chain_value(chain, S, rw, B)[B_]
    est, se = simulate_chain_value(chain, S, rw, B, B_, paths=100_000, seed=3)
    assert abs(est - exact) <= 4 * se


@pytest.mark.parametrize("seed", range(4))
def test_random_chain_value_against_simulation(seed):
    rng = np.random.default_rng(100 + seed)
    n = 8
    chain = random_chain(rng, n, 2)
    rw = random_table_reward(rng, n, 0.1)
    S = StoppingSet(chain.absorbing | (rng.random(n) < 0.3))
    agent = float(rng.integers(n))
    V = chain_value(chain, S, rw, agent)
    start = int(np.flatnonzero(~S.mask)[0]) if (~S.mask).any() else 0
    est, se = simulate_chain_value(chain, S, rw, agent, start, paths=100_000, seed=seed)
    assert abs(est - V[start]) <= 4 * se + 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 2.0))
def test_chain_value_is_monotone_in_reward(seed, shift):
    rng = np.random.default_rng(seed)
    n = 7
    chain = random_chain(rng, n, 2)
    table = rng.normal(size=(n, n))
    bump = rng.random((n, n)) * shift
    labels = np.arange(n, dtype=float)
    F = RewardSpec.from_table(labels, table, 0.05)
    G = RewardSpec.from_table(labels, table + bump, 0.05)
    S = StoppingSet(chain.absorbing | (rng.random(n) < 0.4))
    agent = float(rng.integers(n))
    assert np.all(chain_value(chain, S, G, agent) >= chain_value(chain, S, F, agent) - 1e-12)
