import numpy as np
import pytest

from equistop import (ChainModel, ConfigError, DiffusionModel, Grid, NonPositiveVolatility,
                      RewardSpec, StoppingSet, TwoArgFunction, make_chain_from_diffusion)


def test_wiener_three_nodes_is_symmetric_with_dt_h2():
    chain = make_chain_from_diffusion(DiffusionModel.wiener((0.0, 1.0)), Grid(0.0, 1.0, 3))
    P = chain.P.toarray()
    assert P[1, 0] == pytest.approx(0.5) and P[1, 2] == pytest.approx(0.5)
    assert chain.dt[1] == pytest.approx(0.25)


def test_absorbing_ends_are_identity_rows():
    model = DiffusionModel.wiener((0.0, 1.0), boundary=("absorbing", "absorbing"))
    chain = make_chain_from_diffusion(model, Grid(0.0, 1.0, 11))
    P = chain.P.toarray()
    assert P[0, 0] == 1.0 and P[-1, -1] == 1.0
    assert chain.absorbing.tolist() == [True] + [False] * 9 + [True]


def test_truncation_ends_reflect_and_are_flagged():
    chain = make_chain_from_diffusion(DiffusionModel.wiener((0.0, 1.0)), Grid(0.0, 1.0, 11))
    P = chain.P.toarray()
    assert P[0, 1] == 1.0 and P[-1, -2] == 1.0
    assert chain.origin["reflecting"] == [0, 10]
    assert not chain.absorbing.any()


def test_gbm_chain_probabilities_and_time_steps():
    sigma = 0.4
    grid = Grid(0.1, 10.0, 200)
    chain = make_chain_from_diffusion(DiffusionModel.gbm((0.1, 10.0), sigma), grid)
    P = chain.P.toarray()
    x = grid.nodes
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-14)
    np.testing.assert_allclose(np.diag(P, 1)[1:], 0.5)
    np.testing.assert_allclose(np.diag(P, -1)[:-1], 0.5)
    np.testing.assert_allclose(chain.dt[1:-1], grid.h ** 2 / (sigma * x[1:-1]) ** 2)


def test_upwinded_drift_probabilities():
    mu, h = 2.0, 0.1
    chain = make_chain_from_diffusion(DiffusionModel.wiener((0.0, 1.0), mu=mu),
                                      Grid(0.0, 1.0, 11))
    P = chain.P.toarray()
    assert P[5, 6] == pytest.approx((0.5 + h * mu) / (1 + h * mu))
    assert chain.dt[5] == pytest.approx(h * h / (1 + h * mu))


def test_non_positive_volatility_rejected():
    with pytest.raises(NonPositiveVolatility):
        DiffusionModel.wiener((0.0, 1.0), sigma=0.0)


def test_chain_validation():
    with pytest.raises(ConfigError):
        ChainModel([0, 1], [[0.5, 0.4], [0, 1]])
    with pytest.raises(ConfigError):
        ChainModel([0, 1], [[0.5, 0.5], [0.5, 0.5]], absorbing=[1])
    with pytest.raises(ConfigError):
        RewardSpec(lambda x, y: x, -0.1)
    with pytest.raises(ConfigError):
        Grid(1.0, 0.0, 5)


def test_reward_matrix_and_agent_classes():
    rw = RewardSpec(lambda x, y: x * (y > 0), 0.1)
    states = np.array([-1.0, 0.5, 1.0, 2.0])
    M = rw.matrix(states)
    assert M[3, 1] == 2.0 and M[3, 0] == 0.0
    cols, agent_col = rw.agent_classes(states)
    assert cols.shape[1] == 2
    np.testing.assert_array_equal(cols[:, agent_col], M)


def test_reward_table_is_agent_major():
    rw = RewardSpec.from_table([0.0, 1.0], [[1.0, 2.0], [3.0, 4.0]], 0.0)
    assert rw(1.0, 0.0) == 2.0
    assert rw(0.0, 1.0) == 3.0
    with pytest.raises(ConfigError):
        rw(0.5, 0.0)


def test_stopping_set_runs_and_intervals():
    S = StoppingSet.from_indices(8, [0, 1, 4, 5, 6])
    assert S.runs() == [(0, 1), (4, 6)]
    assert S.intervals(np.arange(8) * 2.0) == [(0.0, 2.0), (8.0, 12.0)]
    assert S.issubset(StoppingSet.full(8)) and not StoppingSet.full(8).issubset(S)


def test_two_arg_function_diag_and_dense():
    cols = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    f = TwoArgFunction(cols, np.array([0, 1, 1]))
    np.testing.assert_array_equal(f.diag(), [1.0, 4.0, 6.0])
    assert f.dense().shape == (3, 3)
