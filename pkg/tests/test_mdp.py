import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from ropeval.contamination import RewardChannel
from ropeval.errors import ConstructionError, OracleError
from ropeval.mdp import (
    FROZEN_LAKE_8X8,
    MdpSpec,
    QLearningConfig,
    bellman_values,
    gridworld_8x8,
    lake_dynamics,
    lake_start,
    random_mdp,
    sample_stream,
    stationary_distribution,
    target_vector,
    td_matrices,
    true_theta,
    true_value,
    two_state_chain,
)


@pytest.fixture(scope="module")
def lake():
    return gridworld_8x8(0, q_config=QLearningConfig(episodes=20_000))


def test_spec_validation():
    with pytest.raises(ValueError):
        MdpSpec(2, [[0.5, 0.6], [0.5, 0.5]], [0, 0], [[1.0], [0.0]], 0.5)
    with pytest.raises(ValueError):
        MdpSpec(2, [[0.5, 0.5], [0.5, 0.5]], [0, 0], [[1.0, 2.0], [1.0, 2.0]], 0.5)
    with pytest.raises(ValueError):
        MdpSpec(2, [[0.5, 0.5], [0.5, 0.5]], [0, 0], [[1.0], [0.0]], 1.0)
    spec = two_state_chain()
    with pytest.raises(ValueError):
        spec.p[0, 0] = 1.0


def test_random_mdp_postconditions():
    spec = random_mdp(3)
    np.testing.assert_allclose(spec.p.sum(axis=1), 1.0, atol=1e-12)
    assert np.linalg.matrix_rank(spec.phi) == 10 and spec.d == 10 and spec.n_states == 50
    assert random_mdp(3) == spec
    assert random_mdp(4) != spec


def test_random_mdp_rewards_back_out_target():
    spec = random_mdp(5, n_states=20, d=20)
    J = bellman_values(spec)
    assert (J >= -1e-10).all() and (J <= 1 + 1e-10).all()
    # tabular-rank features reproduce J exactly
    np.testing.assert_allclose(spec.phi @ true_theta(spec), J, atol=1e-10)


def test_feature_scale():
    spec = random_mdp(2)
    np.testing.assert_allclose(spec.phi.T @ spec.phi, 5.0 * np.eye(10), atol=1e-10)


def test_random_mdp_oracle_residual():
    spec = random_mdp(1)
    theta = true_theta(spec)
    H, c = td_matrices(spec)
    assert np.isfinite(theta).all()
    assert np.linalg.norm(H @ theta - c) <= 1e-10


def test_stationary_examples():
    np.testing.assert_allclose(stationary_distribution(np.array([[0.5, 0.5], [0.5, 0.5]])), [0.5, 0.5])
    np.testing.assert_allclose(stationary_distribution(np.array([[0.9, 0.1], [0.5, 0.5]])), [5 / 6, 1 / 6],
                               atol=1e-12)
    with pytest.raises(OracleError):
        stationary_distribution(np.eye(2))


def test_stationary_nonconvergence():
    P = np.array([[0.999, 0.001], [0.5, 0.5]])
    with pytest.raises(OracleError):
        stationary_distribution(P, max_iter=3)


def test_stationary_is_invariant():
    spec = random_mdp(8)
    mu = stationary_distribution(spec)
    assert (mu >= 0).all() and mu.sum() == pytest.approx(1.0)
    assert np.abs(mu @ spec.p - mu).sum() <= 1e-10


def test_two_state_oracle():
    spec = two_state_chain()
    assert true_theta(spec)[0] == pytest.approx(4 / 3, abs=1e-12)
    assert true_value(spec, 0) == pytest.approx(4 / 3, abs=1e-12)
    assert true_value(spec, 1) == 0.0
    np.testing.assert_array_equal(target_vector(spec, 0), [1.0])


def test_tabular_matches_bellman(rng):
    N = 12
    P = rng.random((N, N))
    P /= P.sum(axis=1, keepdims=True)
    r = rng.standard_normal(N)
    spec = MdpSpec(N, P, r, np.eye(N), 0.8)
    J = np.linalg.solve(np.eye(N) - 0.8 * P, r)
    np.testing.assert_allclose(spec.phi @ true_theta(spec), J, atol=1e-10)
    assert true_value(spec, 3) == pytest.approx(J[3], abs=1e-10)


def test_gamma_zero_is_weighted_least_squares(rng):
    spec = random_mdp(4, gamma=0.0)
    mu = stationary_distribution(spec)
    D = np.diag(mu)
    ref = np.linalg.solve(spec.phi.T @ D @ spec.phi, spec.phi.T @ D @ spec.r)
    np.testing.assert_allclose(true_theta(spec), ref, atol=1e-10)


def test_singular_oracle():
    spec = MdpSpec(2, [[0.5, 0.5], [0.5, 0.5]], [1.0, 0.0], [[1.0, 1.0], [1.0, 1.0 + 1e-13]], 0.5)
    with pytest.raises(OracleError):
        true_theta(spec)


def test_json_round_trip(tmp_path):
    spec = random_mdp(6, n_states=10, d=3)
    path = tmp_path / "env.json"
    spec.save_json(path)
    assert MdpSpec.load_json(path) == spec
    assert MdpSpec.from_dict(spec.to_dict()) == spec


def test_stream_determinism_and_shapes():
    spec = random_mdp(1)
    X, Z, B, f = sample_stream(spec, 42).take(500)
    X2, Z2, B2, _ = sample_stream(spec, 42).take(500)
    assert X.shape == Z.shape == (500, 10) and B.shape == (500,)
    np.testing.assert_array_equal(X, X2)
    np.testing.assert_array_equal(B, B2)
    assert not f.any()


def test_stream_chunks_concatenate():
    spec = random_mdp(1)
    s = sample_stream(spec, 7, channel=RewardChannel("normal", seed=3))
    a = [s.take(m) for m in (10, 250, 1)]
    X, Z, B, _ = sample_stream(spec, 7, channel=RewardChannel("normal", seed=3)).take(261)
    np.testing.assert_array_equal(np.concatenate([t[0] for t in a]), X)
    np.testing.assert_array_equal(np.concatenate([t[2] for t in a]), B)
    np.testing.assert_array_equal(np.concatenate([t[1] for t in a]), Z)


def test_stream_observation_structure():
    spec = random_mdp(2, gamma=0.7)
    stream = sample_stream(spec, 1)
    s = stream.states(200)
    X, Z, B, _ = sample_stream(spec, 1).take(200)
    np.testing.assert_array_equal(X, spec.phi[s[:-1]])
    np.testing.assert_allclose(Z, spec.phi[s[:-1]] - 0.7 * spec.phi[s[1:]])
    np.testing.assert_array_equal(B, spec.r[s[:-1]])
    obs = next(iter(sample_stream(spec, 1)))
    np.testing.assert_array_equal(obs.x, X[0])


def test_gamma_zero_z_equals_x():
    X, Z, _, _ = sample_stream(random_mdp(1, gamma=0.0), 3).take(100)
    np.testing.assert_array_equal(X, Z)


def test_transition_frequencies():
    spec = random_mdp(9, n_states=5, d=2)
    s = sample_stream(spec, 0).states(100_000)
    counts = np.zeros((5, 5))
    np.add.at(counts, (s[:-1], s[1:]), 1)
    for i in range(5):
        expected = spec.p[i] * counts[i].sum()
        assert stats.chisquare(counts[i], expected).pvalue > 0.001


def test_empirical_frequencies_and_information():
    spec = random_mdp(1)
    mu = stationary_distribution(spec)
    H, _ = td_matrices(spec)
    good_tv = good_h = 0
    for seed in range(10):
        stream = sample_stream(spec, seed)
        X, Z, _, _ = stream.take(100_000)
        s = sample_stream(spec, seed).states(100_000)[:-1]
        freq = np.bincount(s, minlength=50) / s.size
        good_tv += 0.5 * np.abs(freq - mu).sum() <= 0.02
        good_h += np.linalg.norm(X.T @ Z / X.shape[0] - H, 2) <= 0.05
    assert good_tv >= 9 and good_h >= 9


@given(st.integers(0, 2**31))
def test_oracle_residual_property(seed):
    spec = random_mdp(seed, n_states=15, n_actions=3, d=4)
    H, c = td_matrices(spec)
    assert np.linalg.norm(H @ true_theta(spec) - c) <= 1e-10


# gridworld -------------------------------------------------------------------

def test_lake_dynamics():
    T, terminal, goal, start = lake_dynamics()
    np.testing.assert_allclose(T.sum(axis=2), 1.0)
    assert start == 0 == lake_start() and goal[63] and goal.sum() == 1
    assert terminal.sum() == 1 + "".join(FROZEN_LAKE_8X8).count("H")
    T0, *_ = lake_dynamics(slip=0.0)
    assert T0[0, 2, 1] == 1.0  # move right from the start


def test_gridworld_postconditions(lake):
    assert lake.n_states == 64 and lake.d == 4 and lake.gamma == 0.95
    r = lake.r
    assert r[63] == 1.0 and r.sum() == 1.0
    mu = stationary_distribution(lake)
    assert mu[63] > 0  # the goal is reached under the learned policy
    # every terminal tile restarts at the start tile
    _, terminal, _, start = lake_dynamics()
    assert (lake.p[terminal, start] == 1.0).all()


def test_gridworld_deterministic(lake):
    again = gridworld_8x8(0, q_config=QLearningConfig(episodes=20_000))
    assert again == lake


def test_gridworld_policy_without_goal():
    # always pressing "left" never leaves the first column's top tile
    with pytest.raises(ConstructionError):
        gridworld_8x8(0, policy=np.zeros(64, dtype=int), slip=0.0)


def test_gridworld_given_policy_epsilon():
    policy = np.full(64, 2)
    spec = gridworld_8x8(1, policy=policy, slip=0.0, policy_epsilon=0.2)
    np.testing.assert_allclose(spec.p.sum(axis=1), 1.0, atol=1e-12)
    assert np.isfinite(true_theta(spec)).all()
