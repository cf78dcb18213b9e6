"""Finite Markov reward processes under a fixed policy, and their exact oracles.

An :class:`MdpSpec` is the policy-induced chain ``(P, r, Phi, gamma)``. From it
we can compute the stationary law, the TD fixed point ``theta*`` of the linear
approximation, and draw observation streams ``(x_i, z_i, b_i)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit
from scipy.sparse.csgraph import breadth_first_order, connected_components

from .contamination import RewardChannel
from .errors import ConstructionError, OracleError
from .estimator import Observation

_COND_LIMIT = 1e12


@dataclass(frozen=True, eq=False)
class MdpSpec:
    """Policy-induced finite chain with rewards and linear features."""

    n_states: int
    p: np.ndarray
    r: np.ndarray
    phi: np.ndarray
    gamma: float

    def __post_init__(self):
        p = np.array(self.p, dtype=float)
        r = np.array(self.r, dtype=float).reshape(-1)
        phi = np.array(self.phi, dtype=float)
        if phi.ndim == 1:
            phi = phi[:, None]
        N = int(self.n_states)
        if p.shape != (N, N) or r.shape != (N,) or phi.shape[0] != N:
            raise ValueError(f"inconsistent shapes: p{p.shape}, r{r.shape}, phi{phi.shape}, N={N}")
        if (p < 0).any() or np.abs(p.sum(axis=1) - 1.0).max() > 1e-12:
            raise ValueError("p must be row-stochastic")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if np.linalg.matrix_rank(phi) < phi.shape[1]:
            raise ValueError("feature matrix must have full column rank")
        for name, arr in (("p", p), ("r", r), ("phi", phi)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "n_states", N)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def d(self) -> int:
        return self.phi.shape[1]

    def __eq__(self, other):
        if not isinstance(other, MdpSpec):
            return NotImplemented
        return (self.n_states == other.n_states and self.gamma == other.gamma
                and np.array_equal(self.p, other.p) and np.array_equal(self.r, other.r)
                and np.array_equal(self.phi, other.phi))

    def to_dict(self) -> dict:
        return {"n_states": self.n_states, "p": self.p.tolist(), "r": self.r.tolist(),
                "phi": self.phi.tolist(), "gamma": self.gamma}

    @classmethod
    def from_dict(cls, data: dict) -> "MdpSpec":
        return cls(data["n_states"], data["p"], data["r"], data["phi"], data["gamma"])

    def save_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load_json(cls, path) -> "MdpSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def random_features(rng, n_states, d, tries=10):
    """Gaussian features with orthogonal columns of squared norm ``n_states / d``.

    The scaling makes the mean squared feature norm over states equal to 1.
    """
    for _ in range(tries):
        q, _ = np.linalg.qr(rng.standard_normal((n_states, d)))
        if np.linalg.matrix_rank(q) == d:
            return q * np.sqrt(n_states / d)
    raise ConstructionError(f"could not draw rank-{d} features in {tries} attempts")


def random_mdp(seed, n_states: int = 50, n_actions: int = 5, d: int = 10, gamma: float = 0.9) -> MdpSpec:
    """Random MDP under a random stochastic policy.

    Transition kernels and the policy are uniform draws normalised to
    probabilities; features come from :func:`random_features`. A
    target value function ``J ~ U[0, 1]^N`` is drawn and the expected rewards
    are backed out of the Bellman equation, ``r = (I - gamma P) J``.
    """
    if d > n_states:
        raise ValueError(f"need d <= n_states, got d={d}, n_states={n_states}")
    rng = np.random.default_rng(seed)
    kernels = rng.random((n_actions, n_states, n_states))
    kernels /= kernels.sum(axis=2, keepdims=True)
    policy = rng.random((n_states, n_actions))
    policy /= policy.sum(axis=1, keepdims=True)
    p = np.einsum("sa,ast->st", policy, kernels)
    p /= p.sum(axis=1, keepdims=True)
    phi = random_features(rng, n_states, d)
    j_target = rng.random(n_states)
    r = j_target - gamma * p @ j_target
    return MdpSpec(n_states, p, r, phi, gamma)


def two_state_chain(gamma: float = 0.5) -> MdpSpec:
    """Two equiprobable states, reward 1 in the first, feature ``(1, 0)``.

    With the default ``gamma`` the TD fixed point is ``theta* = 4/3``.
    """
    return MdpSpec(2, [[0.5, 0.5], [0.5, 0.5]], [1.0, 0.0], [[1.0], [0.0]], gamma)


def stationary_distribution(spec: MdpSpec, tol: float = 1e-12, max_iter: int = 1_000_000) -> np.ndarray:
    """Stationary law by power iteration from the uniform distribution.

    The chain must have a single closed communicating class (transient
    states are allowed) and be aperiodic on it.
    """
    p = spec.p if isinstance(spec, MdpSpec) else np.asarray(spec, dtype=float)
    n_comp, labels = connected_components(p > 0, directed=True, connection="strong")
    closed = 0
    for c in range(n_comp):
        members = labels == c
        if p[np.ix_(members, ~members)].sum() == 0.0:
            closed += 1
    if closed != 1:
        raise OracleError(f"chain has {closed} closed classes; a unique stationary law needs exactly one")
    mu = np.full(p.shape[0], 1.0 / p.shape[0])
    gap = np.inf
    for _ in range(max_iter):
        nxt = mu @ p
        nxt /= nxt.sum()
        gap = np.abs(nxt - mu).sum()
        mu = nxt
        if gap <= tol:
            break
    else:
        raise OracleError(f"power iteration did not converge (last L1 change {gap:.3g}); chain may be periodic")
    residual = np.abs(mu @ p - mu).sum()
    if residual > 1e-10:
        raise OracleError(f"stationary residual {residual:.3g} too large")
    return mu


def td_matrices(spec: MdpSpec, mu=None):
    """``H = Phi^T D (Phi - gamma P Phi)`` and ``c = Phi^T D r`` under ``D = diag(mu)``."""
    mu = stationary_distribution(spec) if mu is None else mu
    dphi = spec.phi * mu[:, None]
    H = dphi.T @ (spec.phi - spec.gamma * spec.p @ spec.phi)
    c = dphi.T @ spec.r
    return H, c


def true_theta(spec: MdpSpec) -> np.ndarray:
    """TD fixed point of the linear approximation under the stationary law."""
    H, c = td_matrices(spec)
    cond = np.linalg.cond(H)
    if not cond <= _COND_LIMIT:
        raise OracleError(f"H is ill conditioned (cond={cond:.3g})")
    theta = np.linalg.solve(H, c)
    residual = np.linalg.norm(H @ theta - c)
    if residual > 1e-10:
        raise OracleError(f"fixed-point residual {residual:.3g} exceeds 1e-10")
    return theta


def target_vector(spec: MdpSpec, state: int) -> np.ndarray:
    return spec.phi[state].copy()


def true_value(spec: MdpSpec, state: int, theta=None) -> float:
    """Linear-approximation value ``phi(state) @ theta*``."""
    theta = true_theta(spec) if theta is None else theta
    return float(spec.phi[state] @ theta)


def bellman_values(spec: MdpSpec) -> np.ndarray:
    """Exact value function ``(I - gamma P)^{-1} r``."""
    return np.linalg.solve(np.eye(spec.n_states) - spec.gamma * spec.p, spec.r)


@njit(cache=True, nogil=True)
def _walk(cum, u, s0, out):
    s = s0
    out[0] = s
    n = cum.shape[1]
    for t in range(u.shape[0]):
        row = cum[s]
        v = u[t]
        lo = 0
        hi = n - 1
        while lo < hi:
            mid = (lo + hi) // 2
            if row[mid] > v:
                hi = mid
            else:
                lo = mid + 1
        s = lo
        out[t + 1] = s


class ObservationStream:
    """Seeded trajectory of a chain, exposed as TD observations.

    Indices are 1-based: the ``i``-th observation is built from states
    ``s_{i-1}, s_i`` (``s_0`` is the start state) and its reward goes through
    the reward channel at index ``i``.
    """

    def __init__(self, spec: MdpSpec, seed, start_state: int = 0, channel: RewardChannel | None = None):
        self.spec = spec
        self.seed = int(seed)
        self.channel = channel
        self.state = int(start_state)
        self.index = 0
        self._rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([self.seed & 0xFFFFFFFFFFFFFFFF, 7])))
        cum = np.cumsum(spec.p, axis=1)
        cum[:, -1] = 1.0
        self._cum = np.ascontiguousarray(cum)

    def states(self, m: int) -> np.ndarray:
        """Advance by ``m`` transitions; returns the ``m + 1`` visited states."""
        out = np.empty(m + 1, dtype=np.int64)
        _walk(self._cum, self._rng.random(m), self.state, out)
        self.state = int(out[-1])
        return out

    def take(self, m: int):
        """Next ``m`` observations as arrays ``(X, Z, b, is_outlier)``."""
        s = self.states(m)
        phi = self.spec.phi
        X = phi[s[:-1]]
        Z = X - self.spec.gamma * phi[s[1:]]
        clean = self.spec.r[s[:-1]]
        if self.channel is None:
            b, flags = clean.copy(), np.zeros(m, dtype=bool)
        else:
            b, flags = self.channel.emit_many(clean, self.index + 1)
        self.index += m
        return np.ascontiguousarray(X), np.ascontiguousarray(Z), b, flags

    def __iter__(self):
        while True:
            X, Z, b, _ = self.take(1)
            yield Observation(X[0], Z[0], float(b[0]))


def sample_stream(spec: MdpSpec, seed, start_state: int = 0,
                  channel: RewardChannel | None = None) -> ObservationStream:
    return ObservationStream(spec, seed, start_state, channel)


# Gridworld -------------------------------------------------------------------

FROZEN_LAKE_8X8 = (
    "SFFFFFFF",
    "FFFFFFFF",
    "FFFHFFFF",
    "FFFFFHFF",
    "FFFHFFFF",
    "FHHFFFHF",
    "FHFFHFHF",
    "FFFHFFFG",
)

# left, down, right, up
_MOVES = ((0, -1), (1, 0), (0, 1), (-1, 0))


@dataclass(frozen=True)
class QLearningConfig:
    episodes: int = 100_000
    learning_rate: float = 0.1
    epsilon: float = 0.1
    max_steps: int = 200
    seed: int = 0


def lake_dynamics(layout=FROZEN_LAKE_8X8, slip: float = 2.0 / 3.0):
    """Transition tensor ``T[s, a, s']`` of the lake with terminal tiles marked.

    The intended move happens with probability ``1 - slip``; each of the two
    perpendicular moves with ``slip / 2``. Moves into the border leave the
    agent in place.
    """
    rows, cols = len(layout), len(layout[0])
    n = rows * cols
    T = np.zeros((n, 4, n))
    for s in range(n):
        i, j = divmod(s, cols)
        for a in range(4):
            for da, prob in ((a, 1.0 - slip), ((a - 1) % 4, slip / 2), ((a + 1) % 4, slip / 2)):
                if prob == 0.0:
                    continue
                di, dj = _MOVES[da]
                ni, nj = min(max(i + di, 0), rows - 1), min(max(j + dj, 0), cols - 1)
                T[s, a, ni * cols + nj] += prob
    flat = "".join(layout)
    terminal = np.array([c in "HG" for c in flat])
    goal = np.array([c == "G" for c in flat])
    start = flat.index("S")
    return T, terminal, goal, start


@njit(cache=True)
def _q_learning(cumT, terminal, goal, start, gamma, episodes, lr, eps, max_steps, seed):
    np.random.seed(seed)
    n, A = cumT.shape[0], cumT.shape[1]
    Q = np.zeros((n, A))
    for _ in range(episodes):
        s = start
        for _ in range(max_steps):
            if np.random.random() < eps:
                a = np.random.randint(A)
            else:
                best = Q[s].max()
                ties = np.flatnonzero(Q[s] == best)
                a = ties[np.random.randint(ties.shape[0])]
            v = np.random.random()
            row = cumT[s, a]
            s2 = 0
            while s2 < n - 1 and row[s2] <= v:
                s2 += 1
            reward = 1.0 if goal[s2] else 0.0
            target = reward if terminal[s2] else reward + gamma * Q[s2].max()
            Q[s, a] += lr * (target - Q[s, a])
            s = s2
            if terminal[s]:
                break
    return Q


def _reach_probability(P, terminal, goal, start):
    """Probability of hitting the goal before any other terminal tile."""
    inner = ~terminal
    # tiles from which the goal is reachable at all; elsewhere the probability is 0
    graph = (P > 0) & inner[:, None]
    live = breadth_first_order(graph.T.astype(np.int8), int(np.flatnonzero(goal)[0]), directed=True,
                               return_predecessors=False)
    alive = np.zeros(P.shape[0], dtype=bool)
    alive[live] = True
    alive &= inner
    if not alive[start]:
        return 0.0
    A = np.eye(alive.sum()) - P[np.ix_(alive, alive)]
    rhs = P[np.ix_(alive, goal)].sum(axis=1)
    h = np.linalg.solve(A, rhs)
    return float(h[np.flatnonzero(alive).tolist().index(start)])


def gridworld_8x8(seed, d: int = 4, gamma: float = 0.95, q_config: QLearningConfig | None = None,
                  slip: float = 2.0 / 3.0, layout=FROZEN_LAKE_8X8, policy=None,
                  policy_epsilon: float = 0.0):
    """Frozen-lake chain under a Q-learned greedy policy.

    Holes and the goal restart the chain at the start tile, which turns the
    episodic task into an ergodic chain. The reward is 1 on the goal tile and
    0 elsewhere. ``policy`` (one action per tile) skips training. The
    evaluated policy is epsilon-greedy with ``policy_epsilon`` (0 = greedy).
    The start tile is ``lake_start(layout)``.
    """
    q_config = q_config or QLearningConfig()
    T, terminal, goal, start = lake_dynamics(layout, slip)
    if policy is None:
        cumT = np.cumsum(T, axis=2)
        cumT[:, :, -1] = 1.0
        q_seed = int(np.random.SeedSequence([q_config.seed, int(seed)]).generate_state(1)[0])
        Q = _q_learning(cumT, terminal, goal, start, gamma, q_config.episodes,
                        q_config.learning_rate, q_config.epsilon, q_config.max_steps, q_seed)
        policy = Q.argmax(axis=1)
    policy = np.asarray(policy, dtype=np.int64)
    n, n_actions = T.shape[0], T.shape[1]
    pi = np.full((n, n_actions), policy_epsilon / n_actions)
    pi[np.arange(n), policy] += 1.0 - policy_epsilon
    p = np.einsum("sa,sat->st", pi, T)
    reach = _reach_probability(p, terminal, goal, start)
    if not reach > 0.0:
        raise ConstructionError("learned policy never reaches the goal from the start tile")
    p = p / p.sum(axis=1, keepdims=True)
    p[terminal] = 0.0
    p[terminal, start] = 1.0
    r = goal.astype(float)
    phi = random_features(np.random.default_rng(seed), n, d)
    return MdpSpec(n, p, r, phi, gamma)


def lake_start(layout=FROZEN_LAKE_8X8) -> int:
    return "".join(layout).index("S")

