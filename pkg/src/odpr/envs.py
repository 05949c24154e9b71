"""Toy environments and exact tabular oracles.

* :class:`GaussianBandit`: stateless 2D continuous bandit whose offline data
  comes from four Gaussian behavior modes.
* :class:`TabularMDP`: finite MDP with exact policy evaluation, discounted
  occupancies and advantages, used to check behavior-policy improvement.
* :func:`build_concat_mdp`: the two-trajectory example where stitching the good
  halves of two equal-return trajectories yields the optimal behavior.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from odpr.dataset import Dataset
from odpr.value import _solve, policy_matrices, solve_tabular_value

# ---------------------------------------------------------------------------
# Gaussian bandit
# ---------------------------------------------------------------------------

DEFAULT_MODE_MEANS = ((0.5, 0.5), (0.5, -0.5), (-0.5, 0.5), (-0.5, -0.5))
# optimal mode first; the other rewards are a reconstruction giving a dataset
# average of 1.0
DEFAULT_REWARD_MEANS = (5.0, 0.0, 1.0, -2.0)


@dataclass(frozen=True)
class GaussianBandit:
    mode_means: tuple = DEFAULT_MODE_MEANS
    action_std: tuple = (0.10, 0.10)
    reward_means: tuple = DEFAULT_REWARD_MEANS
    reward_std: float = 0.5

    def __post_init__(self):
        if np.shape(self.mode_means) != (4, 2):
            raise ValueError("the bandit has four 2D action modes")
        if len(self.reward_means) != 4:
            raise ValueError("one reward mean per mode")

    @property
    def optimal_mode(self):
        return int(np.argmax(self.reward_means))

    @property
    def optimal_action(self):
        return np.asarray(self.mode_means[self.optimal_mode], dtype=np.float64)

    def responsibilities(self, actions):
        """Posterior probability of each mode given the action (equal priors)."""
        a = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        mu = np.asarray(self.mode_means, dtype=np.float64)
        std = np.asarray(self.action_std, dtype=np.float64)
        logp = -0.5 * np.sum(((a[:, None, :] - mu[None]) / std) ** 2, axis=2)
        logp -= logp.max(axis=1, keepdims=True)
        p = np.exp(logp)
        return p / p.sum(axis=1, keepdims=True)

    def expected_reward(self, actions):
        return self.responsibilities(actions) @ np.asarray(self.reward_means, dtype=np.float64)

    def mode_of(self, actions):
        return np.argmax(self.responsibilities(actions), axis=1)


def sample_bandit_dataset(b: GaussianBandit, per_mode: int, seed) -> Dataset:
    """``per_mode`` samples from each behavior mode, one length-1 trajectory each.

    Actions are clipped to ``[-1, 1]^2``; the state is a constant zero vector.
    """
    if per_mode < 1:
        raise ValueError("per_mode must be >= 1")
    rng = np.random.default_rng(seed)
    actions, rewards = [], []
    for mu, r in zip(b.mode_means, b.reward_means):
        a = rng.normal(mu, b.action_std, size=(per_mode, 2))
        actions.append(np.clip(a, -1.0, 1.0))
        rewards.append(rng.normal(r, b.reward_std, size=per_mode) if b.reward_std > 0
                       else np.full(per_mode, float(r)))
    n = 4 * per_mode
    zeros = np.zeros((n, 1))
    bounds = np.stack([np.arange(n), np.ones(n, dtype=np.int64)], axis=1)
    return Dataset(zeros, np.concatenate(actions), np.concatenate(rewards), zeros,
                   np.ones(n, dtype=bool), bounds)


# ---------------------------------------------------------------------------
# tabular MDPs
# ---------------------------------------------------------------------------

@dataclass
class StochasticPolicy:
    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 2 or np.any(self.probs < 0):
            raise ValueError("policy table must be a non-negative (S, A) array")
        if not np.allclose(self.probs.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("policy rows must sum to 1")

    @classmethod
    def uniform(cls, n_states, n_actions):
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))


def _probs(policy):
    return np.asarray(getattr(policy, "probs", policy), dtype=np.float64)


@dataclass
class TabularMDP:
    """Finite MDP ``(T, r, gamma, initial distribution)``.

    States flagged in ``terminal`` are absorbing with value 0; they make
    ``gamma = 1`` usable for episodic problems.
    """

    transition: np.ndarray
    reward: np.ndarray
    gamma: float = 0.9
    initial_dist: np.ndarray | None = None
    terminal: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=np.float64)
        self.reward = np.asarray(self.reward, dtype=np.float64)
        S, A = self.reward.shape
        if self.transition.shape != (S, A, S):
            raise ValueError(f"transition shape {self.transition.shape} != {(S, A, S)}")
        if np.any(self.transition < 0) or not np.allclose(self.transition.sum(axis=2), 1.0, atol=1e-12):
            raise ValueError("transition rows must be probability distributions")
        if not np.all(np.isfinite(self.reward)):
            raise ValueError("rewards must be finite")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if self.initial_dist is None:
            self.initial_dist = np.full(S, 1.0 / S)
        self.initial_dist = np.asarray(self.initial_dist, dtype=np.float64)
        if self.terminal is None:
            self.terminal = np.zeros(S, dtype=bool)
        self.terminal = np.asarray(self.terminal, dtype=bool)

    @property
    def n_states(self):
        return self.reward.shape[0]

    @property
    def n_actions(self):
        return self.reward.shape[1]

    @property
    def terminal_mask(self):
        return self.terminal

    def to_json(self):
        return json.dumps({
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "gamma": self.gamma,
            "transition": self.transition.reshape(-1).tolist(),
            "reward": self.reward.reshape(-1).tolist(),
            "initial_dist": self.initial_dist.tolist(),
            "terminal": self.terminal.astype(int).tolist(),
        })

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        S, A = doc["n_states"], doc["n_actions"]
        return cls(
            np.array(doc["transition"]).reshape(S, A, S),
            np.array(doc["reward"]).reshape(S, A),
            doc["gamma"],
            np.array(doc["initial_dist"]),
            np.array(doc.get("terminal", [0] * S), dtype=bool),
        )


def random_mdp(n_states, n_actions, seed, gamma=0.9) -> TabularMDP:
    """Dirichlet(1) transition rows, Uniform[-1, 1] rewards, uniform start."""
    if n_states < 2 or n_actions < 2:
        raise ValueError("need at least 2 states and 2 actions")
    rng = np.random.default_rng(seed)
    T = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    T /= T.sum(axis=2, keepdims=True)
    r = rng.uniform(-1.0, 1.0, size=(n_states, n_actions))
    return TabularMDP(T, r, gamma)


def random_policy(n_states, n_actions, rng, drop_prob=0.0) -> StochasticPolicy:
    """Dirichlet(1) rows; each action is removed from the support with ``drop_prob``."""
    p = rng.dirichlet(np.ones(n_actions), size=n_states)
    if drop_prob > 0:
        keep = rng.random((n_states, n_actions)) >= drop_prob
        keep[np.arange(n_states), rng.integers(n_actions, size=n_states)] = True
        p = p * keep
        p /= p.sum(axis=1, keepdims=True)
    return StochasticPolicy(p)


def q_values(mdp: TabularMDP, policy):
    """``Q^pi``; rows of terminal states are 0."""
    V = solve_tabular_value(mdp, policy).values
    Q = mdp.reward + mdp.gamma * mdp.transition @ V
    Q[mdp.terminal] = 0.0
    return Q


def advantages(mdp: TabularMDP, policy):
    V = solve_tabular_value(mdp, policy).values
    return q_values(mdp, policy) - V[:, None]


def exact_policy_value(mdp: TabularMDP, pi) -> float:
    """``J(pi) = initial_dist . V^pi``."""
    return float(mdp.initial_dist @ solve_tabular_value(mdp, pi).values)


def discounted_occupancy(mdp: TabularMDP, pi):
    """Unnormalized ``d_pi(s) = sum_t gamma^t P(s_t = s)`` over non-terminal states."""
    _, P_pi = policy_matrices(mdp, pi)
    live = ~mdp.terminal
    A = np.eye(int(live.sum())) - mdp.gamma * P_pi[np.ix_(live, live)].T
    d = np.zeros(mdp.n_states)
    d[live] = _solve(A, mdp.initial_dist[live])
    return d


def performance_difference(mdp: TabularMDP, pi, beta) -> float:
    """Occupancy-weighted advantage sum ``sum_s d_pi(s) sum_a pi(a|s) A^beta(s, a)``."""
    d = discounted_occupancy(mdp, pi)
    return float(np.sum(d[:, None] * _probs(pi) * advantages(mdp, beta)))


def linear_table_priority(adv, support):
    """``A - min A`` with the minimum taken over supported state-action pairs."""
    lo = adv[support].min() if support.any() else 0.0
    return np.where(support, adv - lo, 0.0)


def prioritized_policy(mdp: TabularMDP, beta, priority_fn=linear_table_priority) -> StochasticPolicy:
    """Reweight ``beta`` by a priority of its exact advantages and renormalize per state.

    ``priority_fn(advantages, support)`` must return non-negative weights that
    increase with the advantage.  A state whose supported actions all get
    zero weight keeps its original action distribution.
    """
    b = _probs(beta)
    support = (b > 0) & ~mdp.terminal[:, None]
    w = np.asarray(priority_fn(advantages(mdp, beta), support), dtype=np.float64)
    if np.any(w[support] < 0):
        raise ValueError("priority function returned negative weights")
    tilted = np.where(support, w * b, 0.0)
    norm = tilted.sum(axis=1, keepdims=True)
    keep = norm[:, 0] <= 0
    out = np.where(keep[:, None], b, tilted / np.where(norm > 0, norm, 1.0))
    return StochasticPolicy(out)


def iterate_prioritized_policy(mdp, beta, k, priority_fn=linear_table_priority):
    """``[beta, beta^(1), ..., beta^(k)]`` with exact advantages at every round."""
    out = [StochasticPolicy(_probs(beta))]
    for _ in range(k):
        out.append(prioritized_policy(mdp, out[-1], priority_fn))
    return out


def has_unequal_supported_q(mdp, beta, tol=1e-10):
    """True if some state's supported actions differ in ``Q^beta``."""
    Q = q_values(mdp, beta)
    b = _probs(beta)
    for s in range(mdp.n_states):
        if mdp.terminal[s]:
            continue
        q = Q[s, b[s] > 0]
        if q.size and q.max() - q.min() > tol:
            return True
    return False


# ---------------------------------------------------------------------------
# trajectory concatenation example
# ---------------------------------------------------------------------------

def build_concat_mdp():
    """Three states, two actions, deterministic ``s1 -> s2 -> s3`` (terminal), gamma = 1.

    ``r(s1, a1) = 1, r(s1, a2) = 0, r(s2, a1) = 0, r(s2, a2) = 1``.  The
    dataset holds the two equal-return trajectories ``(s1 a1 1 s2 a1 0 s3)``
    and ``(s1 a2 0 s2 a2 1 s3)`` with one-hot states and actions.
    """
    T = np.zeros((3, 2, 3))
    T[0, :, 1] = 1.0
    T[1, :, 2] = 1.0
    T[2, :, 2] = 1.0
    r = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    mdp = TabularMDP(T, r, gamma=1.0, initial_dist=np.array([1.0, 0.0, 0.0]),
                     terminal=np.array([False, False, True]))
    eye_s, eye_a = np.eye(3), np.eye(2)
    steps = [(0, 0, 1.0, 1, False), (1, 0, 0.0, 2, True),
             (0, 1, 0.0, 1, False), (1, 1, 1.0, 2, True)]
    d = Dataset(
        np.array([eye_s[s] for s, *_ in steps]),
        np.array([eye_a[a] for _, a, *_ in steps]),
        np.array([r_ for _, _, r_, _, _ in steps]),
        np.array([eye_s[s2] for *_, s2, _ in steps]),
        np.array([t for *_, t in steps]),
        np.array([[0, 2], [2, 2]]),
    )
    return mdp, d
