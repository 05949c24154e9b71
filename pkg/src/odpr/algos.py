"""Desk-scale learners that consume decoupled samplers.

Behavior cloning and a TD3+BC agent for the stateless Gaussian bandit, plus an
exact KL-constrained policy search on tabular MDPs.  Which training terms read
the prioritized sampler is controlled by :class:`SamplerWiring`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from odpr.envs import GaussianBandit, StochasticPolicy, TabularMDP, _probs, advantages, q_values
from odpr.rng import make_rng
from odpr.value import Mlp, MlpValueFn, is_one_hot, state_ids


class TrainingDivergence(RuntimeError):
    def __init__(self, step, what):
        self.step = step
        super().__init__(f"{what} became non-finite at step {step}")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 3000
    batch_size: int = 256
    actor_lr: float = 5e-3
    critic_lr: float = 5e-3
    target_update_period: int = 100
    policy_delay: int = 2
    seed: int = 0
    hidden_sizes: tuple = (64, 64)
    log_every: int = 50

    def __post_init__(self):
        if min(self.steps, self.batch_size, self.target_update_period, self.policy_delay, self.log_every) < 1:
            raise ValueError("steps, batch_size, periods and log_every must be positive")
        if not (self.actor_lr > 0 and self.critic_lr > 0):
            raise ValueError("learning rates must be positive")


@dataclass(frozen=True)
class SamplerWiring:
    """Which sampler ('uniform' or 'prioritized') feeds each training term."""

    evaluation: str = "uniform"
    improvement: str = "prioritized"
    constraint: str = "prioritized"


WIRINGS = {
    "vanilla": SamplerWiring("uniform", "uniform", "uniform"),
    "CNT": SamplerWiring("uniform", "uniform", "prioritized"),
    "DR": SamplerWiring("uniform", "prioritized", "prioritized"),
    "ALL": SamplerWiring("prioritized", "prioritized", "prioritized"),
}


def ablation_modes(mode="DR") -> SamplerWiring:
    """``CNT``: constraint only; ``DR``: improvement + constraint; ``ALL``: every term."""
    try:
        return WIRINGS[mode]
    except KeyError:
        raise ValueError(f"unknown wiring {mode!r}; expected one of {sorted(WIRINGS)}") from None


def _pick(samplers, which):
    return samplers.eval_sampler if which == "uniform" else samplers.actor_sampler


def _check_samplers(d, samplers):
    if samplers.n != len(d):
        raise ValueError(f"samplers sized {samplers.n} for a dataset of {len(d)}")


def is_stateless(d):
    return bool(np.all(d.states == d.states[:1]))


# ---------------------------------------------------------------------------
# behavior cloning
# ---------------------------------------------------------------------------

@dataclass
class BcPolicy:
    """Exactly one of ``action`` (stateless), ``net`` or ``table`` is set."""

    action: np.ndarray | None = None
    net: Mlp | None = None
    table: np.ndarray | None = None

    def act(self, states=None):
        if self.action is not None:
            return self.action.copy()
        if self.net is not None:
            return self.net(states)
        return self.table[state_ids(states)]


def train_bc(d, samplers, cfg: TrainConfig) -> BcPolicy:
    """Imitate the actions drawn by the prioritized sampler.

    Continuous actions are fitted by squared-error regression (a single action
    vector when the data is stateless); one-hot states and actions give a
    tabular maximum-likelihood policy from the sampled counts.
    """
    _check_samplers(d, samplers)
    sampler = samplers.actor_sampler
    actions = d.actions.astype(np.float64)
    if is_one_hot(d.states) and is_one_hot(d.actions):
        counts = np.zeros((d.state_dim, d.action_dim))
        sid, aid = state_ids(d.states), state_ids(d.actions)
        for _ in range(cfg.steps):
            idx = sampler.sample_batch(cfg.batch_size)
            np.add.at(counts, (sid[idx], aid[idx]), 1.0)
        seen = counts.sum(axis=1, keepdims=True)
        table = np.where(seen > 0, counts / np.where(seen > 0, seen, 1.0), 1.0 / d.action_dim)
        return BcPolicy(table=table)
    if is_stateless(d):
        a = np.zeros(d.action_dim)
        for step in range(cfg.steps):
            idx = sampler.sample_batch(cfg.batch_size)
            a -= cfg.actor_lr * 2.0 * (a - actions[idx].mean(axis=0))
            if not np.all(np.isfinite(a)):
                raise TrainingDivergence(step, "BC action")
        return BcPolicy(action=a)
    net = Mlp.init((d.state_dim, *cfg.hidden_sizes, d.action_dim), make_rng(cfg.seed, "init"))
    states = d.states.astype(np.float64)
    for step in range(cfg.steps):
        idx = sampler.sample_batch(cfg.batch_size)
        loss, grad = net.mse_gradient(states[idx], actions[idx])
        if not np.isfinite(loss):
            raise TrainingDivergence(step, "BC loss")
        net.params -= cfg.actor_lr * grad
    return BcPolicy(net=net)


# ---------------------------------------------------------------------------
# TD3+BC on the bandit
# ---------------------------------------------------------------------------

@dataclass
class Td3BcAgent:
    actor: np.ndarray
    critics: list
    critic_targets: list
    alpha: float
    critic_updates: int = 0
    actor_updates: int = 0
    log: list = field(default_factory=list)

    def act(self):
        return self.actor.copy()

    def q(self, actions):
        return self.critics[0].predict(actions)


METRIC_FIELDS = ("step", "critic_loss", "actor_loss", "action_x", "action_y", "expected_reward")


def train_td3bc_bandit(d, samplers, cfg: TrainConfig, alpha=1.0, wiring: SamplerWiring | str = "DR",
                       bandit: GaussianBandit | None = None) -> Td3BcAgent:
    """TD3+BC specialised to a single-step, stateless problem.

    Twin critics ``Q(a)`` regress the immediate reward (no bootstrapping).
    Every ``policy_delay`` steps the actor ascends
    ``Q1(a) - alpha * mean ||a - a_batch||^2``; the gradient is taken on the
    objective divided by ``alpha``, which has the same maximizer and stays
    well-scaled as ``alpha`` grows.  The actor is clipped to ``[-1, 1]^2``.
    """
    _check_samplers(d, samplers)
    if not is_stateless(d):
        raise ValueError("train_td3bc_bandit needs a stateless dataset")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    wiring = ablation_modes(wiring) if isinstance(wiring, str) else wiring
    bandit = bandit or GaussianBandit()
    rng = make_rng(cfg.seed, "init")
    sizes = (d.action_dim, *cfg.hidden_sizes, 1)
    critics = [MlpValueFn.init(sizes, rng) for _ in range(2)]
    agent = Td3BcAgent(
        actor=rng.uniform(-0.1, 0.1, size=d.action_dim),
        critics=critics,
        critic_targets=[c.copy() for c in critics],
        alpha=float(alpha),
    )
    actions = d.actions.astype(np.float64)
    rewards = d.rewards.astype(np.float64)
    eval_s = _pick(samplers, wiring.evaluation)
    improve_s = _pick(samplers, wiring.improvement)
    constrain_s = _pick(samplers, wiring.constraint)
    critic_loss = actor_loss = float("nan")

    for step in range(1, cfg.steps + 1):
        idx = eval_s.sample_batch(cfg.batch_size)
        critic_loss = 0.0
        for c in agent.critics:
            loss, grad = c.mse_gradient(actions[idx], rewards[idx])
            c.params -= cfg.critic_lr * grad
            critic_loss += loss
        agent.critic_updates += 1
        if not np.isfinite(critic_loss):
            raise TrainingDivergence(step, "critic loss")

        if step % cfg.policy_delay == 0:
            bc_idx = constrain_s.sample_batch(cfg.batch_size)
            if improve_s is not constrain_s:
                # the Q term has no state input here, but the draw keeps the
                # sampler streams aligned with the stateful algorithm
                improve_s.sample_batch(cfg.batch_size)
            a = agent.actor
            target = actions[bc_idx]
            q = agent.critics[0].predict(a[None])[0]
            grad_q = agent.critics[0].input_gradient(a[None])[0]
            actor_loss = float(-q + alpha * np.mean(np.sum((a - target) ** 2, axis=1)))
            ascent = grad_q / alpha - 2.0 * (a - target.mean(axis=0))
            agent.actor = np.clip(a + cfg.actor_lr * ascent, -1.0, 1.0)
            agent.actor_updates += 1
            if not np.all(np.isfinite(agent.actor)):
                raise TrainingDivergence(step, "actor")

        if step % cfg.target_update_period == 0:
            agent.critic_targets = [c.copy() for c in agent.critics]
        if step % cfg.log_every == 0 or step == cfg.steps:
            reward = float(bandit.expected_reward(agent.actor)[0])
            agent.log.append((step, critic_loss, actor_loss, *agent.actor.tolist(), reward))
    return agent


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BanditScore:
    expected_reward: float
    distance_to_optimal: float


def evaluate_bandit(policy, b: GaussianBandit) -> BanditScore:
    """Expected reward of a deterministic action (mode-responsibility weighted)."""
    if isinstance(policy, (Td3BcAgent, BcPolicy)):
        action = policy.act()
    else:
        action = np.asarray(policy, dtype=np.float64)
    return BanditScore(float(b.expected_reward(action)[0]),
                       float(np.linalg.norm(action - b.optimal_action)))


def dataset_mean_reward(d, weights=None, b: GaussianBandit | None = None):
    """Mean reward of the (prioritized) dataset; with ``b``, use expected rewards of the actions."""
    r = b.expected_reward(d.actions) if b is not None else d.rewards.astype(np.float64)
    if weights is None:
        return float(np.mean(r))
    return float(np.dot(np.asarray(weights, dtype=np.float64), r))


# ---------------------------------------------------------------------------
# tabular constrained search
# ---------------------------------------------------------------------------

def _kl(p, q):
    m = p > 0
    return float(np.sum(p[m] * np.log(p[m] / q[m])))


def _tilt(ref, adv, inv_temp):
    logits = np.where(ref > 0, np.log(np.where(ref > 0, ref, 1.0)) + inv_temp * adv, -np.inf)
    logits -= logits.max()
    p = np.exp(logits)
    return p / p.sum()


def _greedy(ref, q):
    support = ref > 0
    best = np.isclose(q, q[support].max(), rtol=0, atol=1e-12) & support
    p = np.where(best, ref, 0.0)
    return p / p.sum()


def constrained_tabular_search(mdp: TabularMDP, beta, epsilon, tol=1e-8) -> StochasticPolicy:
    """Per-state exponentiated-advantage tilt of ``beta`` with ``KL(pi || beta) = epsilon``.

    The inverse temperature is found by bisection per state.  When even the
    greedy (within-support) policy is closer than ``epsilon``, that greedy
    policy is returned for the state.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    ref = _probs(beta)
    adv = advantages(mdp, beta)
    Q = q_values(mdp, beta)
    out = ref.copy()
    for s in range(mdp.n_states):
        if epsilon == 0 or mdp.terminal[s]:
            continue
        greedy = _greedy(ref[s], Q[s])
        if _kl(greedy, ref[s]) <= epsilon:
            out[s] = greedy
            continue
        lo, hi = 0.0, 1.0
        while _kl(_tilt(ref[s], adv[s], hi), ref[s]) < epsilon:
            hi *= 2.0
        while hi - lo > tol * max(1.0, hi):
            mid = 0.5 * (lo + hi)
            if _kl(_tilt(ref[s], adv[s], mid), ref[s]) < epsilon:
                lo = mid
            else:
                hi = mid
        out[s] = _tilt(ref[s], adv[s], 0.5 * (lo + hi))
    return StochasticPolicy(out)
