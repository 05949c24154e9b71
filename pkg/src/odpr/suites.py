"""Verification suites with per-trial margins.

Each suite returns a JSON-serializable report ``{"suite", "passed", "trials",
...}``; ``trials`` lists one record per check with its margin against the
tolerance.
"""

from __future__ import annotations

import time

import numpy as np

from odpr.envs import (
    build_concat_mdp, exact_policy_value, has_unequal_supported_q, iterate_prioritized_policy,
    performance_difference, prioritized_policy, random_mdp, random_policy,
)
from odpr.priority import OdprConfig, baseline_priority, clip_below_one, iterate_odpr_a, scale_std
from odpr.sampling import (
    DecoupledSamplers, IndexSampler, expected_resampled_loss, expected_reweighted_loss, resampled_loss,
    reweighted_loss,
)
from odpr.value import FitConfig, Mlp

IMPROVEMENT_TOL = 1e-9
IDENTITY_TOL = 1e-8
GRAD_TOL = 1e-4
GRAD_FLOOR = 1e-6
FREQ_TOL = 0.05


def _random_problem(rng, trial):
    n_states = int(rng.integers(2, 9))
    n_actions = int(rng.integers(2, 5))
    mdp = random_mdp(n_states, n_actions, seed=int(rng.integers(2**31)), gamma=0.9)
    beta = random_policy(n_states, n_actions, rng, drop_prob=0.3 if trial % 2 else 0.0)
    return mdp, beta


def single_round_improvement(trials=100, seed=0):
    """Reweighting by linear advantage priority never lowers ``J``; strictly raises it
    when some state has unequal supported Q-values."""
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    records = []
    for t in range(trials):
        mdp, beta = _random_problem(rng, t)
        margin = exact_policy_value(mdp, prioritized_policy(mdp, beta)) - exact_policy_value(mdp, beta)
        strict = has_unequal_supported_q(mdp, beta)
        ok = margin >= -IMPROVEMENT_TOL and (margin > 0 if strict else True)
        records.append({"trial": t, "n_states": mdp.n_states, "n_actions": mdp.n_actions,
                        "margin": margin, "strict_expected": strict, "passed": ok})
    return {
        "suite": "theorem1",
        "passed": all(r["passed"] for r in records),
        "min_margin": min(r["margin"] for r in records),
        "runtime_s": time.perf_counter() - start,
        "trials": records,
    }


def iterated(trials=100, seed=0, rounds=5):
    """Repeated exact prioritization gives a non-decreasing ``J`` sequence."""
    rng = np.random.default_rng(seed)
    records = []
    for t in range(trials):
        mdp, beta = _random_problem(rng, t)
        values = [exact_policy_value(mdp, p) for p in iterate_prioritized_policy(mdp, beta, rounds)]
        margin = float(np.min(np.diff(values)))
        records.append({"trial": t, "values": values, "margin": margin,
                        "passed": margin >= -IMPROVEMENT_TOL})
    return {"suite": "iterated", "passed": all(r["passed"] for r in records),
            "min_margin": min(r["margin"] for r in records), "trials": records}


def performance_difference_identity(trials=50, seed=0):
    """``J(pi) - J(beta)`` equals the occupancy-weighted advantage sum."""
    rng = np.random.default_rng(seed)
    records = []
    for t in range(trials):
        mdp, beta = _random_problem(rng, t)
        pi = random_policy(mdp.n_states, mdp.n_actions, rng)
        lhs = exact_policy_value(mdp, pi) - exact_policy_value(mdp, beta)
        rhs = performance_difference(mdp, pi, beta)
        err = abs(lhs - rhs)
        records.append({"trial": t, "difference": lhs, "error": err, "margin": IDENTITY_TOL - err,
                        "passed": err <= IDENTITY_TOL})
    return {"suite": "lemma1", "passed": all(r["passed"] for r in records),
            "max_error": max(r["error"] for r in records), "trials": records}


def resample_reweight_equivalence(trials=20, seed=0, mc_n=1000, mc_batches=100_000, batch_size=32):
    """Resampling and reweighting give the same expected loss.

    Exact check by enumeration on small datasets, then a Monte-Carlo check:
    the two estimators' means must agree within 3 standard errors.
    """
    rng = np.random.default_rng(seed)
    records = []
    for t in range(trials):
        n = int(rng.integers(2, 11))
        losses = rng.normal(size=n) ** 2
        w = rng.dirichlet(np.ones(n))
        exact = expected_resampled_loss(losses, w)
        enumerated = expected_reweighted_loss(losses, w, batch_size=2)
        err = abs(exact - enumerated)
        tol = 1e-12 * max(1.0, abs(exact))
        records.append({"trial": t, "n": n, "error": err, "margin": tol - err, "passed": err <= tol})

    x = rng.normal(size=mc_n)
    losses = (x - 0.3) ** 2
    w = rng.dirichlet(np.ones(mc_n))
    weighted = IndexSampler.weighted(w, np.random.default_rng([seed, 1])).pregenerate_stream(mc_batches * batch_size)
    uniform = IndexSampler.uniform(mc_n, np.random.default_rng([seed, 2])).pregenerate_stream(mc_batches * batch_size)
    res = np.array([resampled_loss(losses, weighted.sample_batch(batch_size)) for _ in range(mc_batches)])
    rew = np.array([reweighted_loss(losses, w, uniform.sample_batch(batch_size)) for _ in range(mc_batches)])
    se = np.sqrt(res.var(ddof=1) / mc_batches + rew.var(ddof=1) / mc_batches)
    z = abs(res.mean() - rew.mean()) / se
    records.append({"trial": "monte-carlo", "n": mc_n, "batches": mc_batches,
                    "resampled_mean": float(res.mean()), "reweighted_mean": float(rew.mean()),
                    "target": expected_resampled_loss(losses, w), "z": float(z),
                    "margin": 3.0 - float(z), "passed": bool(z < 3.0)})
    return {"suite": "eq4-equivalence", "passed": all(r["passed"] for r in records), "trials": records}


def sampler_frequency(trials=3, seed=0, draws=1_000_000):
    """Weighted draw frequencies match the target (relative error <= 5% on entries
    >= 1e-4); the evaluation sampler ignores the actor weights."""
    rng = np.random.default_rng(seed)
    vectors = [np.array([0.1, 0.2, 0.3, 0.4])]
    for _ in range(max(trials - 1, 0)):
        w = rng.dirichlet(np.full(10, 5.0))
        w[rng.integers(10)] = 0.0
        vectors.append(w / w.sum())
    records = []
    for t, w in enumerate(vectors):
        s = IndexSampler.weighted(w, np.random.default_rng([seed, t]))
        freq = np.bincount(s.sample_batch(draws), minlength=len(w)) / draws
        check = w >= 1e-4
        rel = np.abs(freq[check] - w[check]) / w[check]
        zero_ok = bool(np.all(freq[w == 0] == 0))
        records.append({"trial": t, "max_relative_error": float(rel.max()),
                        "margin": FREQ_TOL - float(rel.max()),
                        "passed": bool(rel.max() <= FREQ_TOL and zero_ok)})
    n = 50
    runs = []
    for w in (None, rng.dirichlet(np.ones(n)), np.eye(n)[3]):
        ds = DecoupledSamplers.build(n, w, seed=seed)
        runs.append(np.concatenate([ds.eval_sampler.sample_batch(256) for _ in range(20)]))
    identical = all(np.array_equal(runs[0], r) for r in runs[1:])
    records.append({"trial": "decoupling", "margin": 0.0, "passed": identical})
    return {"suite": "sampler-frequency", "passed": all(r["passed"] for r in records), "trials": records}


def fd_gradient(net, x, y, h=1e-5):
    """Central finite differences of ``mean((net(x) - y)^2)``."""
    p0 = net.params.copy()
    g = np.empty_like(p0)
    for i in range(len(p0)):
        net.params[i] = p0[i] + h
        up = np.mean((net(x) - y) ** 2)
        net.params[i] = p0[i] - h
        down = np.mean((net(x) - y) ** 2)
        net.params[i] = p0[i]
        g[i] = (up - down) / (2 * h)
    return g


def gradient_relative_error(g, fd):
    return np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), GRAD_FLOOR)


def gradcheck(trials=100, seed=0):
    """Reverse-mode gradients of a (2->8->8->1) tanh network vs central differences."""
    rng = np.random.default_rng(seed)
    records = []
    for t in range(trials):
        net = Mlp((2, 8, 8, 1), rng.normal(size=Mlp((2, 8, 8, 1)).params.size), "tanh")
        x = rng.normal(size=(int(rng.integers(1, 17)), 2))
        y = rng.normal(size=(len(x), 1))
        _, g = net.mse_gradient(x, y)
        err = float(gradient_relative_error(g, fd_gradient(net, x, y)).max())
        records.append({"trial": t, "max_relative_error": err, "margin": GRAD_TOL - err,
                        "passed": err <= GRAD_TOL})
    return {"suite": "gradcheck", "passed": all(r["passed"] for r in records),
            "max_relative_error": max(r["max_relative_error"] for r in records), "trials": records}


def concat_example(trials=1, seed=0):
    """One exact advantage round on the two-trajectory MDP keeps only the good halves;
    whole-trajectory weighting leaves the data uniform."""
    _, d = build_concat_mdp()
    w = iterate_odpr_a(d, OdprConfig(iterations=1, sigma=None),
                       FitConfig(gamma=1.0, solver="exact", seed=seed)).w
    good, bad = w[[0, 3]], w[[1, 2]]
    ratio = float(bad.max() / good.min())
    traj = baseline_priority(d, OdprConfig(kind="traj_uniform")).w
    uniform = bool(np.array_equal(traj, np.full(4, 0.25)))
    return {"suite": "concat-example",
            "passed": ratio < 0.05 and uniform,
            "weights": w.tolist(), "traj_uniform_weights": traj.tolist(),
            "trials": [{"trial": "odpr-a", "bad_good_ratio": ratio, "margin": 0.05 - ratio,
                        "passed": ratio < 0.05},
                       {"trial": "traj_uniform", "margin": 0.0, "passed": uniform}]}


def scaling(trials=200, seed=0, sigma=2.0):
    """Std scaling hits ``sigma`` whenever no entry needs flooring and always returns
    valid weights; clipping leaves every ``N * w >= 1`` before renormalizing."""
    rng = np.random.default_rng(seed)
    records = []
    for t in range(trials):
        n = int(rng.integers(2, 200))
        raw = rng.exponential(size=n) ** rng.uniform(0.2, 3.0)
        w = raw / raw.sum()
        x = n * w
        out = scale_std(w, sigma).w
        valid = bool(np.all(out >= 0) and abs(out.sum() - 1) <= 1e-9)
        floored = bool(np.any(1 + (x - 1) * sigma / x.std() < 0))
        err = 0.0 if floored else abs((n * out).std() - sigma)
        # after clipping, N * w is max(x, 1) divided by its mean
        lifted = np.maximum(x, 1.0)
        clip_ok = bool(np.allclose(n * clip_below_one(w).w, lifted / lifted.mean(), rtol=1e-12, atol=0))
        ok = valid and err <= 1e-9 and clip_ok
        records.append({"trial": t, "n": n, "floored": floored, "std_error": err,
                        "margin": 1e-9 - err, "passed": ok})
    return {"suite": "scaling", "passed": all(r["passed"] for r in records), "trials": records}


SUITES = {
    "theorem1": single_round_improvement,
    "iterated": iterated,
    "lemma1": performance_difference_identity,
    "eq4-equivalence": resample_reweight_equivalence,
    "sampler-frequency": sampler_frequency,
    "gradcheck": gradcheck,
    "concat-example": concat_example,
    "scaling": scaling,
}


def run_suite(name, trials=None, seed=0):
    try:
        fn = SUITES[name]
    except KeyError:
        raise ValueError(f"unknown suite {name!r}; expected one of {sorted(SUITES)}") from None
    return fn(seed=seed) if trials is None else fn(trials=trials, seed=seed)
