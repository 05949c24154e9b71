"""Experiment runners behind the command-line tool.

Every runner is a pure function of an :class:`ExperimentConfig` and a seed
list; all randomness comes from the named streams in :mod:`odpr.rng`.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from odpr.algos import (
    METRIC_FIELDS, constrained_tabular_search, evaluate_bandit, train_bc, train_td3bc_bandit,
)
from odpr.dataset import compute_trajectory_returns, load_dataset, save_dataset, strip_trajectories
from odpr.envs import (
    build_concat_mdp, exact_policy_value, iterate_prioritized_policy, random_mdp, random_policy,
    sample_bandit_dataset,
)
from odpr.priority import (
    PriorityWeights, baseline_priority, finalize_weights, load_weights, odpr_a_rounds, return_priority,
    save_weights,
)
from odpr.rng import make_rng, stream_seed
from odpr.sampling import DecoupledSamplers, IndexSampler
from odpr.value import fit_value_td, save_value_fn


def _seed_int(seed, name):
    return int(stream_seed(seed, name).generate_state(1)[0])


def is_bandit(cfg):
    return cfg.get("dataset.path") is None and cfg.get("dataset.generator", "bandit") == "bandit"


def make_dataset(cfg, seed):
    if cfg.get("dataset.path") is not None:
        d = load_dataset(cfg.get("dataset.path"))
    else:
        generator = cfg.get("dataset.generator", "bandit")
        if generator == "bandit":
            d = sample_bandit_dataset(cfg.bandit(), cfg.get("dataset.per_mode", 1000), make_rng(seed, "data"))
        else:
            d = build_concat_mdp()[1]
    keep = cfg.get("dataset.keep_fraction")
    if keep is not None and keep < 1.0:
        d = strip_trajectories(d, keep, _seed_int(seed, "data"))
    return d


# ---------------------------------------------------------------------------
# priorities
# ---------------------------------------------------------------------------

@dataclass
class PriorityRun:
    weights: PriorityWeights
    history: list = field(default_factory=list)  # accumulated weights, index 0 = uniform
    values: list = field(default_factory=list)
    report: dict = field(default_factory=dict)


def _weight_stats(d, w, bandit=None):
    w = np.asarray(w, dtype=np.float64)
    row = {
        "weight_std": float((len(w) * w).std()),
        "effective_sample_size": float(1.0 / np.sum(w**2)),
        "mean_reward": float(np.dot(w, d.rewards.astype(np.float64))),
    }
    if bandit is not None:
        row["mean_expected_reward"] = float(np.dot(w, bandit.expected_reward(d.actions)))
    if d.has_trajectories:
        tr = compute_trajectory_returns(d)
        row["mean_return"] = float(np.dot(w, tr.per_transition_return))
    return row


def compute_priorities(d, cfg, seed) -> PriorityRun:
    """Priority weights for ``d`` plus a per-iteration diagnostic report."""
    pcfg = cfg.odpr()
    bandit = cfg.bandit() if is_bandit(cfg) else None
    uniform = PriorityWeights.uniform(len(d))
    report = {"kind": pcfg.kind, "n": len(d), "seed": seed, "iterations": [], "flags": []}
    history, values = [uniform], []

    if pcfg.kind in ("advantage", "abs_td") and not cfg.has_section("fit"):
        raise ValueError(f"{pcfg.kind} requires value fitting (add a fit section)")
    if pcfg.kind == "advantage":
        for rnd in odpr_a_rounds(d, pcfg, cfg.fit(seed)):
            history.append(rnd.weights)
            values.append(rnd.value)
        final = finalize_weights(history[-1].w, pcfg)
    elif pcfg.kind == "return":
        if not d.has_trajectories:
            raise ValueError("return priority requires trajectory bounds")
        tr = compute_trajectory_returns(d)
        if np.ptp(tr.returns) == 0:
            report["flags"].append("degenerate: equal returns")
        final = return_priority(tr, pcfg.p_base)
        history.append(final)
    else:
        v = fit_value_td(d, None, cfg.fit(seed)) if pcfg.kind == "abs_td" else None
        if v is not None:
            values.append(v)
        final = baseline_priority(d, pcfg, v)
        history.append(final)

    for k, w in enumerate(history):
        report["iterations"].append({"k": k, **_weight_stats(d, w, bandit)})
    report["final"] = _weight_stats(d, final, bandit)
    return PriorityRun(final, history, values, report)


def write_priority_artifacts(run: PriorityRun, d, out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(d, out / "dataset.odprds")
    save_weights(run.weights.w, out / "weights.odprwt", d)
    for k, w in enumerate(run.history):
        save_weights(w.w, out / f"weights_iter{k}.odprwt", d)
    for k, v in enumerate(run.values, start=1):
        save_value_fn(v, out / f"value_iter{k}.odprvf")
    (out / "report.json").write_text(json.dumps(run.report, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# bandit study
# ---------------------------------------------------------------------------

CSV_FIELDS = ("seed", "algo", "wiring") + METRIC_FIELDS


def _fmt(x):
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def _run_bandit_seed(cfg, seed, out):
    d = make_dataset(cfg, seed)
    bandit = cfg.bandit()
    if cfg.get("priority.weights") is not None:
        weights = load_weights(cfg.get("priority.weights"), d)
        run = PriorityRun(weights, [PriorityWeights.uniform(len(d)), weights])
        run.report = {"iterations": [{"k": k, **_weight_stats(d, w, bandit)} for k, w in enumerate(run.history)]}
    else:
        run = compute_priorities(d, cfg, seed)
    if out is not None:
        write_priority_artifacts(run, d, out)

    tcfg = cfg.train(seed)
    alpha = cfg.get("train.alpha", 1.0)
    rows, finals = [], []
    for algo in cfg.get("train.algos", ("td3bc",)):
        for wiring in cfg.get("train.wirings", ("vanilla", "DR")):
            weights = None if wiring == "vanilla" else run.weights.w
            samplers = DecoupledSamplers.build(len(d), weights, seed=seed)
            if algo == "td3bc":
                policy = train_td3bc_bandit(d, samplers, tcfg, alpha=alpha, wiring=wiring, bandit=bandit)
                log = policy.log
            else:
                policy = train_bc(d, samplers, tcfg)
                a = policy.act()
                log = [(tcfg.steps, "", "", a[0], a[1], float(bandit.expected_reward(a)[0]))]
            rows.extend((seed, algo, wiring, *entry) for entry in log)
            score = evaluate_bandit(policy, bandit)
            finals.append({"seed": seed, "algo": algo, "wiring": wiring,
                           "action": policy.act().tolist(),
                           "distance_to_optimal": score.distance_to_optimal,
                           "expected_reward": score.expected_reward})
    sweep = [it["mean_reward"] for it in run.report["iterations"]]
    return rows, finals, sweep


def _mean_std(xs):
    xs = np.asarray(xs, dtype=np.float64)
    return {"mean": float(xs.mean()), "std": float(xs.std())}


def run_bandit(cfg, seeds, out=None):
    """Train the configured learners on every seed; returns ``(csv_text, summary)``."""
    out = Path(out) if out is not None else None
    all_rows, all_finals, sweeps = [], [], []
    for seed in seeds:
        rows, finals, sweep = _run_bandit_seed(cfg, seed, None if out is None else out / f"seed_{seed}")
        all_rows.extend(rows)
        all_finals.extend(finals)
        sweeps.append(sweep)

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(CSV_FIELDS)
    for row in all_rows:
        writer.writerow([_fmt(x) for x in row])

    variants = {}
    for f in all_finals:
        variants.setdefault(f"{f['algo']}/{f['wiring']}", []).append(f)
    summary = {
        "seeds": list(seeds),
        "variants": {
            name: {
                "distance_to_optimal": _mean_std([f["distance_to_optimal"] for f in fs]),
                "expected_reward": _mean_std([f["expected_reward"] for f in fs]),
                "runs": fs,
            }
            for name, fs in variants.items()
        },
    }
    lengths = {len(s) for s in sweeps}
    if len(lengths) == 1:
        table = np.array(sweeps)
        summary["k_sweep"] = [{"k": k, "mean_reward": float(table[:, k].mean()),
                               "std": float(table[:, k].std()), "per_seed": table[:, k].tolist()}
                              for k in range(table.shape[1])]
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_bytes(buf.getvalue().encode())
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return buf.getvalue(), summary


# ---------------------------------------------------------------------------
# tabular study
# ---------------------------------------------------------------------------

def run_tabular(cfg, seeds):
    """Exact prioritization and constrained search on tabular MDPs.

    For each problem: ``J`` of the behavior policy, of each prioritized round,
    and of the KL-constrained search started from the behavior policy and from
    the final prioritized one.
    """
    kind = cfg.get("tabular.mdp", "random")
    rounds = cfg.get("tabular.iterations", 5)
    eps = cfg.get("tabular.epsilon", 0.1)
    n_states = cfg.get("tabular.n_states", (2, 8))
    n_actions = cfg.get("tabular.n_actions", (2, 4))
    trials = cfg.get("tabular.trials", 20) if kind == "random" else 1
    records = []
    for seed in seeds:
        rng = make_rng(seed, "data")
        for t in range(trials):
            if kind == "random":
                ns = int(rng.integers(n_states[0], n_states[-1] + 1))
                na = int(rng.integers(n_actions[0], n_actions[-1] + 1))
                mdp = random_mdp(ns, na, seed=int(rng.integers(2**31)), gamma=0.9)
                beta = random_policy(ns, na, rng)
            else:
                mdp = build_concat_mdp()[0]
                beta = np.full((3, 2), 0.5)
            chain = iterate_prioritized_policy(mdp, beta, rounds)
            j = [exact_policy_value(mdp, p) for p in chain]
            records.append({
                "seed": seed, "trial": t, "n_states": mdp.n_states, "n_actions": mdp.n_actions,
                "J_prioritized": j,
                "J_search_from_behavior": exact_policy_value(mdp, constrained_tabular_search(mdp, beta, eps)),
                "J_search_from_prioritized": exact_policy_value(mdp, constrained_tabular_search(mdp, chain[-1], eps)),
                "monotone": bool(np.all(np.diff(j) >= -1e-9)),
            })
    return {"mdp": kind, "epsilon": eps, "iterations": rounds,
            "passed": all(r["monotone"] for r in records), "records": records}


# ---------------------------------------------------------------------------
# figure data
# ---------------------------------------------------------------------------

def export_figures(run_dir, out=None, draws=None):
    """Write ``scatter_iter{k}.csv`` (resampled actions per iteration) and
    ``policy_trajectories.csv`` (logged actor actions) from a bandit run directory."""
    run_dir = Path(run_dir)
    metrics = run_dir / "metrics.csv"
    if not metrics.exists():
        raise FileNotFoundError(f"no metrics.csv in {run_dir}")
    out = Path(out) if out is not None else run_dir / "figures"
    out.mkdir(parents=True, exist_ok=True)
    written = []

    seed_dirs = sorted((p for p in run_dir.glob("seed_*") if (p / "dataset.odprds").exists()),
                       key=lambda p: int(p.name.split("_", 1)[1]))
    by_k = {}
    for sd in seed_dirs:
        seed = int(sd.name.split("_", 1)[1])
        d = load_dataset(sd / "dataset.odprds")
        n = draws or len(d)
        for wf in sorted(sd.glob("weights_iter*.odprwt"), key=lambda p: int(p.stem[len("weights_iter"):])):
            k = int(wf.stem[len("weights_iter"):])
            w = load_weights(wf, d)
            picks = IndexSampler.weighted(w.w, np.random.default_rng([seed, k])).sample_batch(n)
            by_k.setdefault(k, []).extend((seed, *d.actions[i].tolist()) for i in picks)
    for k in sorted(by_k):
        path = out / f"scatter_iter{k}.csv"
        _write_csv(path, ("seed", "action_x", "action_y"), by_k[k])
        written.append(path)

    with metrics.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    traj = [(r["seed"], r["algo"], r["wiring"], r["step"], r["action_x"], r["action_y"]) for r in rows]
    path = out / "policy_trajectories.csv"
    _write_csv(path, ("seed", "algo", "wiring", "step", "action_x", "action_y"), traj)
    written.append(path)
    return written


def _write_csv(path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(x) for x in row])
    Path(path).write_bytes(buf.getvalue().encode())
