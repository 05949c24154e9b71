"""Priority weights for offline datasets.

``advantage`` (ODPR-A) fits a value function, turns one-step TD advantages into
linear priorities and multiplies them across rounds, each round evaluating the
behavior policy induced by the previous weights.  ``return`` (ODPR-R) weights
whole trajectories by min-max normalized return.  ``abs_td``, ``percentage``
and ``traj_uniform`` are the comparison schemes.
"""

from __future__ import annotations

import dataclasses
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from odpr.dataset import Dataset, TrajectoryReturns, compute_trajectory_returns, content_hash
from odpr.rng import stream_seed
from odpr.value import FitConfig, ValueFitDivergence, fit_value_td

WEIGHTS_MAGIC = b"ODPRWT01"
_WT_HEADER = struct.Struct("<8sQQ")
KINDS = ("advantage", "return", "abs_td", "traj_uniform", "percentage")


class WeightFileError(ValueError):
    pass


class WeightPairingError(WeightFileError):
    """Weight file was computed for a different dataset."""


@dataclass(frozen=True, eq=False)
class PriorityWeights:
    """Non-negative weights over a dataset's transitions that sum to one."""

    w: np.ndarray

    def __post_init__(self):
        w = np.array(self.w, dtype=np.float64).reshape(-1)
        if w.size == 0:
            raise ValueError("empty weight vector")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and non-negative")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
        w.flags.writeable = False
        object.__setattr__(self, "w", w)

    @classmethod
    def uniform(cls, n):
        return cls(np.full(n, 1.0 / n))

    @classmethod
    def normalize(cls, x):
        """Scale ``x`` to sum 1; an all-zero vector becomes uniform."""
        x = np.asarray(x, dtype=np.float64)
        total = x.sum()
        if total <= 0:
            return cls.uniform(len(x))
        return cls(x / total)

    def __array__(self, dtype=None, copy=None):
        return self.w if dtype is None else self.w.astype(dtype)

    def __len__(self):
        return len(self.w)

    @property
    def scaled(self):
        """``N * w``: mean-one weights."""
        return len(self.w) * self.w

    @property
    def effective_sample_size(self):
        return float(1.0 / np.sum(self.w**2))


@dataclass(frozen=True)
class OdprConfig:
    kind: str = "advantage"
    iterations: int = 4
    sigma: float | None = 2.0
    p_base: float = 0.0
    clip_below_one: bool = False
    top_fraction: float = 0.1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown priority kind {self.kind!r}; expected one of {KINDS}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.sigma is not None and not self.sigma > 0:
            raise ValueError("sigma must be positive (or None to disable scaling)")
        if self.p_base < 0:
            raise ValueError("p_base must be non-negative")
        if not 0.0 < self.top_fraction <= 1.0:
            raise ValueError("top_fraction must be in (0, 1]")


# ---------------------------------------------------------------------------
# priority functions
# ---------------------------------------------------------------------------

def advantage_one_step(d: Dataset, v, gamma=None):
    """``r + gamma (1 - done) V(s') - V(s)`` for every transition."""
    gamma = v.gamma if gamma is None else gamma
    nxt = np.where(d.terminals, 0.0, v.predict(d.next_states))
    a = d.rewards.astype(np.float64) + gamma * nxt - v.predict(d.states)
    if not np.all(np.isfinite(a)):
        raise ValueError("non-finite advantage")
    return a


def linear_priority(a, support=None) -> PriorityWeights:
    """Weights proportional to ``a - min(a)``.

    The minimum runs over ``support`` (all transitions by default); transitions
    outside the support get weight 0.  All-equal advantages give uniform
    weights over the support.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.size == 0:
        raise ValueError("empty advantage vector")
    support = np.ones(a.shape, dtype=bool) if support is None else np.asarray(support, dtype=bool)
    shifted = np.where(support, a - a[support].min(), 0.0)
    if shifted.sum() <= 0:
        return PriorityWeights.normalize(support.astype(np.float64))
    return PriorityWeights(shifted / shifted.sum())


def unnormalized_return_priority(returns, p_base=0.0):
    """``(G - G_min) / (G_max - G_min) + p_base`` per entry; all-equal returns give ``1 + p_base``."""
    g = np.asarray(returns, dtype=np.float64)
    span = g.max() - g.min()
    if span <= 0:
        return np.full(g.shape, 1.0 + p_base)
    return (g - g.min()) / span + p_base


def return_priority(tr, p_base=0.0) -> PriorityWeights:
    """Trajectory-return priorities broadcast to transitions, normalized to sum 1."""
    g = tr.per_transition_return if isinstance(tr, TrajectoryReturns) else tr
    return PriorityWeights.normalize(unnormalized_return_priority(g, p_base))


def abs_td_priority(a) -> PriorityWeights:
    return PriorityWeights.normalize(np.abs(np.asarray(a, dtype=np.float64)))


def percentage_priority(tr: TrajectoryReturns, lengths, top_fraction) -> PriorityWeights:
    """Uniform over transitions of the best ``ceil(top_fraction * M)`` trajectories."""
    m = len(tr.returns)
    n_top = max(1, math.ceil(top_fraction * m - 1e-12))
    order = np.argsort(-tr.returns, kind="stable")
    chosen = np.zeros(m, dtype=bool)
    chosen[order[:n_top]] = True
    return PriorityWeights.normalize(np.repeat(chosen, lengths).astype(np.float64))


def scale_std(w, sigma) -> PriorityWeights:
    """Affinely rescale ``N * w`` to mean 1 and population std ``sigma``.

    Entries pushed below zero are floored and the vector renormalized, so the
    achieved std can fall short of ``sigma`` when flooring kicks in.
    """
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    w = np.asarray(w, dtype=np.float64)
    x = len(w) * w
    std = x.std()
    if std <= 1e-15:
        return PriorityWeights(w / w.sum())
    y = np.maximum(1.0 + (x - 1.0) * (sigma / std), 0.0)
    return PriorityWeights(y / y.sum())


def clip_below_one(w) -> PriorityWeights:
    """Raise every ``N * w`` below 1 up to 1, then renormalize."""
    w = np.asarray(w, dtype=np.float64)
    return PriorityWeights.normalize(np.maximum(len(w) * w, 1.0))


def finalize_weights(w, cfg: OdprConfig) -> PriorityWeights:
    """Optional clipping, then optional std scaling."""
    out = PriorityWeights.normalize(np.asarray(w, dtype=np.float64))
    if cfg.clip_below_one:
        out = clip_below_one(out)
    if cfg.sigma is not None:
        out = scale_std(out, cfg.sigma)
    return out


# ---------------------------------------------------------------------------
# iterative advantage prioritization
# ---------------------------------------------------------------------------

@dataclass
class OdprRound:
    iteration: int
    value: object
    advantages: np.ndarray
    weights: PriorityWeights


def odpr_a_rounds(d: Dataset, cfg: OdprConfig, fit: FitConfig):
    """Yield one :class:`OdprRound` per iteration with the accumulated (unscaled) weights.

    Each round refits the value function from scratch on data sampled with
    the current weights.
    """
    omega = np.full(len(d), 1.0 / len(d))
    for k in range(1, cfg.iterations + 1):
        seed = int(stream_seed(fit.seed, f"odpr-round-{k}").generate_state(1)[0])
        round_fit = dataclasses.replace(fit, seed=seed)
        try:
            v = fit_value_td(d, None if k == 1 else omega, round_fit)
        except ValueFitDivergence as err:
            raise ValueFitDivergence(err.step, err.loss, iteration=k) from err
        a = advantage_one_step(d, v)
        p = linear_priority(a, support=omega > 0)
        omega = omega * p.w
        if omega.sum() <= 0:
            raise ValueError(f"all priority mass vanished at iteration {k}")
        omega = omega / omega.sum()
        yield OdprRound(k, v, a, PriorityWeights(omega))


def iterate_odpr_a(d: Dataset, cfg: OdprConfig, fit: FitConfig) -> PriorityWeights:
    if cfg.kind != "advantage":
        raise ValueError("iterate_odpr_a needs kind='advantage'")
    last = None
    for last in odpr_a_rounds(d, cfg, fit):
        pass
    return finalize_weights(last.weights, cfg)


def baseline_priority(d: Dataset, cfg: OdprConfig, v=None) -> PriorityWeights:
    if cfg.kind == "abs_td":
        if v is None:
            raise ValueError("abs_td requires value fitting")
        return abs_td_priority(advantage_one_step(d, v))
    if cfg.kind in ("percentage", "traj_uniform"):
        if not d.has_trajectories:
            raise ValueError(f"{cfg.kind} requires trajectory bounds")
        tr = compute_trajectory_returns(d)
        if cfg.kind == "traj_uniform":
            return return_priority(tr, cfg.p_base)
        return percentage_priority(tr, d.trajectory_bounds[:, 1], cfg.top_fraction)
    raise ValueError(f"{cfg.kind!r} is not a baseline priority kind")


# ---------------------------------------------------------------------------
# weight files
# ---------------------------------------------------------------------------

def save_weights(w, path, dataset: Dataset) -> None:
    """Write ``ODPRWT01``: N, dataset content hash, N float64 weights."""
    w = np.asarray(w, dtype="<f8")
    if len(w) != len(dataset):
        raise WeightPairingError(f"{len(w)} weights for a dataset of {len(dataset)} transitions")
    Path(path).write_bytes(_WT_HEADER.pack(WEIGHTS_MAGIC, len(w), content_hash(dataset)) + w.tobytes())


def read_weight_file(path):
    """``(weights, dataset_hash)`` from a weight file, without pairing checks."""
    raw = Path(path).read_bytes()
    if len(raw) < _WT_HEADER.size:
        raise WeightFileError("weight file too short")
    magic, n, digest = _WT_HEADER.unpack_from(raw)
    if magic != WEIGHTS_MAGIC:
        raise WeightFileError(f"bad magic {magic!r}")
    if n == 0:
        raise WeightFileError("weight file holds no weights")
    if len(raw) != _WT_HEADER.size + 8 * n:
        raise WeightFileError(f"expected {n} weights, file size {len(raw)} disagrees")
    w = np.frombuffer(raw, dtype="<f8", count=n, offset=_WT_HEADER.size).astype(np.float64)
    return PriorityWeights(w), digest


def load_weights(path, dataset: Dataset | None = None) -> PriorityWeights:
    """Read a weight file; when ``dataset`` is given, its length and hash must match."""
    w, digest = read_weight_file(path)
    if dataset is not None:
        if len(w) != len(dataset):
            raise WeightPairingError(f"weights for {len(w)} transitions, dataset has {len(dataset)}")
        if digest != content_hash(dataset):
            raise WeightPairingError("dataset hash mismatch: weights were computed for different data")
    return w
