"""Index samplers for decoupled prioritized resampling.

Priorities are static once computed, so weighted draws use a cumulative-sum
array with binary search instead of a sum-tree.  Every draw consumes exactly
one uniform double from the sampler's generator, which makes pre-generated
index streams replay the same sequence as on-demand draws.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from odpr.rng import make_rng


class IndexSampler:
    """Draws dataset indices i.i.d. with replacement.

    Use :meth:`uniform` or :meth:`weighted` to construct.  A sampler owns its
    generator and cursor, so it is not safe to share between threads.
    """

    def __init__(self, n, weights=None, rng=None):
        self.n = int(n)
        if self.n < 1:
            raise ValueError("sampler needs at least one index")
        self.rng = rng if rng is not None else np.random.default_rng()
        self.weights = None
        self._cdf = None
        if weights is not None:
            w = np.asarray(weights, dtype=np.float64)
            if w.shape != (self.n,):
                raise ValueError(f"weights shape {w.shape} != ({self.n},)")
            if not np.all(np.isfinite(w)) or np.any(w < 0):
                raise ValueError("weights must be finite and non-negative")
            total = w.sum()
            if not abs(total - 1.0) <= 1e-9:
                raise ValueError(f"weights must sum to 1, got {total!r}")
            self.weights = w
            self._cdf = np.cumsum(w)
        self._stream = None
        self._cursor = 0
        self._stream_total = 0
        self.regenerations = 0

    @classmethod
    def uniform(cls, n, rng=None):
        return cls(n, None, rng)

    @classmethod
    def weighted(cls, weights, rng=None):
        w = np.asarray(weights)
        return cls(len(w), w, rng)

    @property
    def mode(self):
        return "uniform" if self.weights is None else "weighted"

    def probabilities(self):
        if self.weights is None:
            return np.full(self.n, 1.0 / self.n)
        return self.weights.copy()

    def _draw(self, k):
        u = self.rng.random(k)
        if self._cdf is None:
            idx = (u * self.n).astype(np.int64)
        else:
            # side="right" never lands on a zero-weight index
            idx = np.searchsorted(self._cdf, u * self._cdf[-1], side="right")
        return np.minimum(idx, self.n - 1)

    def pregenerate_stream(self, total):
        """Pre-sample ``total`` indices; later batches replay them in order.

        When the stream runs out, another ``total`` indices are drawn from the
        same generator, so the sequence matches on-demand sampling exactly.
        """
        if total < 1:
            raise ValueError("total must be >= 1")
        self._stream_total = int(total)
        self._stream = self._draw(self._stream_total)
        self._cursor = 0
        self.regenerations = 0
        return self

    def sample_batch(self, batch_size):
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self._stream is None:
            return self._draw(batch_size)
        parts = []
        need = batch_size
        while need:
            if self._cursor == len(self._stream):
                self._stream = self._draw(self._stream_total)
                self._cursor = 0
                self.regenerations += 1
            take = min(need, len(self._stream) - self._cursor)
            parts.append(self._stream[self._cursor:self._cursor + take])
            self._cursor += take
            need -= take
        return np.concatenate(parts)


def sample_batch(s: IndexSampler, batch_size):
    return s.sample_batch(batch_size)


def pregenerate_stream(s: IndexSampler, total):
    return s.pregenerate_stream(total)


@dataclass
class DecoupledSamplers:
    """Uniform sampler for policy evaluation, prioritized one for the actor.

    The two samplers draw from independent generators, so the evaluation
    index sequence does not depend on which weights the actor uses.
    """

    eval_sampler: IndexSampler
    actor_sampler: IndexSampler

    def __post_init__(self):
        if self.eval_sampler.n != self.actor_sampler.n:
            raise ValueError("samplers reference datasets of different length")

    @classmethod
    def build(cls, n, weights=None, seed=0):
        eval_sampler = IndexSampler.uniform(n, make_rng(seed, "eval-sampler"))
        actor_rng = make_rng(seed, "actor-sampler")
        if weights is None:
            actor = IndexSampler.uniform(n, actor_rng)
        else:
            actor = IndexSampler.weighted(weights, actor_rng)
        return cls(eval_sampler, actor)

    @property
    def n(self):
        return self.eval_sampler.n


def resampled_loss(per_example_losses, batch_indices):
    """Plain batch mean; with prioritized indices this estimates the prioritized loss."""
    return float(np.mean(np.asarray(per_example_losses, dtype=np.float64)[batch_indices]))


def reweighted_loss(per_example_losses, w, batch_indices):
    """Importance-style estimate ``sum(N * w_i * loss_i) / B`` over uniform indices."""
    losses = np.asarray(per_example_losses, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    idx = np.asarray(batch_indices)
    return float(np.sum(len(w) * w[idx] * losses[idx]) / len(idx))


def expected_resampled_loss(per_example_losses, w):
    return float(np.dot(np.asarray(w, dtype=np.float64), np.asarray(per_example_losses, dtype=np.float64)))


def expected_reweighted_loss(per_example_losses, w, batch_size=2):
    """Exact expectation of :func:`reweighted_loss` by enumerating every uniform batch."""
    n = len(per_example_losses)
    total = 0.0
    for batch in itertools.product(range(n), repeat=batch_size):
        total += reweighted_loss(per_example_losses, w, list(batch))
    return total / n**batch_size
