import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from odpr.sampling import (
    DecoupledSamplers, IndexSampler, expected_resampled_loss, expected_reweighted_loss, reweighted_loss,
)


def test_weighted_sampler_never_draws_zero_weight():
    s = IndexSampler.weighted([0.0, 0.5, 0.0, 0.5], np.random.default_rng(0))
    idx = s.sample_batch(20000)
    assert set(np.unique(idx)) == {1, 3}


def test_frequencies_close_to_target():
    w = np.array([0.1, 0.2, 0.3, 0.4])
    freq = np.bincount(IndexSampler.weighted(w, np.random.default_rng(1)).sample_batch(200_000), minlength=4)
    assert np.allclose(freq / 200_000, w, rtol=0.03)


def test_same_seed_same_draws():
    w = np.random.default_rng(0).dirichlet(np.ones(30))
    a = IndexSampler.weighted(w, np.random.default_rng(5)).sample_batch(100)
    b = IndexSampler.weighted(w, np.random.default_rng(5)).sample_batch(100)
    assert np.array_equal(a, b)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 50), st.integers(1, 40), st.integers(1, 7))
def test_pregenerated_stream_replays_on_demand(n, total, batch):
    w = np.random.default_rng(n).dirichlet(np.ones(n))
    live = IndexSampler.weighted(w, np.random.default_rng(9))
    pre = IndexSampler.weighted(w, np.random.default_rng(9)).pregenerate_stream(total)
    draws = 3 * total
    got_live = np.concatenate([live.sample_batch(batch) for _ in range(draws // batch + 1)])
    got_pre = np.concatenate([pre.sample_batch(batch) for _ in range(draws // batch + 1)])
    assert np.array_equal(got_live, got_pre)
    assert pre.regenerations >= 2


def test_uniform_sampler_in_range():
    idx = IndexSampler.uniform(7, np.random.default_rng(0)).sample_batch(10000)
    assert idx.min() == 0 and idx.max() == 6


def test_invalid_weights_rejected():
    for bad in ([0.5, 0.6], [-0.1, 1.1], [np.nan, 1.0]):
        with pytest.raises(ValueError):
            IndexSampler.weighted(bad)
    with pytest.raises(ValueError):
        IndexSampler(3, [0.5, 0.5])


def test_eval_sampler_ignores_actor_weights():
    n = 20
    runs = [DecoupledSamplers.build(n, w, seed=4).eval_sampler.sample_batch(500)
            for w in (None, np.eye(n)[0], np.full(n, 1 / n))]
    assert all(np.array_equal(runs[0], r) for r in runs)


def test_actor_uses_weights():
    ds = DecoupledSamplers.build(5, np.eye(5)[2], seed=0)
    assert np.all(ds.actor_sampler.sample_batch(50) == 2)
    assert ds.n == 5


def test_reweighted_loss_by_hand():
    losses = np.array([1.0, 2.0, 3.0])
    w = np.array([0.2, 0.3, 0.5])
    # (3 * 0.2 * 1 + 3 * 0.5 * 3) / 2
    assert reweighted_loss(losses, w, [0, 2]) == pytest.approx(2.55)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10_000))
def test_resample_reweight_expectations_agree(n, seed):
    rng = np.random.default_rng(seed)
    losses, w = rng.exponential(size=n), rng.dirichlet(np.ones(n))
    exact = expected_resampled_loss(losses, w)
    assert abs(exact - expected_reweighted_loss(losses, w, batch_size=2)) <= 1e-12 * max(1, exact)
