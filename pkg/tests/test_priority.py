
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import chain_dataset
from odpr.dataset import compute_trajectory_returns
from odpr.envs import GaussianBandit, build_concat_mdp, sample_bandit_dataset
from odpr.priority import (
    OdprConfig, PriorityWeights, WeightFileError, WeightPairingError, abs_td_priority, baseline_priority,
    clip_below_one, finalize_weights, iterate_odpr_a, linear_priority, load_weights, odpr_a_rounds,
    percentage_priority, read_weight_file, return_priority, save_weights, scale_std,
    unnormalized_return_priority,
)
from odpr.value import FitConfig

finite = st.floats(-1e3, 1e3, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 40), elements=finite))
def test_linear_priority_monotone_and_normalized(a):
    w = linear_priority(a).w
    assert np.isclose(w.sum(), 1.0) and np.all(w >= 0)
    order = np.argsort(a, kind="stable")
    assert np.all(np.diff(w[order]) >= -1e-15)


def test_linear_priority_hand_values():
    assert np.allclose(linear_priority([1.0, 2.0, 4.0]).w, [0, 1 / 4, 3 / 4])
    assert np.allclose(linear_priority([3.0, 3.0]).w, [0.5, 0.5])
    # minimum over the support only
    w = linear_priority([-10.0, 1.0, 2.0], support=[False, True, True]).w
    assert np.allclose(w, [0, 0, 1])


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 40), elements=finite), st.floats(0, 2))
def test_return_priority_monotone(g, p_base):
    w = return_priority(g, p_base).w
    assert np.isclose(w.sum(), 1.0)
    order = np.argsort(g, kind="stable")
    assert np.all(np.diff(w[order]) >= -1e-15)


def test_return_priority_binary_with_base():
    u = unnormalized_return_priority([0.0, 1.0, 1.0, 0.0], p_base=0.2)
    assert np.allclose(u, [0.2, 1.2, 1.2, 0.2])
    assert np.allclose(return_priority([0.0, 1.0], 0.2).w, [0.2 / 1.4, 1.2 / 1.4])


def test_equal_returns_give_uniform():
    assert np.array_equal(return_priority(np.full(4, 7.0)).w, np.full(4, 0.25))


def test_abs_td_priority():
    assert np.allclose(abs_td_priority([-1.0, 3.0]).w, [0.25, 0.75])


def test_percentage_uses_ceiling():
    d = chain_dataset([2, 1, 3, 1, 1], seed=0)
    tr = compute_trajectory_returns(d)
    w = percentage_priority(tr, d.trajectory_bounds[:, 1], 0.3).w  # ceil(1.5) = 2 trajectories
    top = np.argsort(-tr.returns)[:2]
    chosen = np.isin(d.trajectory_index(), top)
    assert np.allclose(w[chosen], 1.0 / chosen.sum()) and np.all(w[~chosen] == 0)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(2, 50), elements=st.floats(0.01, 10)), st.floats(0.1, 5))
def test_scale_std_hits_sigma_without_flooring(raw, sigma):
    w = raw / raw.sum()
    x = len(w) * w
    if x.std() < 1e-6:
        return
    out = scale_std(w, sigma).w
    assert np.isclose(out.sum(), 1.0) and np.all(out >= 0)
    if np.all(1 + (x - 1) * sigma / x.std() >= 0):
        assert np.isclose((len(w) * out).std(), sigma, rtol=1e-9)


def test_scale_std_sigma_two_by_hand():
    w = np.array([0.1, 0.2, 0.3, 0.4])
    out = scale_std(w, 0.5).w
    assert np.isclose((4 * out).std(), 0.5)
    assert np.all(np.diff(out) > 0)


def test_clip_below_one():
    w = np.array([0.05, 0.15, 0.8])
    out = clip_below_one(w).w
    lifted = np.array([1.0, 1.0, 2.4])
    assert np.allclose(out, lifted / lifted.sum())


def test_finalize_order_clip_then_scale():
    w = np.array([0.05, 0.15, 0.8])
    cfg = OdprConfig(sigma=0.3, clip_below_one=True)
    assert np.allclose(finalize_weights(w, cfg).w, scale_std(clip_below_one(w), 0.3).w)


def test_config_validation():
    for bad in ({"kind": "nope"}, {"iterations": 0}, {"sigma": 0}, {"p_base": -1}, {"top_fraction": 0}):
        with pytest.raises(ValueError):
            OdprConfig(**bad)


def test_weights_validation():
    with pytest.raises(ValueError):
        PriorityWeights([0.5, 0.6])
    with pytest.raises(ValueError):
        PriorityWeights([-0.5, 1.5])
    assert PriorityWeights.uniform(4).effective_sample_size == pytest.approx(4.0)


def test_bandit_rounds_follow_reward_powers():
    # constant state: V is one number, so each round multiplies by r minus
    # the smallest reward still carrying weight
    d = sample_bandit_dataset(GaussianBandit(), 50, seed=2)
    fit = FitConfig(steps=20, hidden_sizes=(4,))
    r = d.rewards.astype(np.float64)
    expected = np.ones_like(r)
    for rnd in odpr_a_rounds(d, OdprConfig(iterations=3, sigma=None), fit):
        expected = expected * (r - r[expected > 0].min())
        assert np.allclose(rnd.weights.w, expected / expected.sum(), atol=1e-9)


def test_concat_example_weights():
    _, d = build_concat_mdp()
    w = iterate_odpr_a(d, OdprConfig(iterations=1, sigma=None), FitConfig(gamma=1.0, solver="exact")).w
    assert np.allclose(w, [0.5, 0, 0, 0.5])
    assert np.array_equal(baseline_priority(d, OdprConfig(kind="traj_uniform")).w, np.full(4, 0.25))


def test_abs_td_needs_value():
    _, d = build_concat_mdp()
    with pytest.raises(ValueError, match="abs_td requires value fitting"):
        baseline_priority(d, OdprConfig(kind="abs_td"))


def test_weight_file_roundtrip(tmp_path, small_dataset):
    w = np.random.default_rng(0).dirichlet(np.ones(len(small_dataset)))
    p = tmp_path / "w.odprwt"
    save_weights(w, p, small_dataset)
    back = load_weights(p, small_dataset)
    assert back.w.tobytes() == w.tobytes()
    save_weights(back.w, tmp_path / "again.odprwt", small_dataset)
    assert p.read_bytes() == (tmp_path / "again.odprwt").read_bytes()


def test_weight_pairing_rejected(tmp_path, small_dataset):
    p = tmp_path / "w.odprwt"
    save_weights(np.full(len(small_dataset), 1 / len(small_dataset)), p, small_dataset)
    same_len = chain_dataset([3, 1, 4], seed=99)
    with pytest.raises(WeightPairingError, match="hash"):
        load_weights(p, same_len)
    with pytest.raises(WeightPairingError):
        load_weights(p, chain_dataset([2], seed=1))
    with pytest.raises(WeightPairingError):
        save_weights(np.ones(3) / 3, p, small_dataset)


def test_weight_file_corruption(tmp_path, small_dataset):
    p = tmp_path / "w.odprwt"
    save_weights(np.full(len(small_dataset), 1 / len(small_dataset)), p, small_dataset)
    raw = p.read_bytes()
    for blob in (raw[:-3], b"BADMAGIC" + raw[8:], raw[:5]):
        p.write_bytes(blob)
        with pytest.raises(WeightFileError):
            read_weight_file(p)
