import numpy as np
import pytest

from odpr.dataset import Dataset
from odpr.envs import GaussianBandit, random_mdp, random_policy, sample_bandit_dataset
from odpr.suites import fd_gradient, gradient_relative_error
from odpr.value import (
    FitConfig, Mlp, SingularSystemError, TabularValueFn, ValueFitDivergence, fit_value_td,
    load_value_fn, save_value_fn, solve_tabular_value, solve_td_fixed_point, _solve,
)


def value_iteration(mdp, probs, iters=5000):
    """Independent oracle: repeated Bellman backups."""
    V = np.zeros(mdp.n_states)
    for _ in range(iters):
        V = np.sum(probs * (mdp.reward + mdp.gamma * mdp.transition @ V), axis=1)
        V[mdp.terminal] = 0.0
    return V


@pytest.mark.parametrize("activation", ["tanh", "relu"])
def test_mlp_gradients_match_finite_differences(activation):
    rng = np.random.default_rng(4)
    net = Mlp.init((3, 5, 4, 2), rng, activation)
    net.params += 0.3 * rng.normal(size=net.params.shape)
    x, y = rng.normal(size=(7, 3)), rng.normal(size=(7, 2))
    _, g = net.mse_gradient(x, y)
    assert gradient_relative_error(g, fd_gradient(net, x, y)).max() < 1e-4


def test_input_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    net = Mlp.init((2, 6, 1), rng)
    x = rng.normal(size=(1, 2))
    g = net.input_gradient(x)[0]
    h = 1e-6
    fd = [(net(x + h * e)[0, 0] - net(x - h * e)[0, 0]) / (2 * h) for e in np.eye(2)]
    assert np.allclose(g, fd, atol=1e-8)


def test_mlp_rejects_wrong_param_count():
    with pytest.raises(ValueError):
        Mlp((2, 3, 1), np.zeros(5))


def test_exact_policy_value_matches_value_iteration():
    rng = np.random.default_rng(0)
    for seed in range(10):
        mdp = random_mdp(5, 3, seed=seed)
        pi = random_policy(5, 3, rng)
        assert np.allclose(solve_tabular_value(mdp, pi).values, value_iteration(mdp, pi.probs), atol=1e-9)


def test_singular_system_raises():
    with pytest.raises(SingularSystemError):
        _solve(np.array([[1.0, 1.0], [1.0, 1.0]]), np.ones(2))


def one_hot_chain():
    """s0 -> s1 (r=1) -> terminal (r=2), plus s0 -> s1 with r=0."""
    e = np.eye(3)
    return Dataset(e[[0, 1, 0]], np.zeros((3, 1)), [1.0, 2.0, 0.0], e[[1, 2, 1]], [0, 1, 0])


def test_td_fixed_point_by_hand():
    d = one_hot_chain()
    v = solve_td_fixed_point(d, None, gamma=0.5)
    # V(s1) = 2, V(s0) = mean(1, 0) + 0.5 * 2
    assert np.allclose(v.values, [1.5, 2.0, 0.0])
    w = np.array([0.5, 0.25, 0.25])
    v = solve_td_fixed_point(d, w, gamma=0.5)
    assert np.isclose(v.values[0], (0.5 * 1 + 0.25 * 0) / 0.75 + 1.0)


def test_sgd_tabular_fit_approaches_fixed_point():
    d = one_hot_chain()
    cfg = FitConfig(gamma=0.5, steps=3000, batch_size=32, learning_rate=0.05, seed=1)
    v = fit_value_td(d, None, cfg)
    assert v.kind == "tabular"
    assert np.allclose(v.predict(d.states[:2]), [1.5, 2.0], atol=0.05)


def test_mlp_fit_on_bandit_learns_mean_reward():
    b = GaussianBandit(reward_std=0.0)
    d = sample_bandit_dataset(b, 50, seed=0)
    v = fit_value_td(d, None, FitConfig(steps=800, batch_size=64, learning_rate=0.02, hidden_sizes=(8,)))
    assert v.kind == "mlp"
    assert abs(v.predict(d.states[:1])[0] - 1.0) < 0.1


def test_fit_is_deterministic():
    d = one_hot_chain()
    cfg = FitConfig(gamma=0.9, steps=50, batch_size=8, seed=3)
    assert np.array_equal(fit_value_td(d, None, cfg).heads[0].values, fit_value_td(d, None, cfg).heads[0].values)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported():
    d = Dataset(np.ones((4, 1)), np.zeros((4, 1)), [1e3] * 4, np.ones((4, 1)), [0] * 4)
    cfg = FitConfig(gamma=0.99, steps=200, batch_size=4, learning_rate=10.0, hidden_sizes=(4,), activation="relu")
    with pytest.raises(ValueFitDivergence):
        fit_value_td(d, None, cfg)


def test_value_file_roundtrip(tmp_path):
    d = sample_bandit_dataset(GaussianBandit(), 10, seed=0)
    v = fit_value_td(d, None, FitConfig(steps=5, hidden_sizes=(4,)))
    save_value_fn(v, tmp_path / "v.odprvf")
    back = load_value_fn(tmp_path / "v.odprvf")
    assert np.array_equal(back.predict(d.states), v.predict(d.states))
    t = TabularValueFn([1.0, 2.0], 0.9)
    from odpr.value import FittedValue
    save_value_fn(FittedValue([t], 0.9), tmp_path / "t.odprvf")
    assert np.array_equal(load_value_fn(tmp_path / "t.odprvf").heads[0].values, t.values)
