"""State-value fitting by TD regression.

Two parametrizations are supported: a lookup table for datasets whose states
are one-hot vectors, and a small feed-forward network with hand-written
reverse-mode gradients.  Both are fitted with plain minibatch SGD against a
periodically hard-copied target; tabular data can also be solved exactly for
the TD fixed point.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from odpr.rng import make_rng
from odpr.sampling import IndexSampler

VALUE_MAGIC = b"ODPRVF01"
ACTIVATIONS = ("tanh", "relu")


class ValueFitDivergence(RuntimeError):
    def __init__(self, step, loss, iteration=None):
        self.step = step
        self.loss = loss
        self.iteration = iteration
        where = f"step {step}" if iteration is None else f"iteration {iteration}, step {step}"
        super().__init__(f"value fit diverged at {where}: loss={loss!r}")


class SingularSystemError(np.linalg.LinAlgError):
    """Bellman system has no unique solution (e.g. an improper policy with gamma=1)."""


# ---------------------------------------------------------------------------
# feed-forward network
# ---------------------------------------------------------------------------

def n_params(layer_sizes):
    return sum((i + 1) * o for i, o in zip(layer_sizes[:-1], layer_sizes[1:]))


class Mlp:
    """Fully connected network with a shared hidden activation and linear output.

    Parameters live in one flat float64 vector, laid out layer by layer as
    ``W (fan_in x fan_out)`` followed by ``b (fan_out)``.
    """

    def __init__(self, layer_sizes, params=None, activation="tanh"):
        self.layer_sizes = tuple(int(k) for k in layer_sizes)
        if len(self.layer_sizes) < 2 or min(self.layer_sizes[1:]) < 1:
            raise ValueError(f"bad layer sizes {self.layer_sizes}")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.activation = activation
        size = n_params(self.layer_sizes)
        if params is None:
            params = np.zeros(size)
        params = np.array(params, dtype=np.float64)
        if params.shape != (size,):
            raise ValueError(f"expected {size} params for {self.layer_sizes}, got {params.shape}")
        self.params = params

    @classmethod
    def init(cls, layer_sizes, rng, activation="tanh"):
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases."""
        chunks = []
        for i, o in zip(layer_sizes[:-1], layer_sizes[1:]):
            bound = 1.0 / np.sqrt(max(i, 1))
            chunks.append(rng.uniform(-bound, bound, size=(i + 1) * o))
        return cls(layer_sizes, np.concatenate(chunks), activation)

    def copy(self):
        return type(self)(self.layer_sizes, self.params.copy(), self.activation)

    def _layers(self, flat):
        k = 0
        for i, o in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            W = flat[k:k + i * o].reshape(i, o)
            k += i * o
            b = flat[k:k + o]
            k += o
            yield W, b

    def _act(self, z):
        return np.tanh(z) if self.activation == "tanh" else np.maximum(z, 0.0)

    def _act_grad(self, z, h):
        return 1.0 - h * h if self.activation == "tanh" else (z > 0).astype(z.dtype)

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        layers = list(self._layers(self.params))
        cache = [(x, None)]
        h = x
        for j, (W, b) in enumerate(layers):
            z = h @ W + b
            h = z if j == len(layers) - 1 else self._act(z)
            cache.append((h, z))
        return h, cache

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, dout):
        """Gradient w.r.t. the flat parameters and w.r.t. the inputs."""
        grad = np.empty_like(self.params)
        layers = list(self._layers(self.params))
        grads = list(self._layers(grad))
        delta = dout
        for j in range(len(layers) - 1, -1, -1):
            W, _ = layers[j]
            gW, gb = grads[j]
            h_in = cache[j][0]
            gW[...] = h_in.T @ delta
            gb[...] = delta.sum(axis=0)
            delta = delta @ W.T
            if j > 0:
                h, z = cache[j]
                delta = delta * self._act_grad(z, h)
        return grad, delta

    def mse_gradient(self, x, y):
        """Loss ``mean((f(x) - y)^2)`` over all outputs, and its parameter gradient."""
        out, cache = self.forward(x)
        y = np.asarray(y, dtype=np.float64).reshape(out.shape)
        diff = out - y
        loss = float(np.mean(diff * diff))
        grad, _ = self.backward(cache, 2.0 * diff / diff.size)
        return loss, grad

    def input_gradient(self, x):
        """d f(x) / d x for a scalar-output network, one row per input."""
        out, cache = self.forward(x)
        _, dx = self.backward(cache, np.ones_like(out))
        return dx


class MlpValueFn(Mlp):
    """Scalar-output network used as a state-value head."""

    def __init__(self, layer_sizes, params=None, activation="tanh"):
        super().__init__(layer_sizes, params, activation)
        if self.layer_sizes[-1] != 1:
            raise ValueError("value network must have a single output")

    def predict(self, states):
        return self(states)[:, 0]


def mlp_gradient(f: Mlp, inputs, targets):
    """Exact gradient of the mean squared error of ``f`` on a nonempty batch."""
    if len(inputs) == 0:
        raise ValueError("empty batch")
    return f.mse_gradient(inputs, targets)[1]


# ---------------------------------------------------------------------------
# tabular values
# ---------------------------------------------------------------------------

def is_one_hot(x):
    x = np.asarray(x)
    return (
        x.ndim == 2 and x.shape[1] > 0 and len(x) > 0
        and bool(np.all((x == 0) | (x == 1)))
        and bool(np.all(x.sum(axis=1) == 1))
    )


def state_ids(states):
    return np.argmax(np.asarray(states), axis=1)


@dataclass
class TabularValueFn:
    values: np.ndarray
    gamma: float | None = None

    def __post_init__(self):
        self.values = np.array(self.values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("tabular values must be finite")

    def predict(self, states):
        """Values of one-hot encoded states."""
        return self.values[state_ids(states)]

    def copy(self):
        return TabularValueFn(self.values.copy(), self.gamma)


# ---------------------------------------------------------------------------
# fitted value functions
# ---------------------------------------------------------------------------

@dataclass
class FittedValue:
    """One or two fitted heads.

    TD targets use the element-wise minimum over heads; advantage readout
    uses their mean.
    """

    heads: list
    gamma: float

    def predict(self, states):
        return np.mean([h.predict(states) for h in self.heads], axis=0)

    def target(self, states):
        return np.min([h.predict(states) for h in self.heads], axis=0)

    @property
    def kind(self):
        return "tabular" if isinstance(self.heads[0], TabularValueFn) else "mlp"


@dataclass(frozen=True)
class FitConfig:
    gamma: float = 0.99
    steps: int = 20_000
    batch_size: int = 256
    learning_rate: float = 1e-3
    seed: int = 0
    use_double_heads: bool = True
    hidden_sizes: tuple = (64, 64)
    activation: str = "tanh"
    target_update_period: int = 100
    solver: str = "sgd"
    tabular: bool | None = None

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.steps < 1 or self.batch_size < 1 or self.target_update_period < 1:
            raise ValueError("steps, batch_size and target_update_period must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.solver not in ("sgd", "exact"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


def _check_fit_weights(weights, n):
    if weights is None:
        return None
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (n,):
        raise ValueError(f"weights length {w.shape} does not match dataset length {n}")
    if np.any(w < 0) or not abs(w.sum() - 1.0) <= 1e-9:
        raise ValueError("weights must be non-negative and sum to 1")
    return w


def fit_value_td(d, weights=None, cfg: FitConfig = FitConfig()) -> FittedValue:
    """Fit ``V`` by minimizing ``(r + gamma (1 - done) V'(s') - V(s))^2``.

    Minibatches are drawn proportionally to ``weights`` (uniformly when
    absent), so fitting on weighted data evaluates the reweighted behavior
    policy.  A table is used when every state is one-hot, otherwise a network.
    """
    w = _check_fit_weights(weights, len(d))
    tabular = cfg.tabular if cfg.tabular is not None else (
        is_one_hot(d.states) and is_one_hot(d.next_states)
    )
    if cfg.solver == "exact":
        if not tabular:
            raise ValueError("the exact solver needs one-hot (tabular) states")
        return FittedValue([solve_td_fixed_point(d, w, cfg.gamma)], cfg.gamma)

    init_rng = make_rng(cfg.seed, "init")
    sampler_rng = make_rng(cfg.seed, "value-fit")
    sampler = IndexSampler.uniform(len(d), sampler_rng) if w is None else IndexSampler.weighted(w, sampler_rng)
    n_heads = 2 if cfg.use_double_heads else 1

    states = d.states.astype(np.float64)
    next_states = d.next_states.astype(np.float64)
    rewards = d.rewards.astype(np.float64)
    cont = cfg.gamma * (1.0 - d.terminals.astype(np.float64))

    if tabular:
        size = d.states.shape[1]
        ids, next_ids = state_ids(states), state_ids(next_states)
        heads = [TabularValueFn(np.zeros(size), cfg.gamma) for _ in range(n_heads)]
    else:
        sizes = (d.state_dim, *cfg.hidden_sizes, 1)
        heads = [MlpValueFn.init(sizes, init_rng, cfg.activation) for _ in range(n_heads)]
    targets = [h.copy() for h in heads]

    for step in range(cfg.steps):
        idx = sampler.sample_batch(cfg.batch_size)
        if tabular:
            nxt = np.min([t.values[next_ids[idx]] for t in targets], axis=0)
        else:
            nxt = np.min([t.predict(next_states[idx]) for t in targets], axis=0)
        y = rewards[idx] + cont[idx] * nxt
        loss = 0.0
        for h in heads:
            if tabular:
                diff = h.values[ids[idx]] - y
                loss += float(np.mean(diff * diff))
                h.values -= cfg.learning_rate * np.bincount(
                    ids[idx], weights=2.0 * diff / len(idx), minlength=len(h.values)
                )
            else:
                head_loss, grad = h.mse_gradient(states[idx], y)
                loss += head_loss
                h.params -= cfg.learning_rate * grad
        if not np.isfinite(loss):
            raise ValueFitDivergence(step, loss)
        if (step + 1) % cfg.target_update_period == 0:
            targets = [h.copy() for h in heads]
    return FittedValue(heads, cfg.gamma)


def solve_td_fixed_point(d, weights=None, gamma=0.99) -> TabularValueFn:
    """Exact TD fixed point of one-hot data under the given sampling weights.

    This is the value of the empirical (weighted) behavior policy; states that
    never appear as a source get value 0.
    """
    w = np.full(len(d), 1.0 / len(d)) if weights is None else np.asarray(weights, dtype=np.float64)
    size = d.states.shape[1]
    ids, next_ids = state_ids(d.states), state_ids(d.next_states)
    cont = 1.0 - d.terminals.astype(np.float64)
    mass = np.bincount(ids, weights=w, minlength=size)
    b = np.bincount(ids, weights=w * d.rewards.astype(np.float64), minlength=size)
    M = np.zeros((size, size))
    np.add.at(M, (ids, next_ids), w * cont)
    A = np.diag(mass) - gamma * M
    seen = mass > 0
    A[~seen] = 0.0
    A[~seen, ~seen] = 1.0
    b[~seen] = 0.0
    return TabularValueFn(_solve(A, b), gamma)


def _solve(A, b):
    if np.linalg.cond(A) > 1e12:
        raise SingularSystemError("Bellman system is singular or ill-conditioned")
    x = np.linalg.solve(A, b)
    # one refinement step keeps the residual near machine precision
    return x + np.linalg.solve(A, b - A @ x)


def policy_matrices(mdp, policy):
    """Reward vector and transition matrix of ``mdp`` under ``policy``."""
    probs = np.asarray(getattr(policy, "probs", policy), dtype=np.float64)
    r_pi = np.sum(probs * mdp.reward, axis=1)
    P_pi = np.einsum("sa,sat->st", probs, mdp.transition)
    return r_pi, P_pi


def solve_tabular_value(mdp, policy) -> TabularValueFn:
    """Exact ``V^pi`` from the Bellman linear system; terminal states are fixed at 0."""
    r_pi, P_pi = policy_matrices(mdp, policy)
    live = ~mdp.terminal_mask
    A = np.eye(int(live.sum())) - mdp.gamma * P_pi[np.ix_(live, live)]
    V = np.zeros(mdp.n_states)
    V[live] = _solve(A, r_pi[live])
    return TabularValueFn(V, mdp.gamma)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_value_fn(v: FittedValue, path) -> None:
    """Write ``ODPRVF01``: kind, activation, head count, layer sizes, f64 params per head."""
    tabular = v.kind == "tabular"
    sizes = (len(v.heads[0].values),) if tabular else v.heads[0].layer_sizes
    act = 0 if tabular else ACTIVATIONS.index(v.heads[0].activation)
    out = [VALUE_MAGIC, struct.pack("<BBdII", int(not tabular), act, v.gamma, len(v.heads), len(sizes))]
    out.append(struct.pack(f"<{len(sizes)}I", *sizes))
    for h in v.heads:
        p = h.values if tabular else h.params
        out.append(struct.pack("<Q", len(p)))
        out.append(np.asarray(p, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(out))


def load_value_fn(path) -> FittedValue:
    raw = Path(path).read_bytes()
    if raw[:8] != VALUE_MAGIC:
        raise ValueError("not an ODPRVF01 value file")
    head = struct.Struct("<BBdII")
    kind, act, gamma, n_heads, n_layers = head.unpack_from(raw, 8)
    off = 8 + head.size
    sizes = struct.unpack_from(f"<{n_layers}I", raw, off)
    off += 4 * n_layers
    heads = []
    for _ in range(n_heads):
        (p,) = struct.unpack_from("<Q", raw, off)
        off += 8
        params = np.frombuffer(raw, dtype="<f8", count=p, offset=off).astype(np.float64)
        off += 8 * p
        if kind == 0:
            heads.append(TabularValueFn(params, gamma))
        else:
            heads.append(MlpValueFn(sizes, params, ACTIVATIONS[act]))
    if off != len(raw):
        raise ValueError("trailing bytes in value file")
    return FittedValue(heads, gamma)
