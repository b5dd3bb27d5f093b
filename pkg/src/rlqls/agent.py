"""Deep-Q agent with explicit backpropagation and branch-aware TD targets.

The Q-network is a small fully-connected net (rectifier hidden layers,
identity output) implemented directly on numpy arrays, trained from an
experience-replay buffer with a softly updated double-Q target network.
Targets come in two flavors: the sampled-branch form ("mdp") bootstraps
from the measurement outcome that actually occurred, while the
branch-averaged form ("qmdp") folds both measurement outcomes, weighted by
their probabilities, into every update.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass

import numpy as np

from .env import StatePrepEnv

__all__ = [
    "Mlp",
    "DqnConfig",
    "ReplayEntry",
    "ReplayBuffer",
    "EvaluationStats",
    "forward",
    "loss_and_gradient",
    "epsilon",
    "select_action",
    "td_target",
    "soft_update",
    "train",
    "evaluate",
    "save_checkpoint",
    "load_checkpoint",
    "write_training_curve",
    "BBR_HYPERPARAMETERS",
    "EPSILON_END_GRID",
    "OVERLAP_PENALTY_GRID",
    "H3O_OPTIMUM",
]

# Per-temperature (soft-update rate tau, learning rate) pairs used for the
# thermal-noise study, keyed by bath temperature in kelvin.
BBR_HYPERPARAMETERS = {
    0: (0.005, 0.0005),
    50: (0.0005, 0.0005),
    100: (0.0005, 0.0005),
    150: (0.0005, 0.001),
    200: (0.001, 0.0005),
    250: (0.0025, 0.0005),
    300: (0.0005, 0.0005),
    350: (0.001, 0.0005),
    400: (0.0005, 0.0005),
}

EPSILON_END_GRID = (0.005, 0.025, 0.125)
OVERLAP_PENALTY_GRID = (1.0, 2.0, 5.0)

# Best hyperparameters found for the 130-level molecular model.
H3O_OPTIMUM = {"soft_update_tau": 0.0001, "learning_rate": 0.001,
               "overlap_penalty": 5.0, "epsilon_end": 0.025}


class Mlp:
    """Fully-connected network: rectifier hidden layers, identity output."""

    def __init__(self, weights, biases):
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias vector per weight matrix")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {k}: inconsistent shapes {w.shape} / {b.shape}")
            if k > 0 and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ValueError(f"layer {k}: width mismatch with previous layer")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError(f"layer {k}: non-finite parameters")

    @classmethod
    def initialize(cls, widths, rng: np.random.Generator) -> "Mlp":
        """He-scaled random weights for the given layer widths."""
        if len(widths) < 2:
            raise ValueError("need at least input and output widths")
        weights, biases = [], []
        for n_in, n_out in zip(widths[:-1], widths[1:]):
            weights.append(rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_out, n_in)))
            biases.append(np.zeros(n_out))
        return cls(weights, biases)

    @property
    def widths(self):
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def parameters(self):
        for w, b in zip(self.weights, self.biases):
            yield w
            yield b


@dataclass(frozen=True)
class DqnConfig:
    """Hyperparameters for deep-Q training."""

    learning_rate: float = 1e-3
    soft_update_tau: float = 0.005
    batch_size: int = 64
    buffer_capacity: int = 100_000
    epsilon_start: float = 1.0
    epsilon_end: float = 0.025
    n_training: int = 1000
    loss: str = "squared_l2"
    update_mode: str = "qmdp"
    discount: float = 1.0
    optimizer: str = "adam"
    hidden_widths: tuple = (128, 128)
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 < self.soft_update_tau <= 1.0:
            raise ValueError("soft_update_tau must lie in (0, 1]")
        if self.epsilon_end > self.epsilon_start:
            raise ValueError("epsilon_end must not exceed epsilon_start")
        if self.discount != 1.0:
            raise ValueError("the episodic task uses discount 1 exactly")
        if self.loss not in ("squared_l2", "smooth_l1"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.update_mode not in ("mdp", "qmdp"):
            raise ValueError(f"unknown update_mode {self.update_mode!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    @property
    def tau_epsilon(self) -> float:
        return 0.3 * self.n_training


@dataclass(frozen=True)
class ReplayEntry:
    """One transition with both measurement branches retained.

    ``branches`` is a pair of ``(probability, next population vector or
    None, terminal flag)``; ``sampled_k`` records the branch the episode
    actually took.
    """

    state: np.ndarray
    action: int
    reward: float
    branches: tuple
    sampled_k: int

    def __post_init__(self):
        total = sum(b[0] for b in self.branches)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"branch probabilities sum to {total!r}")
        if self.sampled_k not in (0, 1):
            raise ValueError("sampled_k must be 0 or 1")


class ReplayBuffer:
    """FIFO experience store with uniform minibatch sampling."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be at least 1")
        self.capacity = capacity
        self._entries = deque(maxlen=capacity)

    def push(self, entry: ReplayEntry) -> None:
        self._entries.append(entry)

    def sample(self, batch_size: int, rng: np.random.Generator):
        idx = rng.integers(len(self._entries), size=batch_size)
        return [self._entries[i] for i in idx]

    def __len__(self) -> int:
        return len(self._entries)


def forward(mlp: Mlp, state: np.ndarray) -> np.ndarray:
    """Action values for one state vector."""
    x = np.asarray(state, dtype=float)
    if x.shape != (mlp.widths[0],):
        raise ValueError(f"state length {x.shape} does not match input width {mlp.widths[0]}")
    for k, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        x = w @ x + b
        if k < mlp.n_layers - 1:
            x = np.maximum(x, 0.0)
    return x


def _forward_cached(mlp: Mlp, x: np.ndarray):
    """Forward pass for a batch (rows = samples), keeping pre-activations."""
    activations = [x]
    for k, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        z = activations[-1] @ w.T + b
        if k < mlp.n_layers - 1:
            z = np.maximum(z, 0.0)
        activations.append(z)
    return activations


def loss_and_gradient(mlp: Mlp, batch, loss: str = "squared_l2"):
    """Batch-averaged loss on the chosen action's Q value, with gradients.

    ``batch`` is a sequence of ``(state, action id, target)``; gradients are
    returned as a flat list alternating (dW, db) per layer, matching
    ``Mlp.parameters()`` order. Actions are 1-based.
    """
    if not batch:
        raise ValueError("batch must be nonempty")
    states = np.stack([np.asarray(s, dtype=float) for s, _, _ in batch])
    actions = np.array([a - 1 for _, a, _ in batch])
    targets = np.array([t for _, _, t in batch], dtype=float)
    if not np.isfinite(targets).all():
        raise ValueError("non-finite TD target in batch")
    if actions.min() < 0 or actions.max() >= mlp.widths[-1]:
        raise ValueError("action id outside the output layer")

    acts = _forward_cached(mlp, states)
    q_sel = acts[-1][np.arange(len(batch)), actions]
    err = q_sel - targets
    if loss == "squared_l2":
        value = float(np.mean(err ** 2))
        dq = 2.0 * err / len(batch)
    elif loss == "smooth_l1":
        small = np.abs(err) <= 1.0
        value = float(np.mean(np.where(small, 0.5 * err ** 2, np.abs(err) - 0.5)))
        dq = np.where(small, err, np.sign(err)) / len(batch)
    else:
        raise ValueError(f"unknown loss {loss!r}")

    delta = np.zeros_like(acts[-1])
    delta[np.arange(len(batch)), actions] = dq
    grads = [None] * (2 * mlp.n_layers)
    for k in range(mlp.n_layers - 1, -1, -1):
        grads[2 * k] = delta.T @ acts[k]
        grads[2 * k + 1] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ mlp.weights[k]) * (acts[k] > 0)
    return value, grads


def epsilon(n: int, config: DqnConfig) -> float:
    """Exploration rate after ``n`` training episodes (exponential decay)."""
    if n < 0:
        raise ValueError("episode counter must be nonnegative")
    span = config.epsilon_start - config.epsilon_end
    return config.epsilon_end + span * np.exp(-n / config.tau_epsilon)


def select_action(qvalues: np.ndarray, eps: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy choice; returns a 1-based action id."""
    if not 0.0 <= eps <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    if eps > 0.0 and rng.random() < eps:
        return int(rng.integers(len(qvalues))) + 1
    return int(np.argmax(qvalues)) + 1


def _bootstrap(branch, target_net: Mlp, online_net: Mlp | None) -> float:
    prob, nxt, terminal = branch
    if terminal or nxt is None:
        return 0.0
    q_target = forward(target_net, nxt)
    if online_net is not None:
        best = int(np.argmax(forward(online_net, nxt)))
    else:
        best = int(np.argmax(q_target))
    return float(q_target[best])


def td_target(entry: ReplayEntry, target_net: Mlp, mode: str,
              online_net: Mlp | None = None) -> float:
    """Temporal-difference target with unit discount.

    ``mdp`` bootstraps from the sampled branch only; ``qmdp`` averages the
    bootstrap over both branches with their outcome probabilities. Terminal
    branches contribute zero bootstrap. Passing ``online_net`` switches to
    the double-Q form (argmax from the online net, value from the target).
    """
    if mode == "mdp":
        return entry.reward + _bootstrap(entry.branches[entry.sampled_k],
                                         target_net, online_net)
    if mode == "qmdp":
        boot = sum(prob * _bootstrap((prob, nxt, term), target_net, online_net)
                   for prob, nxt, term in entry.branches)
        return entry.reward + boot
    raise ValueError(f"unknown update mode {mode!r}")


def soft_update(online: Mlp, target: Mlp, tau: float) -> Mlp:
    """Blend the target network toward the online one: tau*online + (1-tau)*target."""
    if online.widths != target.widths:
        raise ValueError("network shapes do not match")
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    return Mlp([tau * wo + (1 - tau) * wt for wo, wt in zip(online.weights, target.weights)],
               [tau * bo + (1 - tau) * bt for bo, bt in zip(online.biases, target.biases)])


class _Optimizer:
    def __init__(self, config: DqnConfig, mlp: Mlp):
        self.kind = config.optimizer
        self.lr = config.learning_rate
        self.t = 0
        if self.kind == "adam":
            self.m = [np.zeros_like(p) for p in mlp.parameters()]
            self.v = [np.zeros_like(p) for p in mlp.parameters()]

    def apply(self, mlp: Mlp, grads) -> None:
        params = list(mlp.parameters())
        if self.kind == "sgd":
            for p, g in zip(params, grads):
                p -= self.lr * g
            return
        self.t += 1
        b1, b2, eps_hat = 0.9, 0.999, 1e-8
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g ** 2
            m_hat = self.m[i] / (1 - b1 ** self.t)
            v_hat = self.v[i] / (1 - b2 ** self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + eps_hat)

    def state_arrays(self) -> dict:
        if self.kind == "sgd":
            return {"opt_t": np.array(self.t)}
        out = {"opt_t": np.array(self.t)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"opt_m_{i}"] = m
            out[f"opt_v_{i}"] = v
        return out

    def load_state(self, data) -> None:
        self.t = int(data["opt_t"])
        if self.kind == "adam":
            self.m = [np.array(data[f"opt_m_{i}"]) for i in range(len(self.m))]
            self.v = [np.array(data[f"opt_v_{i}"]) for i in range(len(self.v))]


def _entry_from_step(state_vec, action, reward, branches, k) -> ReplayEntry:
    packed = tuple((p, None if nxt is None else nxt.p.copy(), term)
                   for p, nxt, _reward, term in branches)
    return ReplayEntry(state_vec, action, reward, packed, k)


def train(env: StatePrepEnv, config: DqnConfig, rng: np.random.Generator,
          on_episode=None, checkpoint_path=None):
    """Run the full training loop; returns ``(online net, training curve)``.

    The curve holds one ``(episode, length, moving_avg_100)`` row per
    episode. A non-finite loss aborts training with a checkpoint (when a
    path is given) and raises. ``on_episode(episode, length, moving_avg)``
    is called after each episode when provided.
    """
    widths = (env.n_states, *config.hidden_widths, env.n_actions)
    online = Mlp.initialize(widths, rng)
    target = online.copy()
    optimizer = _Optimizer(config, online)
    buffer = ReplayBuffer(config.buffer_capacity)
    curve = []
    recent = deque(maxlen=100)

    for episode in range(config.n_training):
        eps = epsilon(episode, config)
        state = env.reset()
        length = 0
        done = False
        while not done:
            action = select_action(forward(online, state.p), eps, rng)
            branches = env.step_branches(state, action)
            out = env.step(action, rng)
            buffer.push(_entry_from_step(state.p.copy(), action, out.reward,
                                         branches, out.outcome))
            state = out.next
            length += 1
            done = out.terminated or out.truncated

            if len(buffer) >= config.batch_size:
                batch = buffer.sample(config.batch_size, rng)
                triples = [(e.state, e.action,
                            td_target(e, target, config.update_mode, online_net=online))
                           for e in batch]
                loss, grads = loss_and_gradient(online, triples, config.loss)
                if not np.isfinite(loss):
                    if checkpoint_path is not None:
                        save_checkpoint(checkpoint_path, online, optimizer, rng, episode)
                    raise FloatingPointError(f"training diverged at episode {episode}")
                optimizer.apply(online, grads)
                target = soft_update(online, target, config.soft_update_tau)

        recent.append(length)
        curve.append((episode, length, sum(recent) / len(recent)))
        if on_episode is not None:
            on_episode(episode, length, curve[-1][2])
        if (checkpoint_path is not None and config.checkpoint_every
                and (episode + 1) % config.checkpoint_every == 0):
            save_checkpoint(checkpoint_path, online, optimizer, rng, episode + 1)

    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, online, optimizer, rng, config.n_training)
    return online, curve


@dataclass
class EvaluationStats:
    """Greedy-rollout statistics over a batch of evaluation episodes."""

    lengths: list
    mean_length: float
    success_curve: np.ndarray   # cumulative finished fraction per pulse count
    terminal_histogram: dict    # terminal level index -> count
    n_terminated: int


def evaluate(mlp: Mlp, env: StatePrepEnv, n_episodes: int,
             rng: np.random.Generator) -> EvaluationStats:
    """Roll out greedy (epsilon = 0) episodes and summarize them."""
    lengths = []
    histogram: dict = {}
    finished_at = np.zeros(env.config.max_steps + 1)
    n_terminated = 0
    for _ in range(n_episodes):
        state = env.reset()
        for step in range(1, env.config.max_steps + 1):
            action = int(np.argmax(forward(mlp, state.p))) + 1
            out = env.step(action, rng)
            state = out.next
            if out.terminated:
                lengths.append(step)
                n_terminated += 1
                finished_at[step] += 1
                idx = int(np.argmax(state.p))
                histogram[idx] = histogram.get(idx, 0) + 1
                break
            if out.truncated:
                lengths.append(step)
                break
    curve = np.cumsum(finished_at) / max(1, n_episodes)
    mean_length = float(np.mean(lengths)) if lengths else 0.0
    return EvaluationStats(lengths, mean_length, curve, histogram, n_terminated)


def save_checkpoint(path, mlp: Mlp, optimizer: _Optimizer | None,
                    rng: np.random.Generator, episode: int) -> None:
    """Write a versioned npz checkpoint (parameters, optimizer, RNG, counter)."""
    arrays = {"widths": np.array(mlp.widths)}
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        arrays[f"w_{i}"] = w
        arrays[f"b_{i}"] = b
    if optimizer is not None:
        arrays.update(optimizer.state_arrays())
        arrays["optimizer"] = np.array(optimizer.kind)
    arrays["rng_state"] = np.array(json.dumps(rng.bit_generator.state))
    arrays["episode"] = np.array(episode)
    arrays["version"] = np.array(1)
    np.savez(path, **arrays)


def load_checkpoint(path):
    """Read a checkpoint; returns ``(mlp, episode, rng_state dict)``."""
    with np.load(path, allow_pickle=False) as data:
        if int(data["version"]) != 1:
            raise ValueError("unrecognized checkpoint version")
        widths = tuple(int(x) for x in data["widths"])
        n_layers = len(widths) - 1
        mlp = Mlp([data[f"w_{i}"] for i in range(n_layers)],
                  [data[f"b_{i}"] for i in range(n_layers)])
        episode = int(data["episode"])
        rng_state = json.loads(str(data["rng_state"]))
    return mlp, episode, rng_state


def write_training_curve(path, curve, delimiter: str = ",") -> None:
    """Write (episode, length, moving_avg_100) rows."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(delimiter.join(["episode", "length", "moving_avg_100"]) + "\n")
        for episode, length, avg in curve:
            fh.write(delimiter.join([str(episode), str(length), f"{avg:.6g}"]) + "\n")
