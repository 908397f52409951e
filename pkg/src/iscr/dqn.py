"""From-scratch feed-forward Q-networks on numpy.

Two relu hidden layers feed either a single linear Q head (vanilla/double)
or a dueling pair of streams, value (1) and advantage (|A|), combined as
Q = V + A - mean(A).  Backpropagation, Adam, experience replay, the target
network, and the double-DQN target are all implemented here directly; the
finite-difference gradient checker lives alongside because gradient
correctness is part of this module's contract.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

VARIANTS = ("vanilla", "double", "dueling")


class TrainingDiverged(RuntimeError):
    """Raised when a training step produces a non-finite loss."""


class CheckpointMismatch(ValueError):
    """Checkpoint architecture descriptor does not match the expected one."""


@dataclass(frozen=True)
class Architecture:
    input_dim: int
    hidden_dims: tuple[int, ...]
    n_actions: int
    head: str  # "single" | "dueling"

    def descriptor(self) -> dict:
        return {"input_dim": self.input_dim, "hidden_dims": list(self.hidden_dims),
                "n_actions": self.n_actions, "head": self.head}


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


class Mlp:
    """Plain parameter container with explicit forward/backward passes."""

    def __init__(self, arch: Architecture, params: dict[str, np.ndarray]):
        self.arch = arch
        self.params = params

    @classmethod
    def initialize(cls, arch: Architecture, rng: np.random.Generator) -> "Mlp":
        params: dict[str, np.ndarray] = {}
        fan_in = arch.input_dim
        for i, width in enumerate(arch.hidden_dims):
            limit = np.sqrt(6.0 / fan_in)
            params[f"W{i}"] = rng.uniform(-limit, limit, size=(fan_in, width))
            params[f"b{i}"] = np.zeros(width)
            fan_in = width
        limit = np.sqrt(6.0 / fan_in)
        if arch.head == "single":
            params["W_out"] = rng.uniform(-limit, limit, size=(fan_in, arch.n_actions))
            params["b_out"] = np.zeros(arch.n_actions)
        elif arch.head == "dueling":
            params["W_val"] = rng.uniform(-limit, limit, size=(fan_in, 1))
            params["b_val"] = np.zeros(1)
            params["W_adv"] = rng.uniform(-limit, limit, size=(fan_in, arch.n_actions))
            params["b_adv"] = np.zeros(arch.n_actions)
        else:
            raise ValueError(f"unknown head {arch.head!r}")
        return cls(arch, params)

    def copy(self) -> "Mlp":
        return Mlp(self.arch, {k: v.copy() for k, v in self.params.items()})

    def forward(self, states: np.ndarray, return_cache: bool = False):
        """Q-values for a batch (or single) of states."""
        x = np.atleast_2d(np.asarray(states, dtype=float))
        if x.shape[1] != self.arch.input_dim:
            raise ValueError(f"state width {x.shape[1]} != input width {self.arch.input_dim}")
        pre, post = [], [x]
        h = x
        for i in range(len(self.arch.hidden_dims)):
            z = h @ self.params[f"W{i}"] + self.params[f"b{i}"]
            h = _relu(z)
            pre.append(z)
            post.append(h)
        if self.arch.head == "single":
            q = h @ self.params["W_out"] + self.params["b_out"]
        else:
            value = h @ self.params["W_val"] + self.params["b_val"]
            adv = h @ self.params["W_adv"] + self.params["b_adv"]
            q = value + adv - adv.mean(axis=1, keepdims=True)
        if return_cache:
            return q, {"pre": pre, "post": post}
        return q

    def backward(self, cache: dict, d_q: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss wrt parameters, given dLoss/dQ."""
        grads: dict[str, np.ndarray] = {}
        h_last = cache["post"][-1]
        if self.arch.head == "single":
            grads["W_out"] = h_last.T @ d_q
            grads["b_out"] = d_q.sum(axis=0)
            d_h = d_q @ self.params["W_out"].T
        else:
            d_value = d_q.sum(axis=1, keepdims=True)
            d_adv = d_q - d_q.mean(axis=1, keepdims=True)
            grads["W_val"] = h_last.T @ d_value
            grads["b_val"] = d_value.sum(axis=0)
            grads["W_adv"] = h_last.T @ d_adv
            grads["b_adv"] = d_adv.sum(axis=0)
            d_h = d_value @ self.params["W_val"].T + d_adv @ self.params["W_adv"].T
        for i in reversed(range(len(self.arch.hidden_dims))):
            d_z = d_h * (cache["pre"][i] > 0)
            grads[f"W{i}"] = cache["post"][i].T @ d_z
            grads[f"b{i}"] = d_z.sum(axis=0)
            d_h = d_z @ self.params[f"W{i}"].T
        return grads

    def preactivation_margin(self, states: np.ndarray) -> float:
        """Smallest |pre-activation| across hidden layers; finite-difference
        gradient checks are invalid when this is within the step size of 0."""
        x = np.atleast_2d(np.asarray(states, dtype=float))
        margin = np.inf
        h = x
        for i in range(len(self.arch.hidden_dims)):
            z = h @ self.params[f"W{i}"] + self.params[f"b{i}"]
            margin = min(margin, float(np.abs(z).min()))
            h = _relu(z)
        return margin


def forward(net: Mlp, state: np.ndarray) -> np.ndarray:
    return net.forward(state)[0] if np.ndim(state) == 1 else net.forward(state)


def act(net: Mlp, state: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy action; greedy ties resolve to the lowest index."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    if epsilon > 0 and rng.random() < epsilon:
        return int(rng.integers(net.arch.n_actions))
    return int(np.argmax(net.forward(state)[0]))


@dataclass(frozen=True)
class Experience:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    done: bool


class ReplayBuffer:
    """Fixed-capacity ring with uniform sampling."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: list[Experience] = []
        self._cursor = 0

    def add(self, experience: Experience) -> None:
        if len(self._items) < self.capacity:
            self._items.append(experience)
        else:
            self._items[self._cursor] = experience
        self._cursor = (self._cursor + 1) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Experience]:
        if batch_size > len(self._items):
            raise ValueError("cannot sample more experiences than stored")
        idx = rng.integers(len(self._items), size=batch_size)
        return [self._items[i] for i in idx]

    def __len__(self) -> int:
        return len(self._items)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


class QLearner:
    """Online/target network pair with one of the three training variants."""

    def __init__(self, input_dim: int, n_actions: int, variant: str = "vanilla",
                 hidden_dims: tuple[int, ...] = (1024, 1024), gamma: float = 0.99,
                 learning_rate: float = 8e-4, sync_period: int = 100,
                 rng: np.random.Generator | None = None):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        if not 0.0 <= gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        head = "dueling" if variant == "dueling" else "single"
        arch = Architecture(input_dim=input_dim, hidden_dims=tuple(hidden_dims),
                            n_actions=n_actions, head=head)
        self.variant = variant
        self.gamma = gamma
        self.learning_rate = learning_rate
        self.sync_period = sync_period
        self.online = Mlp.initialize(arch, rng or np.random.default_rng())
        self.target = self.online.copy()
        self.adam = AdamState()
        self.train_steps = 0

    @property
    def arch(self) -> Architecture:
        return self.online.arch

    def act(self, state: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
        return act(self.online, state, epsilon, rng)

    def td_target(self, experience: Experience) -> float:
        return float(self.td_targets([experience])[0])

    def td_targets(self, batch: Sequence[Experience]) -> np.ndarray:
        rewards = np.array([e.reward for e in batch], dtype=float)
        dones = np.array([e.done for e in batch])
        targets = rewards.copy()
        live = ~dones
        if live.any():
            next_states = np.stack([e.next_state for e in batch])[live]
            q_target = self.target.forward(next_states)
            if self.variant == "double":
                chosen = np.argmax(self.online.forward(next_states), axis=1)
                bootstrap = q_target[np.arange(len(chosen)), chosen]
            else:
                bootstrap = q_target.max(axis=1)
            targets[live] += self.gamma * bootstrap
        return targets

    def train_step(self, batch: Sequence[Experience]) -> float:
        """One MSE regression step of the online net toward the TD targets."""
        if not batch:
            raise ValueError("train_step needs a non-empty batch")
        states = np.stack([e.state for e in batch])
        actions = np.array([e.action for e in batch])
        targets = self.td_targets(batch)
        q, cache = self.online.forward(states, return_cache=True)
        rows = np.arange(len(batch))
        diff = q[rows, actions] - targets
        loss = float(np.mean(diff ** 2))
        if not np.isfinite(loss):
            summary = {"loss": loss,
                       "rewards": [e.reward for e in batch],
                       "actions": actions.tolist(),
                       "state_norms": np.linalg.norm(states, axis=1).tolist()}
            raise TrainingDiverged(f"non-finite loss; offending batch: {json.dumps(summary)}")
        d_q = np.zeros_like(q)
        d_q[rows, actions] = 2.0 * diff / len(batch)
        grads = self.online.backward(cache, d_q)
        self._adam_update(grads)
        self.train_steps += 1
        self._assert_finite()
        return loss

    def _adam_update(self, grads: dict[str, np.ndarray],
                     beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
        self.adam.t += 1
        for name, grad in grads.items():
            if name not in self.adam.m:
                self.adam.m[name] = np.zeros_like(grad)
                self.adam.v[name] = np.zeros_like(grad)
            self.adam.m[name] = beta1 * self.adam.m[name] + (1 - beta1) * grad
            self.adam.v[name] = beta2 * self.adam.v[name] + (1 - beta2) * grad ** 2
            m_hat = self.adam.m[name] / (1 - beta1 ** self.adam.t)
            v_hat = self.adam.v[name] / (1 - beta2 ** self.adam.t)
            self.online.params[name] -= self.learning_rate * m_hat / (np.sqrt(v_hat) + eps)

    def _assert_finite(self) -> None:
        for name, value in self.online.params.items():
            if not np.all(np.isfinite(value)):
                raise TrainingDiverged(f"non-finite parameter {name} after update")

    def sync_target(self) -> None:
        self.target = self.online.copy()

    def snapshot(self) -> "QLearner":
        """Read-only copy for concurrent inference (e.g. the session service)."""
        return copy.deepcopy(self)

    # -- checkpointing ------------------------------------------------------

    def save(self, path: str | Path) -> None:
        meta = {"format": "iscr-qlearner-v1", "variant": self.variant,
                "gamma": self.gamma, "learning_rate": self.learning_rate,
                "sync_period": self.sync_period, "train_steps": self.train_steps,
                "arch": self.arch.descriptor()}
        arrays = {f"online/{k}": v for k, v in self.online.params.items()}
        arrays.update({f"target/{k}": v for k, v in self.target.params.items()})
        np.savez(path, meta=json.dumps(meta), **arrays)

    @classmethod
    def load(cls, path: str | Path, expect: Architecture | None = None) -> "QLearner":
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            if meta.get("format") != "iscr-qlearner-v1":
                raise CheckpointMismatch(f"unrecognized checkpoint format {meta.get('format')!r}")
            arch = Architecture(input_dim=meta["arch"]["input_dim"],
                                hidden_dims=tuple(meta["arch"]["hidden_dims"]),
                                n_actions=meta["arch"]["n_actions"],
                                head=meta["arch"]["head"])
            if expect is not None and arch != expect:
                raise CheckpointMismatch(
                    f"checkpoint architecture {arch.descriptor()} != expected {expect.descriptor()}")
            learner = cls(input_dim=arch.input_dim, n_actions=arch.n_actions,
                          variant=meta["variant"], hidden_dims=arch.hidden_dims,
                          gamma=meta["gamma"], learning_rate=meta["learning_rate"],
                          sync_period=meta["sync_period"], rng=np.random.default_rng(0))
            for k in learner.online.params:
                learner.online.params[k] = data[f"online/{k}"]
                learner.target.params[k] = data[f"target/{k}"]
            learner.train_steps = meta["train_steps"]
        return learner


# ---------------------------------------------------------------------------
# Finite-difference gradient checking
# ---------------------------------------------------------------------------

def regression_loss(net: Mlp, states: np.ndarray, actions: np.ndarray,
                    targets: np.ndarray) -> float:
    q = net.forward(states)
    diff = q[np.arange(len(actions)), actions] - targets
    return float(np.mean(diff ** 2))


def analytic_gradients(net: Mlp, states: np.ndarray, actions: np.ndarray,
                       targets: np.ndarray) -> dict[str, np.ndarray]:
    q, cache = net.forward(states, return_cache=True)
    rows = np.arange(len(actions))
    d_q = np.zeros_like(q)
    d_q[rows, actions] = 2.0 * (q[rows, actions] - targets) / len(actions)
    return net.backward(cache, d_q)


def finite_difference_gradients(net: Mlp, states: np.ndarray, actions: np.ndarray,
                                targets: np.ndarray, step: float = 1e-4) -> dict[str, np.ndarray]:
    grads = {}
    for name, value in net.params.items():
        grad = np.zeros_like(value)
        flat = value.ravel()
        grad_flat = grad.ravel()
        for j in range(flat.size):
            saved = flat[j]
            flat[j] = saved + step
            up = regression_loss(net, states, actions, targets)
            flat[j] = saved - step
            down = regression_loss(net, states, actions, targets)
            flat[j] = saved
            grad_flat[j] = (up - down) / (2 * step)
        grads[name] = grad
    return grads


def gradient_check(net: Mlp, states: np.ndarray, actions: np.ndarray,
                   targets: np.ndarray, step: float = 1e-4) -> float:
    """Max elementwise relative error between analytic and FD gradients."""
    analytic = analytic_gradients(net, states, actions, targets)
    numeric = finite_difference_gradients(net, states, actions, targets, step)
    worst = 0.0
    for name in analytic:
        a, n = analytic[name], numeric[name]
        denom = np.maximum(np.abs(a), np.abs(n))
        mask = denom > 1e-8
        if mask.any():
            worst = max(worst, float((np.abs(a - n)[mask] / denom[mask]).max()))
    return worst
