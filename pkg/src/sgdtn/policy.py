"""Per-agent actor-critic learning.

An actor maps a local state vector to logits for three kinds of heads:
continuous heads squashed to [0, 1] by a sigmoid, binary heads (Bernoulli)
and categorical heads (softmax). A critic scores (state, encoded action).
The same machinery serves the followers (CPU share, block size, offload,
channel) and the pricing leader (one continuous price head per follower).

Continuous heads follow the deterministic policy gradient through the
critic; discrete heads use the likelihood-ratio gradient in expectation over
their support, weighted by the critic's value of each alternative.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .nn import Adam, PolicyParams, backward, forward


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, float)))


def softmax(z):
    z = np.asarray(z, float)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class HeadSpec:
    n_cont: int
    n_binary: int = 0
    categorical: tuple = ()

    @property
    def n_logits(self) -> int:
        return self.n_cont + self.n_binary + sum(self.categorical)

    @property
    def n_features(self) -> int:
        return self.n_logits

    def split(self, logits):
        c = logits[:, :self.n_cont]
        b = logits[:, self.n_cont:self.n_cont + self.n_binary]
        cats, pos = [], self.n_cont + self.n_binary
        for k in self.categorical:
            cats.append(logits[:, pos:pos + k])
            pos += k
        return c, b, cats


def encode(spec: HeadSpec, cont, binary, cats):
    """Critic input encoding: continuous values, binary flags, one-hot categories."""
    cont = np.atleast_2d(np.asarray(cont, float))
    parts = [cont]
    if spec.n_binary:
        parts.append(np.asarray(binary, float).reshape(len(cont), spec.n_binary))
    cats = np.asarray(cats, int).reshape(len(cont), len(spec.categorical))
    for j, k in enumerate(spec.categorical):
        onehot = np.zeros((len(cont), k))
        onehot[np.arange(len(cont)), cats[:, j]] = 1.0
        parts.append(onehot)
    return np.concatenate(parts, axis=1)


@dataclass
class Choice:
    """Raw head outputs for a batch: fractions, binary flags, category indices."""

    cont: np.ndarray
    binary: np.ndarray
    cats: np.ndarray


def select(spec: HeadSpec, actor: PolicyParams, states, rng=None, explore=False,
           eps: float = 0.0, noise: float = 0.0) -> Choice:
    logits, _ = forward(actor, states)
    zc, zb, zcats = spec.split(logits)
    cont = sigmoid(zc)
    pb = sigmoid(zb)
    batch = len(logits)
    if explore:
        if noise > 0:
            cont = np.clip(cont + rng.normal(0.0, noise, size=cont.shape), 0.0, 1.0)
        binary = (rng.random(pb.shape) < pb).astype(int)
        flip = rng.random(pb.shape) < eps
        binary = np.where(flip, rng.integers(0, 2, size=pb.shape), binary)
        cats = np.zeros((batch, len(spec.categorical)), dtype=int)
        for j, (z, k) in enumerate(zip(zcats, spec.categorical)):
            p = softmax(z)
            drawn = (rng.random((batch, 1)) > np.cumsum(p, axis=1)).sum(axis=1)
            drawn = np.minimum(drawn, k - 1)
            rand = rng.integers(0, k, size=batch)
            cats[:, j] = np.where(rng.random(batch) < eps, rand, drawn)
    else:
        binary = (pb > 0.5).astype(int)
        cats = np.stack([np.argmax(z, axis=1) for z in zcats], axis=1) if zcats else \
            np.zeros((batch, 0), dtype=int)
    return Choice(cont=cont, binary=binary, cats=cats)


def critic_value(critic: PolicyParams, states, action_features):
    x = np.concatenate([np.atleast_2d(states), np.atleast_2d(action_features)], axis=1)
    out, _ = forward(critic, x)
    return out[:, 0]


def critic_loss_grad(critic: PolicyParams, states, action_features, targets):
    """Mean squared error to fixed targets and its gradient."""
    x = np.concatenate([np.atleast_2d(states), np.atleast_2d(action_features)], axis=1)
    out, acts = forward(critic, x)
    err = out[:, 0] - np.asarray(targets, float)
    loss = float(np.mean(err ** 2))
    grads, _ = backward(critic, acts, (2.0 / len(err)) * err[:, None])
    return loss, grads


def td_targets(critic, rewards, next_states, next_action_features, gamma):
    rewards = np.asarray(rewards, float)
    if gamma == 0 or next_states is None:
        return rewards
    return rewards + gamma * critic_value(critic, next_states, next_action_features)


def critic_update(batch, params: PolicyParams, next_action_source, gamma: float, lr: float,
                  optimizer: Adam | None = None):
    """One semi-gradient step on the mean squared one-step TD error.

    ``batch`` is a dict with ``s``, ``a``, ``r``, ``s2`` arrays;
    ``next_action_source(s2)`` returns encoded actor actions for the next
    states (ignored when ``gamma`` is 0).
    """
    a2 = next_action_source(batch["s2"]) if gamma > 0 else None
    y = td_targets(params, batch["r"], batch["s2"] if gamma > 0 else None, a2, gamma)
    loss, grads = critic_loss_grad(params, batch["s"], batch["a"], y)
    if lr == 0:
        return params.copy(), loss
    if optimizer is not None:
        return optimizer.step(params, grads), loss
    return params.axpy(-lr, grads), loss


def _critic_input_grad(critic, states, feats):
    x = np.concatenate([states, feats], axis=1)
    out, acts = forward(critic, x)
    _, dx = backward(critic, acts, np.ones((len(x), 1)))
    return out[:, 0], dx[:, states.shape[1]:]


def actor_surrogate(spec: HeadSpec, actor, critic, states, cont_scale, binary, cats, frozen_cont=None):
    """Value of the actor's surrogate objective (what actor_gradient ascends).

    Continuous heads enter through Q(s, mu(s), taken discrete); each discrete
    head contributes E_pi[Q] with the other components held at their taken or
    ``frozen_cont`` values.
    """
    logits, _ = forward(actor, states)
    zc, zb, zcats = spec.split(logits)
    cont = sigmoid(zc) * cont_scale
    frozen = cont if frozen_cont is None else frozen_cont
    total = critic_value(critic, states, encode(spec, cont, binary, cats))
    for j in range(spec.n_binary):
        p = sigmoid(zb[:, j])
        vals = []
        for v in (0, 1):
            b2 = binary.copy()
            b2[:, j] = v
            vals.append(critic_value(critic, states, encode(spec, frozen, b2, cats)))
        total = total + p * vals[1] + (1 - p) * vals[0]
    for j, k in enumerate(spec.categorical):
        p = softmax(zcats[j])
        for v in range(k):
            c2 = cats.copy()
            c2[:, j] = v
            total = total + p[:, v] * critic_value(critic, states, encode(spec, frozen, binary, c2))
    return float(np.mean(total))


def actor_gradient(spec: HeadSpec, actor, critic, states, cont_scale, binary, cats,
                   dq_dcont=None, q_alternatives=None):
    """Gradient of the surrogate objective with respect to actor parameters.

    ``dq_dcont(cont)`` and ``q_alternatives`` let callers substitute a
    synthetic critic; by default both come from ``critic``.
    Returns (grads of -objective, objective gradient wrt logits).
    """
    states = np.atleast_2d(states)
    batch = len(states)
    logits, acts = forward(actor, states)
    zc, zb, zcats = spec.split(logits)
    sc = sigmoid(zc)
    cont = sc * cont_scale
    d_logits = np.zeros_like(logits)
    if dq_dcont is not None:
        gq = dq_dcont(cont)
    else:
        _, gfeat = _critic_input_grad(critic, states, encode(spec, cont, binary, cats))
        gq = gfeat[:, :spec.n_cont]
    d_logits[:, :spec.n_cont] = gq * cont_scale * sc * (1 - sc)
    if q_alternatives is None:
        q_alternatives = _alternative_values(spec, critic, states, cont, binary, cats)
    pos = spec.n_cont
    for j in range(spec.n_binary):
        p = sigmoid(zb[:, j])
        q0, q1 = q_alternatives("binary", j, 0), q_alternatives("binary", j, 1)
        d_logits[:, pos + j] = p * (1 - p) * (q1 - q0)
    pos += spec.n_binary
    for j, k in enumerate(spec.categorical):
        p = softmax(zcats[j])
        q = np.stack([q_alternatives("categorical", j, v) for v in range(k)], axis=1)
        expected = (p * q).sum(axis=1, keepdims=True)
        d_logits[:, pos:pos + k] = p * (q - expected)
        pos += k
    grads, _ = backward(actor, acts, -d_logits / batch)
    return grads, d_logits


def _alternative_values(spec, critic, states, cont, binary, cats):
    """Critic values of every single-head deviation, in one batched forward pass."""
    keys, feats = [], []
    for j in range(spec.n_binary):
        for v in (0, 1):
            b2 = binary.copy()
            b2[:, j] = v
            keys.append(("binary", j, v))
            feats.append(encode(spec, cont, b2, cats))
    for j, k in enumerate(spec.categorical):
        for v in range(k):
            c2 = cats.copy()
            c2[:, j] = v
            keys.append(("categorical", j, v))
            feats.append(encode(spec, cont, binary, c2))
    if not keys:
        return lambda *key: None
    batch = len(states)
    vals = critic_value(critic, np.tile(states, (len(keys), 1)), np.concatenate(feats))
    table = {key: vals[i * batch:(i + 1) * batch] for i, key in enumerate(keys)}
    return lambda *key: table[key]


def actor_update(spec: HeadSpec, batch, actor_params, critic_params, lr: float,
                 optimizer: Adam | None = None, **kwargs):
    """One step ascending the critic's value of the actor's actions (descending -Q)."""
    grads, _ = actor_gradient(spec, actor_params, critic_params, batch["s"], batch["scale"],
                              batch["binary"], batch["cats"], **kwargs)
    if lr == 0:
        return actor_params.copy()
    if optimizer is not None:
        return optimizer.step(actor_params, grads)
    return actor_params.axpy(-lr, grads)


class ReplayBuffer:
    """FIFO store of one agent's own transitions."""

    def __init__(self, capacity: int):
        self.items = deque(maxlen=capacity)

    def __len__(self):
        return len(self.items)

    def add(self, **item):
        self.items.append(item)

    def sample(self, rng, size: int) -> dict:
        idx = rng.integers(0, len(self.items), size=min(size, len(self.items)))
        rows = [self.items[i] for i in idx]
        return {k: np.array([r[k] for r in rows]) for k in rows[0]}


@dataclass
class Agent:
    """An actor, a critic, their optimizers and a private replay buffer."""

    spec: HeadSpec
    actor: PolicyParams
    critic: PolicyParams
    actor_opt: Adam
    critic_opt: Adam
    buffer: ReplayBuffer
    gamma: float = 0.0
    losses: list = field(default_factory=list)

    @classmethod
    def create(cls, spec: HeadSpec, state_dim: int, hidden, rng, actor_lr, critic_lr,
               buffer_size, gamma=0.0) -> "Agent":
        actor = PolicyParams.init((state_dim, *hidden, spec.n_logits), rng)
        critic = PolicyParams.init((state_dim + spec.n_features, *hidden, 1), rng, out_scale=1.0)
        return cls(spec, actor, critic, Adam(actor_lr), Adam(critic_lr), ReplayBuffer(buffer_size), gamma)

    def act(self, state_vec, scale, rng, explore, eps=0.0, noise=0.0) -> Choice:
        return select(self.spec, self.actor, np.atleast_2d(state_vec), rng, explore, eps, noise)

    def remember(self, s, choice: Choice, scale, reward, s2, scale2):
        a = encode(self.spec, choice.cont * scale, choice.binary, choice.cats)[0]
        self.buffer.add(s=np.asarray(s, float), a=a, r=float(reward), s2=np.asarray(s2, float),
                        scale=np.asarray(scale, float).reshape(-1), scale2=np.asarray(scale2, float).reshape(-1),
                        binary=np.asarray(choice.binary).reshape(-1), cats=np.asarray(choice.cats).reshape(-1))

    def next_actions(self, s2, scale2):
        ch = select(self.spec, self.actor, s2)
        return encode(self.spec, ch.cont * scale2, ch.binary, ch.cats)

    def learn(self, rng, batch_size: int) -> None:
        if len(self.buffer) == 0:
            return
        b = self.buffer.sample(rng, batch_size)
        self.critic, loss = critic_update(b, self.critic, lambda s2: self.next_actions(s2, b["scale2"]),
                                          self.gamma, self.critic_opt.lr, self.critic_opt)
        self.actor = actor_update(self.spec, b, self.actor, self.critic, self.actor_opt.lr, self.actor_opt)
        self.losses.append(loss)
