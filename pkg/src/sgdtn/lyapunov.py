"""Virtual task queues and the drift-plus-penalty per-slot objective."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def served_bits(offload, local, remote):
    """Bits served this slot: local processing unless the follower offloads."""
    return np.where(np.asarray(offload, bool), remote, local)


def queue_update(q, served, arrived):
    return np.maximum(np.asarray(q, float) - served + arrived, 0.0)


@dataclass
class QueueState:
    backlog: np.ndarray
    history: list = field(default_factory=list)

    @classmethod
    def empty(cls, shape) -> "QueueState":
        return cls(backlog=np.zeros(shape))

    def step(self, served, arrived) -> np.ndarray:
        self.history.append(self.backlog.copy())
        self.backlog = queue_update(self.backlog, served, arrived)
        return self.backlog

    def time_average(self) -> np.ndarray:
        if not self.history:
            return np.zeros_like(self.backlog)
        return np.mean(self.history, axis=0)


@dataclass
class DriftConstants:
    v: float
    x_bound: float
    x_hat: float
    d_max: float
    eta: float


def dpp_objective(q, served, f, price, overhead, v):
    """Q * D + V * F with F = D - C_SBC - price * f; larger is better."""
    served = np.asarray(served, float)
    return np.asarray(q, float) * served + v * (served - overhead - np.asarray(price, float) * f)


def instant_reward(q, served, f, price, overhead, v, per_follower: bool = False):
    """Sum of per-follower drift-plus-penalty terms (or the terms themselves)."""
    terms = dpp_objective(q, served, f, price, overhead, v)
    return terms if per_follower else float(np.sum(terms))


def drift_bound(eta, d_max):
    """X = eta / 2 + D_max^2, the constant dominating the squared-increment term."""
    return 0.5 * np.asarray(eta, float) + np.square(d_max)


def drift_constants(eta, d_max, q, arrival, v) -> DriftConstants:
    x = float(np.max(drift_bound(eta, d_max)))
    return DriftConstants(v=v, x_bound=x, x_hat=x + float(np.max(np.asarray(q) * arrival)),
                          d_max=float(np.max(d_max)), eta=float(np.max(eta)))


def theoretical_queue_bound(x_hat, s_max, s_min, v, varsigma):
    """Upper envelope on the time-average queue: (X_hat + (S_max - S_min) V) / varsigma."""
    if not varsigma > 0:
        raise ValueError("varsigma must be > 0")
    return (x_hat + (s_max - s_min) * v) / varsigma


def lyapunov_drift(q, q_next):
    return 0.5 * np.square(q_next) - 0.5 * np.square(q)
