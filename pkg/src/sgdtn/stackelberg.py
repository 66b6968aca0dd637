"""Leader pricing and follower utility for the two-stage pricing game."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .policy import Agent, HeadSpec, select


@dataclass
class LeaderState:
    follower_freqs: np.ndarray
    unit_cost: float

    def features(self, cfg) -> np.ndarray:
        f = np.asarray(self.follower_freqs, float).ravel() / max(cfg.follower_cpu_max, 1.0)
        return np.concatenate([f, [self.unit_cost / max(cfg.lambda_max, 1e-12)]])


@dataclass
class PriceQuote:
    price: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.price) < 0):
            raise ValueError("prices must be >= 0")


def leader_profit(prices, freqs, unit_cost) -> float:
    prices = np.asarray(prices, float)
    if np.any(prices < 0):
        raise ValueError("prices must be >= 0")
    freqs = np.asarray(freqs, float)
    return float(np.sum(prices * freqs - unit_cost * freqs))


def leader_spec(cfg) -> HeadSpec:
    return HeadSpec(n_cont=cfg.n_followers)


def make_leader(cfg, rng) -> Agent:
    return Agent.create(leader_spec(cfg), cfg.n_followers + 1, cfg.hidden, rng,
                        cfg.leader_lr, cfg.critic_lr, cfg.buffer_size, gamma=0.0)


def leader_select(state: LeaderState, params, rng, explore, cfg, noise: float = 0.0) -> PriceQuote:
    """Quote one price per follower, projected to [0, lambda_max]."""
    ch = select(leader_spec(cfg), params, state.features(cfg)[None, :], rng, explore, 0.0, noise)
    price = np.clip(ch.cont[0], 0.0, 1.0) * cfg.lambda_max
    return PriceQuote(price.reshape(cfg.n_mbs, cfg.followers_per_mbs))


def profit_scale(cfg) -> float:
    return max(cfg.lambda_max * cfg.follower_cpu_max * cfg.n_followers, 1e-12)


def follower_utility(throughput_avg, overhead, price, freq, price_sign: str = "literal"):
    """F1 - F2 with F2 = C_SBC - price * f (literal) or C_SBC + price * f (cost)."""
    price_term = np.asarray(price, float) * freq
    f2 = overhead - price_term if price_sign == "literal" else overhead + price_term
    return np.asarray(throughput_avg, float) - f2


class ThroughputAverage:
    """Exponentially weighted running average of served bits, per follower."""

    def __init__(self, shape, weight: float):
        self.weight = weight
        self.value = np.zeros(shape)
        self.started = False

    def update(self, served) -> np.ndarray:
        served = np.asarray(served, float)
        if not self.started:
            self.value = served.copy()
            self.started = True
        else:
            self.value = (1 - self.weight) * self.value + self.weight * served
        return self.value
