"""MADFRL followers and the learning price leader, wired to the environment."""

from __future__ import annotations

import numpy as np

from .config import SimConfig
from .env import STATE_DIM, cont_scale, follower_spec, reward_scale, to_action
from .policy import Agent
from .stackelberg import LeaderState, make_leader, profit_scale


def spawn_rngs(seed_seq: np.random.SeedSequence, count: int):
    return [np.random.default_rng(s) for s in seed_seq.spawn(count)]


class MADFRLPolicy:
    """One independent actor-critic agent per follower.

    ``decide`` hands each agent only its own state; ``record`` gives each
    agent only its own transition, so no agent ever reads another's data.
    """

    name = "madfrl"

    def __init__(self, cfg: SimConfig, seed_seq: np.random.SeedSequence):
        self.cfg = cfg
        self.spec = follower_spec(cfg)
        self.keys = [(i, j) for i in range(cfg.n_mbs) for j in range(cfg.followers_per_mbs)]
        init_seq, act_seq = seed_seq.spawn(2)
        init_rngs = spawn_rngs(init_seq, len(self.keys))
        self.rngs = dict(zip(self.keys, spawn_rngs(act_seq, len(self.keys))))
        self.agents = {
            k: Agent.create(self.spec, STATE_DIM, cfg.hidden, r, cfg.actor_lr, cfg.critic_lr,
                            cfg.buffer_size, cfg.gamma)
            for k, r in zip(self.keys, init_rngs)
        }
        self.eps = cfg.explore_eps_start
        self.noise = cfg.noise_start
        self.r_scale = reward_scale(cfg)
        self._last = {}
        self._slots = 0

    def set_schedule(self, progress: float) -> None:
        """Anneal exploration linearly; ``progress`` runs from 0 to 1."""
        p = min(max(progress, 0.0), 1.0)
        cfg = self.cfg
        self.eps = cfg.explore_eps_start + p * (cfg.explore_eps_end - cfg.explore_eps_start)
        self.noise = cfg.noise_start + p * (cfg.noise_end - cfg.noise_start)

    def decide(self, slot, states, bounds, rng, explore):
        actions = [[None] * self.cfg.followers_per_mbs for _ in range(self.cfg.n_mbs)]
        for (i, j) in self.keys:
            s = states[i][j].features(self.cfg)
            scale = cont_scale(bounds[i][j], self.cfg)
            ch = self.agents[(i, j)].act(s, scale, self.rngs[(i, j)], explore, self.eps, self.noise)
            self._last[(i, j)] = (s, ch, scale)
            actions[i][j] = to_action(ch.cont[0], ch.binary[0], ch.cats[0], bounds[i][j])
        return actions

    def record(self, states, actions, out, next_states, next_bounds):
        for (i, j) in self.keys:
            s, ch, scale = self._last[(i, j)]
            if next_states is not None:
                s2 = next_states[i][j].features(self.cfg)
                scale2 = cont_scale(next_bounds[i][j], self.cfg)
            else:
                s2, scale2 = s, scale
            self.agents[(i, j)].remember(s, ch, scale, out.reward[i, j] / self.r_scale, s2, scale2)

    def learn(self, rng):
        self._slots += 1
        if self._slots % self.cfg.update_every:
            return
        for k in self.keys:
            self.agents[k].learn(self.rngs[k], self.cfg.batch_size)

    def actor_params(self):
        return {k: a.actor for k, a in self.agents.items()}


class PricingLeader:
    """Actor-critic leader quoting per-follower prices from last slot's CPU frequencies."""

    def __init__(self, cfg: SimConfig, seed_seq: np.random.SeedSequence):
        self.cfg = cfg
        init_rng, self.rng = spawn_rngs(seed_seq, 2)
        self.agent = make_leader(cfg, init_rng)
        self.noise = cfg.noise_start
        self.scale = profit_scale(cfg)
        self._last = None

    def set_schedule(self, progress: float) -> None:
        p = min(max(progress, 0.0), 1.0)
        self.noise = self.cfg.noise_start + p * (self.cfg.noise_end - self.cfg.noise_start)

    def state(self, prev_freqs) -> np.ndarray:
        return LeaderState(prev_freqs, self.cfg.unit_energy_cost).features(self.cfg)

    def quote(self, prev_freqs, rng, explore) -> np.ndarray:
        s = self.state(prev_freqs)
        ch = self.agent.act(s, 1.0, self.rng, explore, 0.0, self.noise)
        self._last = (s, ch)
        return ch.cont[0].reshape(self.cfg.n_mbs, self.cfg.followers_per_mbs) * self.cfg.lambda_max

    def observe(self, out, learn: bool) -> None:
        if not learn or self._last is None:
            return
        s, ch = self._last
        s2 = self.state(out.freqs)
        self.agent.remember(s, ch, np.ones(self.cfg.n_followers), out.profit / self.scale, s2,
                            np.ones(self.cfg.n_followers))

    def learn(self, rng) -> None:
        self.agent.learn(self.rng, self.cfg.batch_size)


class FixedPriceLeader:
    """Quotes a constant price; used by tests and the grid-search oracle."""

    def __init__(self, cfg: SimConfig, price: float):
        self.cfg = cfg
        self.price = float(price)

    def quote(self, prev_freqs, rng, explore):
        return np.full((self.cfg.n_mbs, self.cfg.followers_per_mbs), self.price)

    def observe(self, out, learn):
        pass

    def learn(self, rng):
        pass
