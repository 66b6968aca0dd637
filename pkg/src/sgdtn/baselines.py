"""Comparison policies: random offloading, greedy channel selection, equal CPU shares.

Components a baseline does not specify fall back to the random rule, so each
baseline differs from random offloading in exactly one mechanism.
"""

from __future__ import annotations

import enum

import numpy as np

from .env import ActionBounds, FollowerAction


class BaselineKind(enum.Enum):
    MARTO = "marto"
    MAGCS = "magcs"
    MAMCC = "mamcc"


def _random_action(bounds: ActionBounds, rng) -> FollowerAction:
    return FollowerAction(
        cpu_freq=float(rng.uniform(0.0, bounds.f_cap)) if bounds.f_cap > 0 else 0.0,
        channel=int(rng.integers(0, bounds.n_channels)),
        offload=int(rng.integers(0, 2)),
        block_size=float(rng.uniform(bounds.block_min, bounds.block_max)),
    )


def marto_select(state, rng, cfg, bounds: ActionBounds) -> FollowerAction:
    return _random_action(bounds, rng)


def magcs_select(state, channel_losses, rng, cfg, bounds: ActionBounds) -> FollowerAction:
    """Random rule with the channel replaced by the lowest-loss one (ties -> lowest index)."""
    action = _random_action(bounds, rng)
    action.channel = int(np.argmin(np.asarray(channel_losses)))
    return action


def mamcc_select(state, cfg, bounds: ActionBounds, rng) -> FollowerAction:
    """Random rule with CPU set to an equal share of ``cfg.mamcc_pool``."""
    action = _random_action(bounds, rng)
    share = cfg.mamcc_pool / cfg.n_followers
    action.cpu_freq = float(min(share, bounds.f_cap))
    return action


class BaselinePolicy:
    def __init__(self, kind: BaselineKind | str, cfg, seed_seq: np.random.SeedSequence):
        self.kind = BaselineKind(kind)
        self.name = self.kind.value
        self.cfg = cfg
        self.rng = np.random.default_rng(seed_seq)

    def decide(self, slot, states, bounds, rng, explore):
        cfg = self.cfg
        out = []
        for i in range(cfg.n_mbs):
            row = []
            for j in range(cfg.followers_per_mbs):
                b = bounds[i][j]
                if self.kind is BaselineKind.MARTO:
                    row.append(marto_select(states[i][j], self.rng, cfg, b))
                elif self.kind is BaselineKind.MAGCS:
                    row.append(magcs_select(states[i][j], slot.losses[i, j], self.rng, cfg, b))
                else:
                    row.append(mamcc_select(states[i][j], cfg, b, self.rng))
            out.append(row)
        return out
