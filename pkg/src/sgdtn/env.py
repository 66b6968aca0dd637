"""Slot-level simulation of the satellite-ground network.

Per slot: the leader quotes prices from last slot's CPU frequencies, every
follower observes only its own state, actions are selected, interference is
computed jointly, offloads that break the interference cap are demoted to
local processing, then bits are served, queues advance and rewards follow.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import topology as topo
from .config import SimConfig
from .ledger import slot_overheads
from .lyapunov import dpp_objective, queue_update
from .policy import HeadSpec
from .stackelberg import ThroughputAverage, leader_profit

STATE_DIM = 5


@dataclass
class FollowerState:
    arrival: float
    leo_x: float
    leo_y: float
    price: float
    queue: float

    def features(self, cfg: SimConfig) -> np.ndarray:
        ref = max(cfg.arrival_hi, 1.0)
        return np.array([
            self.arrival / ref,
            self.leo_x / cfg.x_hi,
            self.leo_y / cfg.y_hi,
            self.price / max(cfg.lambda_max, 1e-12),
            min(self.queue / ref, 10.0),
        ])


@dataclass
class FollowerAction:
    cpu_freq: float
    channel: int
    offload: int
    block_size: float


@dataclass
class ActionBounds:
    f_cap: float
    block_min: float
    block_max: float
    n_channels: int

    @classmethod
    def for_follower(cls, cfg: SimConfig, queue: float, w: float) -> "ActionBounds":
        """Feasible box: f <= min(f_max, w Q / T) keeps local service within the queue."""
        cap = min(cfg.follower_cpu_max, w * queue / cfg.slot_duration)
        return cls(max(cap, 0.0), cfg.block_min, cfg.block_max, cfg.n_channels)


class ActionInvalid(ValueError):
    pass


def check_action(action: FollowerAction, bounds: ActionBounds, tol: float = 1e-9) -> None:
    f_slack = tol * max(bounds.f_cap, 1.0)
    b_slack = tol * max(bounds.block_max, 1.0)
    if not -f_slack <= action.cpu_freq <= bounds.f_cap + f_slack:
        raise ActionInvalid(f"cpu_freq {action.cpu_freq} outside [0, {bounds.f_cap}]")
    if not bounds.block_min - b_slack <= action.block_size <= bounds.block_max + b_slack:
        raise ActionInvalid(f"block_size {action.block_size} outside [{bounds.block_min}, {bounds.block_max}]")
    if action.offload not in (0, 1):
        raise ActionInvalid(f"offload flag {action.offload} not binary")
    if not 0 <= action.channel < bounds.n_channels:
        raise ActionInvalid(f"channel {action.channel} outside [0, {bounds.n_channels})")


def follower_spec(cfg: SimConfig) -> HeadSpec:
    return HeadSpec(n_cont=2, n_binary=1, categorical=(cfg.n_channels,))


def cont_scale(bounds: ActionBounds, cfg: SimConfig) -> np.ndarray:
    """Maps head fractions to critic features: f / f_max and the block fraction."""
    return np.array([bounds.f_cap / max(cfg.follower_cpu_max, 1e-12), 1.0])


def to_action(cont, binary, cats, bounds: ActionBounds) -> FollowerAction:
    f_frac, b_frac = float(np.clip(cont[0], 0, 1)), float(np.clip(cont[1], 0, 1))
    return FollowerAction(
        cpu_freq=f_frac * bounds.f_cap,
        channel=int(cats[0]),
        offload=int(binary[0]),
        block_size=bounds.block_min + b_frac * (bounds.block_max - bounds.block_min),
    )


@dataclass
class Slot:
    """Everything random about one slot, drawn before any decision."""

    t: int
    arrivals: np.ndarray
    cycles_per_bit: np.ndarray
    geometry: topo.LeoGeometry
    target: np.ndarray
    x: np.ndarray
    y: np.ndarray
    losses: np.ndarray
    queue: np.ndarray
    prices: np.ndarray = None

    def state(self, n: int, m: int) -> FollowerState:
        return FollowerState(float(self.arrivals[n, m]), float(self.x[n, m]), float(self.y[n, m]),
                             float(self.prices[n, m]), float(self.queue[n, m]))

    def bounds(self, cfg: SimConfig, n: int, m: int) -> ActionBounds:
        return ActionBounds.for_follower(cfg, float(self.queue[n, m]), float(self.cycles_per_bit[n, m]))


@dataclass
class Outcome:
    freqs: np.ndarray
    offload: np.ndarray
    channel: np.ndarray
    block: np.ndarray
    demoted: np.ndarray
    interference: np.ndarray
    served: np.ndarray
    overhead: np.ndarray
    reward: np.ndarray
    queue_before: np.ndarray
    queue_after: np.ndarray
    prices: np.ndarray
    profit: float


def stack_actions(actions, cfg: SimConfig):
    n, m = cfg.n_mbs, cfg.followers_per_mbs
    f = np.array([[actions[i][j].cpu_freq for j in range(m)] for i in range(n)], float)
    ch = np.array([[actions[i][j].channel for j in range(m)] for i in range(n)], int)
    off = np.array([[actions[i][j].offload for j in range(m)] for i in range(n)], int)
    blk = np.array([[actions[i][j].block_size for j in range(m)] for i in range(n)], float)
    return f, ch, off, blk


def resolve_interference(cfg: SimConfig, losses, channel, offload):
    """Joint interference with hard enforcement of the cap.

    Offloaders whose interference exceeds ``i_max`` are demoted to local
    processing; demotion only removes transmitters, so the loop terminates.
    Returns (effective offload mask, interference per follower, demoted mask).
    """
    active = np.asarray(offload, bool).copy()
    nn = np.arange(cfg.n_mbs)[:, None]
    while True:
        assign = topo.ChannelAssignment.from_choices(channel, active, cfg.tx_power, cfg.n_channels)
        imat = topo.interference_matrix(assign, losses)
        seen = imat[nn, channel]
        violate = active & (seen > cfg.i_max)
        if not violate.any():
            break
        active &= ~violate
    demoted = np.asarray(offload, bool) & ~active
    return active, np.where(active, seen, 0.0), demoted


def evaluate_slot(cfg: SimConfig, slot: Slot, f, channel, offload, block, prices) -> Outcome:
    active, interf, demoted = resolve_interference(cfg, slot.losses, channel, offload)
    nn, mm = np.indices(channel.shape)
    link_loss = slot.losses[nn, mm, channel]
    rate = topo.offload_rate(cfg.channel_bandwidth, active, cfg.tx_power, link_loss, cfg.noise_power, interf)
    d_local = topo.local_bits(f, slot.cycles_per_bit, cfg.slot_duration)
    d_remote = topo.offload_bits(rate, cfg.slot_duration)
    served = np.where(active, d_remote, d_local)
    overhead = slot_overheads(cfg, block, f)
    reward = dpp_objective(slot.queue, served, f, prices, overhead, cfg.v_lyapunov)
    q_after = queue_update(slot.queue, served, slot.arrivals)
    profit = leader_profit(prices, f, cfg.unit_energy_cost)
    return Outcome(f, active.astype(int), channel, block, demoted, interf, served, overhead,
                   reward, slot.queue.copy(), q_after, np.asarray(prices, float).copy(), profit)


class SatelliteEnv:
    """Stochastic environment; owns queues and the slot randomness stream."""

    def __init__(self, cfg: SimConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        shape = (cfg.n_mbs, cfg.followers_per_mbs)
        self.queue = np.zeros(shape)
        self.stats = topo.ArrivalStats(cfg)
        self.throughput = ThroughputAverage(shape, cfg.throughput_ewma)
        self.prev_freqs = np.zeros(shape)
        self.t = 0

    def observe(self) -> Slot:
        cfg = self.cfg
        arrivals = topo.sample_arrivals(self.rng, cfg, self.stats).bits
        w = topo.sample_cycles_per_bit(self.rng, cfg)
        geo = topo.step_geometry(self.rng, cfg)
        eps_los, eps_nlos = topo.sample_excess_loss(self.rng, cfg)
        target = geo.nearest_leo()
        x, y = geo.target(target)
        losses = topo.path_loss(x[..., None], y[..., None], cfg, eps_los, eps_nlos)
        return Slot(self.t, arrivals, w, geo, target, x, y, losses, self.queue.copy())

    def step(self, slot: Slot, f, channel, offload, block, prices) -> Outcome:
        out = evaluate_slot(self.cfg, slot, f, channel, offload, block, prices)
        self.queue = out.queue_after
        self.throughput.update(out.served)
        self.prev_freqs = out.freqs.copy()
        self.t += 1
        return out


@dataclass
class Transition:
    """One follower's logged step; primitives allow exact reward replay."""

    agent: tuple
    state: FollowerState
    action: FollowerAction
    reward: float
    next_state: FollowerState | None
    served: float
    overhead: float
    queue: float
    price: float


@dataclass
class SlotMetrics:
    slot: int
    queue: np.ndarray
    throughput: np.ndarray
    interference: np.ndarray
    overhead: np.ndarray
    price: np.ndarray
    leader_profit: float
    reward: np.ndarray


def reward_scale(cfg: SimConfig) -> float:
    return max(cfg.arrival_hi, 1.0) ** 2


def run_episode(env: SatelliteEnv, policy, leader, cfg: SimConfig, slots: int | None = None,
                rng=None, learn: bool = False, explore: bool = False, on_slot=None):
    """Simulate ``slots`` slots (default ``cfg.episode_len``).

    ``policy`` implements ``decide(slot, states, bounds, rng, explore)``
    returning an N x M grid of FollowerAction, and optionally ``record`` /
    ``learn`` hooks. ``leader`` is a ``PricingLeader`` or None for zero prices.
    Returns (transitions per agent, list of SlotMetrics).
    """
    slots = cfg.episode_len if slots is None else slots
    rng = rng if rng is not None else np.random.default_rng(0)
    n, m = cfg.n_mbs, cfg.followers_per_mbs
    transitions = {(i, j): [] for i in range(n) for j in range(m)}
    metrics = []
    pending = None
    for _ in range(slots):
        slot = env.observe()
        if leader is not None:
            slot.prices = leader.quote(env.prev_freqs, rng, explore)
        else:
            slot.prices = np.zeros((n, m))
        states = [[slot.state(i, j) for j in range(m)] for i in range(n)]
        bounds = [[slot.bounds(cfg, i, j) for j in range(m)] for i in range(n)]
        if pending is not None:
            _close(pending, states, transitions, policy, bounds, learn)
        actions = policy.decide(slot, states, bounds, rng, explore)
        for i in range(n):
            for j in range(m):
                check_action(actions[i][j], bounds[i][j])
        f, ch, off, blk = stack_actions(actions, cfg)
        out = env.step(slot, f, ch, off, blk, slot.prices)
        if leader is not None:
            leader.observe(out, learn)
        pending = (states, actions, out)
        metrics.append(SlotMetrics(slot.t, out.queue_before, out.served, out.interference,
                                   out.overhead, out.prices, out.profit, out.reward))
        if learn and hasattr(policy, "learn"):
            policy.learn(rng)
        if learn and leader is not None:
            leader.learn(rng)
        if on_slot is not None:
            on_slot(slot, out, actions)
    if pending is not None:
        _close(pending, None, transitions, policy, None, learn)
    return transitions, metrics


def _close(pending, next_states, transitions, policy, next_bounds, learn):
    states, actions, out = pending
    for (i, j), log in transitions.items():
        nxt = next_states[i][j] if next_states is not None else None
        log.append(Transition((i, j), states[i][j], actions[i][j], float(out.reward[i, j]), nxt,
                              float(out.served[i, j]), float(out.overhead[i, j]),
                              float(out.queue_before[i, j]), float(out.prices[i, j])))
    if learn and hasattr(policy, "record"):
        policy.record(states, actions, out, next_states, next_bounds)
