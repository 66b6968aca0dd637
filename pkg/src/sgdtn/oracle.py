"""Exhaustive per-slot action search on a discretized action grid.

The oracle re-optimizes one follower at a time with every other follower's
action frozen, so it certifies that a logged action is (or is not) a best
response on the grid. A second, loop-based evaluator re-derives the same
objective from the scalar channel and overhead functions and is used to
cross-check the vectorized search.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from . import topology as topo
from .config import SimConfig
from .env import FollowerAction, Slot, evaluate_slot, resolve_interference
from .ledger import slot_overheads
from .lyapunov import dpp_objective
from .stackelberg import leader_profit


@dataclass(frozen=True)
class ActionGrid:
    """Discretization of one follower's feasible box."""

    freqs: np.ndarray
    channels: np.ndarray
    offload: np.ndarray
    blocks: np.ndarray

    @classmethod
    def build(cls, cfg: SimConfig, f_cap: float, f_levels: int | None = None,
              block_levels: int | None = None) -> "ActionGrid":
        f_levels = cfg.oracle_f_levels if f_levels is None else f_levels
        block_levels = cfg.oracle_block_levels if block_levels is None else block_levels
        freqs = np.linspace(0.0, f_cap, f_levels) if f_levels > 1 else np.array([f_cap])
        if block_levels > 1:
            blocks = np.linspace(cfg.block_min, cfg.block_max, block_levels)
        else:
            blocks = np.array([cfg.block_min])
        return cls(freqs, np.arange(cfg.n_channels), np.array([0, 1]), blocks)

    @property
    def shape(self) -> tuple:
        return (len(self.freqs), len(self.channels), len(self.offload), len(self.blocks))

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def action(self, index) -> FollowerAction:
        i, r, o, b = index
        return FollowerAction(float(self.freqs[i]), int(self.channels[r]), int(self.offload[o]),
                              float(self.blocks[b]))


@dataclass
class OracleResult:
    action: FollowerAction
    value: float
    values: np.ndarray
    grid: ActionGrid


def _substituted(arrays, n, m, values):
    out = []
    for arr, v in zip(arrays, values):
        arr = np.array(arr, copy=True)
        arr[n, m] = v
        out.append(arr)
    return out


def grid_values(cfg: SimConfig, slot: Slot, n: int, m: int, f, channel, offload, block,
                grid: ActionGrid) -> np.ndarray:
    """Follower (n, m)'s drift-plus-penalty value for every grid action.

    Shape follows ``grid.shape`` (f, channel, offload, block).
    """
    f = np.asarray(f, float)
    q = float(slot.queue[n, m])
    w = float(slot.cycles_per_bit[n, m])
    price = float(slot.prices[n, m])
    v = cfg.v_lyapunov
    nf, nr, no, nb = grid.shape

    # overhead depends only on (f, block): the slowest verifier at this MBS can change
    overhead = np.empty((nf, nb))
    for i, fi in enumerate(grid.freqs):
        ff = f.copy()
        ff[n, m] = fi
        for b, bi in enumerate(grid.blocks):
            blk = np.array(block, float, copy=True)
            blk[n, m] = bi
            overhead[i, b] = slot_overheads(cfg, blk, ff)[n, m]

    local = grid.freqs * cfg.slot_duration / w
    remote = np.zeros(nr)
    active = np.zeros(nr, bool)
    for r, ch in enumerate(grid.channels):
        chs, offs = _substituted((channel, offload), n, m, (ch, 1))
        act, interf, _ = resolve_interference(cfg, slot.losses, chs, offs)
        active[r] = act[n, m]
        if active[r]:
            rate = topo.offload_rate(cfg.channel_bandwidth, 1, cfg.tx_power, slot.losses[n, m, ch],
                                     cfg.noise_power, interf[n, m])
            remote[r] = topo.offload_bits(rate, cfg.slot_duration)

    served = np.empty((nf, nr, no))
    for o, flag in enumerate(grid.offload):
        if flag:
            served[:, :, o] = np.where(active[None, :], remote[None, :], local[:, None])
        else:
            served[:, :, o] = local[:, None]
    fs = grid.freqs[:, None, None, None]
    return dpp_objective(q, served[..., None], fs, price, overhead[:, None, None, :], v)


def oracle_slot_action(cfg: SimConfig, slot: Slot, n: int, m: int, f, channel, offload, block,
                       grid: ActionGrid | None = None) -> OracleResult:
    """Best grid action for follower (n, m) with the others frozen.

    Ties go to the lowest flat index in (f, channel, offload, block) order.
    """
    if grid is None:
        grid = ActionGrid.build(cfg, slot.bounds(cfg, n, m).f_cap)
    values = grid_values(cfg, slot, n, m, f, channel, offload, block, grid)
    flat = int(np.argmax(values))
    idx = np.unravel_index(flat, values.shape)
    return OracleResult(grid.action(idx), float(values[idx]), values, grid)


def reference_value(cfg: SimConfig, slot: Slot, n: int, m: int, f, channel, offload, block,
                    action: FollowerAction) -> float:
    """Follower (n, m)'s objective after substituting ``action``, via the full slot evaluator."""
    f2, ch2, off2, blk2 = _substituted((f, channel, offload, block), n, m,
                                       (action.cpu_freq, action.channel, action.offload, action.block_size))
    out = evaluate_slot(cfg, slot, f2, ch2, off2, blk2, slot.prices)
    return float(out.reward[n, m])


def scalar_value(cfg: SimConfig, slot: Slot, n: int, m: int, f, channel, offload, block,
                 action: FollowerAction) -> float:
    """Independent loop-based evaluation of the same objective.

    Rebuilds interference, demotion, rate, overhead and the objective from
    plain Python loops over followers instead of the array kernels.
    """
    N, M = cfg.n_mbs, cfg.followers_per_mbs
    f2, ch2, off2, blk2 = _substituted((f, channel, offload, block), n, m,
                                       (action.cpu_freq, action.channel, action.offload, action.block_size))
    active = {(i, j) for i in range(N) for j in range(M) if off2[i, j]}

    def seen(i, j):
        total = 0.0
        for (a, b) in active:
            if a != i and ch2[a, b] == ch2[i, j]:
                total += cfg.tx_power * (10.0 ** (-slot.losses[a, b, ch2[a, b]] / 10.0)) ** 2
        return total

    while True:
        bad = {(i, j) for (i, j) in active if seen(i, j) > cfg.i_max}
        if not bad:
            break
        active -= bad
    if (n, m) in active:
        gain = (10.0 ** (-slot.losses[n, m, ch2[n, m]] / 10.0)) ** 2
        sinr = cfg.tx_power * gain / (cfg.noise_power + seen(n, m))
        served = cfg.channel_bandwidth * math.log2(1.0 + sinr) * cfg.slot_duration
    else:
        served = f2[n, m] * cfg.slot_duration / slot.cycles_per_bit[n, m]
    wf = cfg.workload_factor
    overhead = cfg.model_size * wf / cfg.mbs_cpu_freq
    overhead += cfg.model_tx_factor * math.log2(N) * cfg.model_size / cfg.uplink_rate
    overhead += cfg.model_tx_factor * math.log2(N * M) * blk2[n, m] / cfg.downlink_rate
    busy = [f2[n, j] for j in range(M) if f2[n, j] > 0]
    if busy:
        overhead += blk2[n, m] * wf / min(busy)
    q, price = slot.queue[n, m], slot.prices[n, m]
    return float(q * served + cfg.v_lyapunov * (served - overhead - price * f2[n, m]))


@dataclass
class VerifyReport:
    slots: int
    checks: int
    failures: list
    oracle_mean: float
    policy_mean: float

    @property
    def ok(self) -> bool:
        return not self.failures

    @property
    def ratio(self) -> float:
        if self.oracle_mean == 0:
            return 1.0
        return self.policy_mean / self.oracle_mean


def verify_trace(cfg: SimConfig, trace, rtol: float = 1e-9) -> VerifyReport:
    """Certify the oracle on every slot of ``trace``.

    ``trace`` is a list of (slot, f, channel, offload, block) tuples holding
    the actions some policy actually played. For each follower the oracle
    action must match the best value found by brute-force scalar evaluation
    over the same grid; the policy's own value is collected alongside.
    """
    failures, checks = [], 0
    oracle_total = policy_total = 0.0
    for t, (slot, f, ch, off, blk) in enumerate(trace):
        played = evaluate_slot(cfg, slot, f, ch, off, blk, slot.prices).reward
        for n in range(cfg.n_mbs):
            for m in range(cfg.followers_per_mbs):
                res = oracle_slot_action(cfg, slot, n, m, f, ch, off, blk)
                brute = max(scalar_value(cfg, slot, n, m, f, ch, off, blk, res.grid.action(idx))
                            for idx in np.ndindex(res.grid.shape))
                chosen = scalar_value(cfg, slot, n, m, f, ch, off, blk, res.action)
                scale = max(abs(brute), 1.0)
                checks += 1
                if abs(chosen - brute) > rtol * scale or abs(res.value - chosen) > rtol * scale:
                    failures.append((t, n, m, res.value, chosen, brute))
                oracle_total += res.value
                policy_total += float(played[n, m])
    cells = max(len(trace) * cfg.n_followers, 1)
    return VerifyReport(len(trace), checks, failures, oracle_total / cells, policy_total / cells)


def follower_response(cfg: SimConfig, policy, slot: Slot, price: float) -> np.ndarray:
    """CPU frequencies ``policy`` plays on ``slot`` when every price is ``price``."""
    from .env import stack_actions

    quoted = dataclasses.replace(slot, prices=np.full(slot.queue.shape, float(price)))
    n, m = cfg.n_mbs, cfg.followers_per_mbs
    states = [[quoted.state(i, j) for j in range(m)] for i in range(n)]
    bounds = [[quoted.bounds(cfg, i, j) for j in range(m)] for i in range(n)]
    actions = policy.decide(quoted, states, bounds, None, False)
    return stack_actions(actions, cfg)[0]


def leader_grid_search(cfg: SimConfig, policy, slots, levels: int = 21):
    """Best uniform price against the followers' greedy responses, summed over ``slots``.

    Returns (best price, best total profit, total profit per grid price).
    """
    prices = np.linspace(0.0, cfg.lambda_max, levels)
    totals = np.zeros(levels)
    for slot in slots:
        for k, p in enumerate(prices):
            f = follower_response(cfg, policy, slot, p)
            totals[k] += leader_profit(np.full(f.shape, p), f, cfg.unit_energy_cost)
    k = int(np.argmax(totals))
    return float(prices[k]), float(totals[k]), totals
