import numpy as np
import pytest

from sgdtn import oracle as orc
from sgdtn.agents import MADFRLPolicy
from sgdtn.baselines import BaselinePolicy
from sgdtn.config import SimConfig, tiny_config
from sgdtn.env import SatelliteEnv, run_episode


def _slot(cfg, seed, queue=4e7, price=1.0):
    env = SatelliteEnv(cfg, np.random.default_rng(seed))
    slot = env.observe()
    slot.queue[:] = queue
    slot.prices = np.full(slot.queue.shape, price)
    shape = slot.queue.shape
    rng = np.random.default_rng(seed + 100)
    acts = (rng.uniform(0, 1e9, shape), rng.integers(0, cfg.n_channels, shape),
            rng.integers(0, 2, shape), rng.uniform(cfg.block_min, cfg.block_max, shape))
    return slot, acts


def test_grid_of_size_one():
    cfg = tiny_config()
    slot, acts = _slot(cfg, 0)
    grid = orc.ActionGrid(np.array([7e8]), np.array([1]), np.array([0]), np.array([3e5]))
    res = orc.oracle_slot_action(cfg, slot, 0, 0, *acts, grid=grid)
    assert grid.size == 1
    assert (res.action.cpu_freq, res.action.channel, res.action.offload, res.action.block_size) == (7e8, 1, 0, 3e5)


def test_zero_v_picks_max_service():
    cfg = tiny_config(v_lyapunov=0.0)
    for seed in range(10):
        slot, acts = _slot(cfg, seed)
        res = orc.oracle_slot_action(cfg, slot, 0, 1, *acts)
        served = [orc.scalar_value(cfg, slot, 0, 1, *acts, res.grid.action(i)) / slot.queue[0, 1]
                  for i in np.ndindex(res.grid.shape)]
        assert res.value / slot.queue[0, 1] == pytest.approx(max(served), rel=1e-12)
        assert res.action.cpu_freq == res.grid.freqs[-1]


def test_vectorized_values_match_scalar_and_reference():
    for cfg in (tiny_config(), SimConfig(n_mbs=2, followers_per_mbs=2, n_channels=2, i_max=1.0)):
        for seed in range(3):
            slot, acts = _slot(cfg, seed)
            for n in range(cfg.n_mbs):
                for m in range(cfg.followers_per_mbs):
                    res = orc.oracle_slot_action(cfg, slot, n, m, *acts)
                    for idx in np.ndindex(res.grid.shape):
                        a = res.grid.action(idx)
                        ref = orc.scalar_value(cfg, slot, n, m, *acts, a)
                        assert res.values[idx] == pytest.approx(ref, rel=1e-12)
                        assert orc.reference_value(cfg, slot, n, m, *acts, a) == pytest.approx(ref, rel=1e-12)


def test_ties_go_to_lowest_index():
    cfg = tiny_config(v_lyapunov=0.0)
    slot, acts = _slot(cfg, 1, queue=0.0)
    slot.prices[:] = 0.0
    grid = orc.ActionGrid(np.array([0.0]), np.arange(2), np.array([0, 1]), np.array([cfg.block_min]))
    res = orc.oracle_slot_action(cfg, slot, 0, 0, *acts, grid=grid)
    assert np.unravel_index(int(np.argmax(res.values)), res.values.shape) == (0, 0, 0, 0)
    assert res.action.channel == 0 and res.action.offload == 0


def test_oracle_dominates_played_actions():
    cfg = tiny_config(episode_len=30)
    pol = BaselinePolicy("marto", cfg, np.random.SeedSequence(0))
    trace = []
    env = SatelliteEnv(cfg, np.random.default_rng(0))
    run_episode(env, pol, None, cfg, on_slot=lambda s, o, a: trace.append(
        (s, o.freqs.copy(), o.channel.copy(), np.array([[x.offload for x in r] for r in a]), o.block.copy())))
    report = orc.verify_trace(cfg, trace)
    assert report.ok and report.checks == 60
    assert report.oracle_mean >= report.policy_mean


def test_best_response_frequency_monotone_in_price():
    cfg = tiny_config()
    for seed in range(5):
        slot, acts = _slot(cfg, seed, queue=1e6)
        freqs = []
        for lam in np.linspace(0, cfg.lambda_max, 11):
            slot.prices[:] = lam
            freqs.append(orc.oracle_slot_action(cfg, slot, 0, 0, *acts).action.cpu_freq)
        # the literal objective charges V * price * f, so the best response never speeds up
        assert all(b <= a for a, b in zip(freqs, freqs[1:]))


def test_leader_grid_search_shape():
    cfg = tiny_config()
    pol = MADFRLPolicy(cfg, np.random.SeedSequence(0))
    slots = []
    env = SatelliteEnv(cfg, np.random.default_rng(0))
    for _ in range(3):
        s = env.observe()
        s.queue[:] = 5e7
        slots.append(s)
    p, total, totals = orc.leader_grid_search(cfg, pol, slots, levels=6)
    assert totals.shape == (6,) and total == totals.max() and 0 <= p <= cfg.lambda_max
    assert totals[0] <= 0
