import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sgdtn import federation as fed
from sgdtn.ledger import Ledger, Status
from sgdtn.nn import LayoutMismatch, PolicyParams

LAYOUT = (3, 4, 2)


def _params(seed):
    return PolicyParams.init(LAYOUT, np.random.default_rng(seed), out_scale=1.0)


def test_compute_delta_examples():
    z = _params(0)
    assert not np.any(fed.compute_delta(z, z).flat())
    ones = PolicyParams.from_flat(LAYOUT, np.ones(z.size))
    assert np.array_equal(fed.compute_delta(ones, PolicyParams.zeros(LAYOUT)).flat(), np.ones(z.size))
    with pytest.raises(LayoutMismatch):
        fed.compute_delta(z, PolicyParams.zeros((3, 5, 2)))


def test_issue_with_unit_step_gives_two_z_minus_local():
    z, local = _params(1), _params(2)
    rnd = fed.FederationRound(z, [fed.compute_delta(z, local)], np.array([1.0]), 1.0)
    assert np.allclose(fed.aggregate(rnd).flat(), 2 * z.flat() - local.flat(), rtol=0, atol=1e-15)


def test_aggregation_weight_examples():
    assert fed.follower_weights([5, 5, 5, 5], [3, 3, 3, 3]).tolist() == [0.25] * 4
    w = fed.aggregation_weight(np.array([0.75, 0.25]), np.array([0.5, 0.5]), 1.0, 1.0)
    assert np.allclose(w, [0.625, 0.375], rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        fed.aggregation_weight(1.0, 1.0, 0.0, 1.0)


def test_weights_sum_to_one_random_draws():
    rng = np.random.default_rng(3)
    for _ in range(10_000):
        k = rng.integers(1, 10)
        w = fed.follower_weights(rng.uniform(1, 1e8, k), rng.uniform(1e5, 3e6, k))
        assert np.all(w >= 0) and abs(w.sum() - 1.0) <= 1e-12


def test_weighted_ordering():
    w = fed.follower_weights([3e7, 1e7], [2e6, 1e6])
    assert w[0] > w[1]


def test_zero_step_leaves_model_unchanged():
    z = _params(4)
    rnd = fed.FederationRound(z, [fed.compute_delta(z, _params(5))], np.array([1.0]), 0.0)
    assert np.array_equal(fed.aggregate(rnd).flat(), z.flat())
    zero = fed.FederationRound(z, [PolicyParams.zeros(LAYOUT)] * 3, np.full(3, 1 / 3), -1.0)
    assert fed.aggregate(zero).flat().tobytes() == z.flat().tobytes()


def test_unit_step_uniform_weights_is_mean_update():
    z = _params(6)
    locals_ = [_params(s) for s in range(7, 11)]
    deltas = [fed.compute_delta(z, p) for p in locals_]
    out = fed.aggregate(fed.FederationRound(z, deltas, np.full(4, 0.25), 1.0))
    assert np.allclose(out.flat(), z.flat() + np.mean([d.flat() for d in deltas], axis=0), rtol=1e-15, atol=1e-15)


def test_negative_unit_step_is_weighted_average_of_locals():
    z = _params(11)
    locals_ = [_params(s) for s in (12, 13)]
    w = np.array([0.3, 0.7])
    out = fed.aggregate(fed.FederationRound(z, [fed.compute_delta(z, p) for p in locals_], w, -1.0))
    assert np.allclose(out.flat(), 0.3 * locals_[0].flat() + 0.7 * locals_[1].flat(), atol=1e-14)


@settings(max_examples=50)
@given(st.permutations(range(5)), st.integers(0, 1000))
def test_aggregation_permutation_invariant(perm, seed):
    rng = np.random.default_rng(seed)
    z = _params(seed)
    deltas = [PolicyParams.from_flat(LAYOUT, rng.normal(size=z.size)) for _ in range(5)]
    w = fed.follower_weights(rng.uniform(1, 10, 5), rng.uniform(1, 10, 5))
    a = fed.aggregate(fed.FederationRound(z, deltas, w, 1.0))
    b = fed.aggregate(fed.FederationRound(z, [deltas[i] for i in perm], w[list(perm)], 1.0))
    assert np.allclose(a.flat(), b.flat(), rtol=1e-13, atol=1e-13)


def test_round_validation():
    z = _params(14)
    with pytest.raises(ValueError):
        fed.FederationRound(z, [z, z], np.array([0.6, 0.6]), 1.0).validate()
    with pytest.raises(ValueError):
        fed.FederationRound(z, [z], np.array([0.5, 0.5]), 1.0).validate()


class _Holder:
    def __init__(self, actor):
        self.actor = actor


def test_issue_updates_followers_after_commit():
    z = _params(15)
    followers = {k: _Holder(_params(20 + k)) for k in range(3)}
    deltas = [fed.compute_delta(z, f.actor) for f in followers.values()]
    led = Ledger()
    new, tx = fed.aggregate_and_issue(fed.FederationRound(z, deltas, np.full(3, 1 / 3), -1.0), led, followers)
    assert tx.status is Status.COMMITTED and led.height == 1
    for f in followers.values():
        assert np.array_equal(f.actor.flat(), new.flat())
        assert f.actor is not new


def test_tampered_digest_blocks_issuing():
    z = _params(16)
    originals = {k: _params(30 + k) for k in range(2)}
    followers = {k: _Holder(p.copy()) for k, p in originals.items()}
    deltas = [fed.compute_delta(z, f.actor) for f in followers.values()]
    led = Ledger()
    rnd = fed.FederationRound(z, deltas, np.full(2, 0.5), -1.0)
    with pytest.raises(fed.IssuingRefused):
        fed.aggregate_and_issue(rnd, led, followers, tamper=lambda p: p[:-1] + bytes([p[-1] ^ 1]))
    assert led.height == 0 and led.closed
    for k, f in followers.items():
        assert np.array_equal(f.actor.flat(), originals[k].flat())


def test_federator_counts_refusals():
    from sgdtn.config import tiny_config
    cfg = tiny_config()
    z = _params(17)
    agents = {(0, 0): _Holder(_params(18)), (0, 1): _Holder(_params(19))}
    f = fed.Federator(cfg, z)
    bits = {(0, 0): 1.0, (0, 1): 3.0}
    dist = {(0, 0): 2.0, (0, 1): 2.0}
    assert f.run_round(agents, bits, dist)
    assert not f.run_round(agents, bits, dist, tamper=lambda p: b"x" + p)
    assert f.rounds == 2 and f.refused == 1 and f.ledger.height == 1
