import numpy as np
import pytest

from gradcheck import numeric_grad, rel_error
from sgdtn import policy as pl
from sgdtn.config import tiny_config
from sgdtn.env import ActionBounds, FollowerState, check_action, cont_scale, follower_spec, to_action
from sgdtn.nn import Adam, PolicyParams, backward, dumps_params, forward, loads_params, load_params, save_params

SPEC = pl.HeadSpec(n_cont=2, n_binary=1, categorical=(3,))


def _nets(seed, state_dim=4):
    rng = np.random.default_rng(seed)
    actor = PolicyParams.init((state_dim, 6, 5, SPEC.n_logits), rng, out_scale=1.0)
    critic = PolicyParams.init((state_dim + SPEC.n_features, 6, 5, 1), rng, out_scale=1.0)
    return actor, critic, rng


def test_zero_params_output_zero():
    p = PolicyParams.zeros((3, 4, 1))
    assert np.all(forward(p, np.ones((5, 3)))[0] == 0)


def test_critic_is_pure():
    _, critic, rng = _nets(0)
    s, a = rng.normal(size=(1, 4)), rng.normal(size=(1, SPEC.n_features))
    twice = pl.critic_value(critic, np.vstack([s, s]), np.vstack([a, a]))
    assert twice[0] == twice[1]
    assert pl.critic_value(critic, s, a)[0] == pl.critic_value(critic, s.copy(), a.copy())[0]


def test_gamma_zero_targets_are_rewards():
    _, critic, rng = _nets(1)
    r = rng.normal(size=6)
    assert np.array_equal(pl.td_targets(critic, r, rng.normal(size=(6, 4)), rng.normal(size=(6, 7)), 0.0), r)


def _batch(rng, n=8):
    binary = rng.integers(0, 2, size=(n, 1))
    cats = rng.integers(0, 3, size=(n, 1))
    scale = np.column_stack([rng.uniform(0.2, 1, n), np.ones(n)])
    s = rng.normal(size=(n, 4))
    a = pl.encode(SPEC, rng.uniform(size=(n, 2)), binary, cats)
    return {"s": s, "a": a, "r": rng.normal(size=n), "s2": rng.normal(size=(n, 4)),
            "scale": scale, "binary": binary, "cats": cats}


def test_zero_learning_rate_leaves_params():
    actor, critic, rng = _nets(2)
    b = _batch(rng)
    new_c, _ = pl.critic_update(b, critic, lambda s2: b["a"], 0.5, 0.0)
    assert np.array_equal(new_c.flat(), critic.flat())
    assert np.array_equal(pl.actor_update(SPEC, b, actor, critic, 0.0).flat(), actor.flat())
    same = Adam(0.0).step(actor, actor)
    assert np.array_equal(same.flat(), actor.flat())


def test_network_backward_matches_finite_differences():
    rng = np.random.default_rng(3)
    for _ in range(5):
        p = PolicyParams.init((3, 5, 4, 2), rng, out_scale=1.0)
        x, w = rng.normal(size=(6, 3)), rng.normal(size=(6, 2))
        out, acts = forward(p, x)
        g, dx = backward(p, acts, w)
        assert rel_error(g.flat(), numeric_grad(lambda q: float(np.sum(forward(q, x)[0] * w)), p)) <= 1e-4
        h = 1e-6
        num_dx = np.zeros_like(x)
        for i in np.ndindex(x.shape):
            up, dn = x.copy(), x.copy()
            up[i] += h
            dn[i] -= h
            num_dx[i] = (np.sum(forward(p, up)[0] * w) - np.sum(forward(p, dn)[0] * w)) / (2 * h)
        assert rel_error(dx, num_dx) <= 1e-4


def test_critic_gradient_matches_finite_differences():
    for seed in range(5):
        _, critic, rng = _nets(10 + seed)
        b = _batch(rng)
        y = rng.normal(size=len(b["s"]))
        _, g = pl.critic_loss_grad(critic, b["s"], b["a"], y)
        num = numeric_grad(lambda c: pl.critic_loss_grad(c, b["s"], b["a"], y)[0], critic)
        assert rel_error(g.flat(), num) <= 1e-4


def test_actor_gradient_matches_finite_differences():
    for seed in range(5):
        actor, critic, rng = _nets(20 + seed)
        b = _batch(rng)
        g, _ = pl.actor_gradient(SPEC, actor, critic, b["s"], b["scale"], b["binary"], b["cats"])
        logits, _ = forward(actor, b["s"])
        frozen = pl.sigmoid(logits[:, :2]) * b["scale"]
        num = numeric_grad(lambda a: -pl.actor_surrogate(SPEC, a, critic, b["s"], b["scale"], b["binary"],
                                                         b["cats"], frozen_cont=frozen), actor)
        assert rel_error(g.flat(), num) <= 1e-4


def test_leader_gradient_matches_finite_differences():
    spec = pl.HeadSpec(n_cont=3)
    rng = np.random.default_rng(30)
    actor = PolicyParams.init((4, 6, 3), rng, out_scale=1.0)
    critic = PolicyParams.init((7, 6, 1), rng, out_scale=1.0)
    s = rng.normal(size=(5, 4))
    empty_b, empty_c = np.zeros((5, 0), int), np.zeros((5, 0), int)
    g, _ = pl.actor_gradient(spec, actor, critic, s, 1.0, empty_b, empty_c)
    num = numeric_grad(lambda a: -pl.actor_surrogate(spec, a, critic, s, 1.0, empty_b, empty_c), actor)
    assert rel_error(g.flat(), num) <= 1e-4


def test_adam_decreases_quadratic():
    p = PolicyParams.from_flat((2, 1), np.array([3.0, -2.0, 1.0]))
    opt = Adam(0.1)
    for _ in range(300):
        p = opt.step(p, PolicyParams.from_flat((2, 1), 2 * p.flat()))
    assert np.max(np.abs(p.flat())) < 0.05


def test_checkpoint_round_trip(tmp_path):
    p = PolicyParams.init((5, 7, 3), np.random.default_rng(4))
    q = loads_params(dumps_params(p))
    assert q.layout == p.layout and np.array_equal(q.flat(), p.flat())
    save_params(tmp_path / "a.bin", p)
    assert np.array_equal(load_params(tmp_path / "a.bin").flat(), p.flat())
    with pytest.raises(ValueError):
        loads_params(b"garbage" + dumps_params(p))


def test_replay_buffer_fifo():
    buf = pl.ReplayBuffer(3)
    for i in range(5):
        buf.add(x=i)
    assert len(buf) == 3
    assert set(buf.sample(np.random.default_rng(0), 50)["x"]) <= {2, 3, 4}


def test_selection_deterministic_and_projected():
    cfg = tiny_config()
    spec = follower_spec(cfg)
    actor = PolicyParams.init((5, 8, spec.n_logits), np.random.default_rng(5), out_scale=3.0)
    state = FollowerState(2e7, 1.5e6, 1e6, 3.0, 5e7).features(cfg)[None, :]
    a = pl.select(spec, actor, state)
    b = pl.select(spec, actor, state)
    assert np.array_equal(a.cont, b.cont) and np.array_equal(a.cats, b.cats)
    rng = np.random.default_rng(6)
    bounds = ActionBounds.for_follower(cfg, 5e7, 3000.0)
    empty = ActionBounds.for_follower(cfg, 0.0, 3000.0)
    for _ in range(300):
        ch = pl.select(spec, actor, state, rng, True, eps=0.5, noise=1.0)
        check_action(to_action(ch.cont[0], ch.binary[0], ch.cats[0], bounds), bounds)
        act = to_action(ch.cont[0], ch.binary[0], ch.cats[0], empty)
        assert act.cpu_freq == 0.0
        check_action(act, empty)
    assert cont_scale(empty, cfg)[0] == 0.0


def test_feasible_box_caps_local_service_at_queue():
    cfg = tiny_config()
    b = ActionBounds.for_follower(cfg, 1e6, 3000.0)
    assert b.f_cap == pytest.approx(3000.0 * 1e6 / cfg.slot_duration)
    assert ActionBounds.for_follower(cfg, 1e12, 3000.0).f_cap == cfg.follower_cpu_max
