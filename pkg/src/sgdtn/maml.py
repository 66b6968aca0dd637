"""First-order meta-learning of a shared follower initialization.

The meta parameters are one (actor, critic) pair that every follower starts
from. For each sampled task context the followers adapt with plain gradient
steps on trajectories from the task's training seed; the outer step then
averages the gradients evaluated at the adapted parameters on trajectories
from the task's separate test seed.

The RL task loss is the negative mean episode return. Its actor gradient is
a likelihood-ratio estimate over K trajectories that share the environment's
random numbers, with a leave-one-out baseline. Reward-to-go is divided by
the trajectory length to keep step sizes comparable across horizons. The
critic is regressed on the discounted return with the agents' own gamma, so
the meta critic estimates the same quantity the actor-critic update trains
it toward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .agents import FixedPriceLeader, MADFRLPolicy
from .config import SimConfig
from .env import SatelliteEnv, cont_scale, follower_spec, reward_scale, run_episode, to_action
from .nn import PolicyParams, backward, forward
from .policy import critic_loss_grad, encode, sigmoid, softmax


@dataclass(frozen=True)
class TaskContext:
    """One draw from the task distribution; seeds for the train and test splits differ."""

    arrival_lo: float
    arrival_hi: float
    x_lo: float
    x_hi: float
    y_lo: float
    y_hi: float
    price: float
    train_seed: int
    test_seed: int

    def apply(self, cfg: SimConfig) -> SimConfig:
        return cfg.replace(arrival_lo=self.arrival_lo, arrival_hi=self.arrival_hi,
                           x_lo=self.x_lo, x_hi=self.x_hi, y_lo=self.y_lo, y_hi=self.y_hi)


def _narrow(rng, lo, hi, spread):
    """Sub-interval of [lo, hi]; spread 0 returns [lo, hi] itself."""
    half = 0.5 * (hi - lo) * spread
    return lo + rng.uniform() * half, hi - rng.uniform() * half


def sample_tasks(rng: np.random.Generator, cfg: SimConfig, batch: int, spread: float = 1.0) -> list:
    """``batch`` i.i.d. contexts inside the configured ranges.

    ``spread`` in [0, 1] scales how far contexts move from the configured
    ranges; 0 gives a degenerate distribution with one fixed context (seeds
    aside). Train and test seeds are all distinct within a batch.
    """
    if batch < 1:
        raise ValueError("batch must be >= 1")
    seeds = rng.choice(2 ** 31 - 1, size=2 * batch, replace=False)
    out = []
    for k in range(batch):
        a_lo, a_hi = _narrow(rng, cfg.arrival_lo, cfg.arrival_hi, spread)
        x_lo, x_hi = _narrow(rng, cfg.x_lo, cfg.x_hi, spread)
        y_lo, y_hi = _narrow(rng, cfg.y_lo, cfg.y_hi, spread)
        price = cfg.lambda_max * (0.5 + spread * (rng.uniform() - 0.5))
        out.append(TaskContext(a_lo, a_hi, x_lo, x_hi, y_lo, y_hi, price,
                               int(seeds[2 * k]), int(seeds[2 * k + 1])))
    return out


def inner_adapt(w, loss_grad, alpha: float, steps: int = 1):
    """w' = w - alpha * grad L(w), repeated ``steps`` times.

    ``w`` is a float array or PolicyParams; ``loss_grad(w)`` returns the
    gradient with the same structure.
    """
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    for _ in range(steps):
        w = _sub(w, alpha, loss_grad(w))
    return w


def _sub(w, scale, g):
    if isinstance(w, PolicyParams):
        return w.axpy(-scale, g)
    return np.asarray(w, float) - scale * np.asarray(g, float)


def outer_update(w, adapted_grads, beta: float):
    """First-order meta step: w - beta * sum of gradients taken at the adapted parameters."""
    if not adapted_grads:
        raise ValueError("need at least one adapted task")
    total = adapted_grads[0]
    for g in adapted_grads[1:]:
        total = total.axpy(1.0, g) if isinstance(total, PolicyParams) else total + g
    return _sub(w, beta, total)


def maml_step(w, task_grads, alpha: float, beta: float, steps: int = 1):
    """Adapt to each task (list of gradient functions) then take one outer step."""
    grads = []
    for grad_fn in task_grads:
        w_task = inner_adapt(w, grad_fn, alpha, steps)
        grads.append(grad_fn(w_task))
    return outer_update(w, grads, beta)


# --- RL task loss -------------------------------------------------------------

@dataclass
class MetaState:
    actor: PolicyParams
    critic: PolicyParams
    inner_lr: float
    outer_lr: float
    inner_steps: int
    trajectories_per_task: int
    wrap: str = "both"
    noise: float = 0.1
    iteration: int = 0

    def __post_init__(self):
        if self.inner_lr <= 0 or self.outer_lr <= 0:
            raise ValueError("learning rates must be > 0")
        if self.inner_steps < 0 or self.trajectories_per_task < 1:
            raise ValueError("inner_steps must be >= 0 and trajectories_per_task >= 1")
        if self.wrap not in ("actor", "critic", "both"):
            raise ValueError(f"wrap must be actor, critic or both, not {self.wrap!r}")

    @classmethod
    def from_config(cls, cfg: SimConfig, seed_seq: np.random.SeedSequence) -> "MetaState":
        agent = MADFRLPolicy(cfg, seed_seq).agents[(0, 0)]
        return cls(agent.actor.copy(), agent.critic.copy(), cfg.maml_inner_lr, cfg.maml_outer_lr,
                   cfg.maml_inner_steps, cfg.maml_trajectories, cfg.maml_wrap, cfg.maml_noise)


class _Collector:
    """Stochastic followers that log what the task-loss gradient needs.

    Continuous heads add Gaussian noise of std ``noise`` to the sigmoid mean,
    binary heads are Bernoulli and categorical heads are softmax draws. For
    every decision the gradient of log pi with respect to the logits is kept,
    so no follower ever needs another follower's data.
    """

    def __init__(self, cfg, actors, critics, seed: int, noise: float, explore: bool):
        self.cfg = cfg
        self.spec = follower_spec(cfg)
        self.keys = [(i, j) for i in range(cfg.n_mbs) for j in range(cfg.followers_per_mbs)]
        self.actors, self.critics = actors, critics
        self.rng = np.random.default_rng(seed)
        self.noise, self.explore = noise, explore
        self.r_scale = reward_scale(cfg)
        self.log = {k: {"s": [], "a": [], "score": [], "r": []} for k in self.keys}

    def decide(self, slot, states, bounds, rng, explore):
        spec, out = self.spec, [[None] * self.cfg.followers_per_mbs for _ in range(self.cfg.n_mbs)]
        for (i, j) in self.keys:
            s = states[i][j].features(self.cfg)
            logits, _ = forward(self.actors[(i, j)], s[None, :])
            zc, zb, zcats = spec.split(logits)
            mu, pb = sigmoid(zc[0]), sigmoid(zb[0])
            score = np.zeros(spec.n_logits)
            if self.explore:
                raw = mu + self.rng.normal(0.0, self.noise, size=mu.shape)
                binary = (self.rng.random(pb.shape) < pb).astype(int)
                cats = [int(min((self.rng.random() > np.cumsum(softmax(z[0]))).sum(), k - 1))
                        for z, k in zip(zcats, spec.categorical)]
                score[:spec.n_cont] = (raw - mu) / self.noise ** 2 * mu * (1 - mu)
                score[spec.n_cont:spec.n_cont + spec.n_binary] = binary - pb
                pos = spec.n_cont + spec.n_binary
                for z, k, c in zip(zcats, spec.categorical, cats):
                    score[pos:pos + k] = np.eye(k)[c] - softmax(z[0])
                    pos += k
            else:
                raw = mu
                binary = (pb > 0.5).astype(int)
                cats = [int(np.argmax(z[0])) for z in zcats]
            cont = np.clip(raw, 0.0, 1.0)
            scale = cont_scale(bounds[i][j], self.cfg)
            log = self.log[(i, j)]
            log["s"].append(s)
            log["a"].append(encode(spec, cont * scale, binary, cats)[0])
            log["score"].append(score)
            out[i][j] = to_action(cont, binary, cats, bounds[i][j])
        return out

    def record(self, states, actions, out, next_states, next_bounds):
        for (i, j) in self.keys:
            self.log[(i, j)]["r"].append(out.reward[i, j] / self.r_scale)


def rollout(cfg: SimConfig, task: TaskContext, actor, critic, seed: int, k: int, length: int,
            explore: bool, noise: float = 0.1):
    """Run ``k`` trajectories of one task; returns (batches per follower, mean episode return).

    All ``k`` trajectories share the environment's random numbers so they
    differ only through the policy's own sampling. ``actor``/``critic`` are
    shared PolicyParams or dicts keyed by follower. The return is the mean
    over followers and trajectories of the summed normalized reward.
    """
    tcfg = task.apply(cfg)
    keys = [(i, j) for i in range(tcfg.n_mbs) for j in range(tcfg.followers_per_mbs)]
    actors = actor if isinstance(actor, dict) else {key: actor for key in keys}
    critics = critic if isinstance(critic, dict) else {key: critic for key in keys}
    logs = []
    for j in range(k):
        pol = _Collector(tcfg, actors, critics, seed=[seed, j, 2], noise=noise, explore=explore)
        env = SatelliteEnv(tcfg, np.random.default_rng([seed, 0]))
        leader = FixedPriceLeader(tcfg, task.price)
        run_episode(env, pol, leader, tcfg, slots=length, rng=np.random.default_rng([seed, 1]),
                    learn=True, explore=explore)
        logs.append(pol.log)
    batches, returns = {}, []
    for key in keys:
        r = np.array([lg[key]["r"] for lg in logs])                  # (k, length)
        togo = np.cumsum(r[:, ::-1], axis=1)[:, ::-1] / length
        ret = r.copy()
        for t in range(length - 2, -1, -1):
            ret[:, t] += tcfg.gamma * ret[:, t + 1]
        if k > 1:
            baseline = (togo.sum(axis=0, keepdims=True) - togo) / (k - 1)
        else:
            baseline = np.zeros_like(togo)
        batches[key] = {
            "s": np.concatenate([np.array(lg[key]["s"]) for lg in logs]),
            "a": np.concatenate([np.array(lg[key]["a"]) for lg in logs]),
            "score": np.concatenate([np.array(lg[key]["score"]) for lg in logs]),
            "y": ret.ravel(),
            "adv": (togo - baseline).ravel(),
        }
        returns.append(r.sum(axis=1))
    return batches, float(np.mean(returns))


def task_gradient(actor, critic, batch, wrap: str):
    """Gradients of the task loss for one follower: (actor grad, critic grad).

    The actor part is the likelihood-ratio estimate of the gradient of the
    negative scaled episode return; the critic part is the gradient of its
    squared error to the discounted return.
    """
    n = len(batch["s"])
    _, acts = forward(actor, batch["s"])
    ga, _ = backward(actor, acts, -(batch["adv"][:, None] * batch["score"]) / n)
    _, gc = critic_loss_grad(critic, batch["s"], batch["a"], batch["y"])
    if wrap == "actor":
        gc = PolicyParams.zeros(critic.layout)
    elif wrap == "critic":
        ga = PolicyParams.zeros(actor.layout)
    return ga, gc


def _keys(cfg):
    return [(i, j) for i in range(cfg.n_mbs) for j in range(cfg.followers_per_mbs)]


def adapt_to_task(cfg: SimConfig, meta: MetaState, task: TaskContext, length: int | None = None):
    """Inner loop: each follower takes ``inner_steps`` gradient steps on its own data.

    Only the task's training seed is used here. Returns per-follower adapted
    (actors, critics) dicts.
    """
    length = cfg.maml_traj_len if length is None else length
    actors = {k: meta.actor.copy() for k in _keys(cfg)}
    critics = {k: meta.critic.copy() for k in _keys(cfg)}
    for step in range(meta.inner_steps):
        batches, _ = rollout(cfg, task, actors, critics, task.train_seed + step,
                             meta.trajectories_per_task, length, explore=True, noise=meta.noise)
        for k in actors:
            ga, gc = task_gradient(actors[k], critics[k], batches[k], meta.wrap)
            actors[k] = actors[k].axpy(-meta.inner_lr, ga)
            critics[k] = critics[k].axpy(-meta.inner_lr, gc)
    return actors, critics


def meta_train(cfg: SimConfig, meta: MetaState, rng: np.random.Generator,
               iterations: int | None = None, spread: float = 1.0) -> MetaState:
    """Outer loop over task batches. With ``inner_steps == 0`` nothing changes."""
    if meta.inner_steps == 0:
        return meta
    iterations = cfg.maml_iterations if iterations is None else iterations
    length = cfg.maml_traj_len
    for _ in range(iterations):
        tasks = sample_tasks(rng, cfg, cfg.maml_tasks, spread)
        ga_sum = PolicyParams.zeros(meta.actor.layout)
        gc_sum = PolicyParams.zeros(meta.critic.layout)
        for task in tasks:
            actors, critics = adapt_to_task(cfg, meta, task, length)
            batches, _ = rollout(cfg, task, actors, critics, task.test_seed,
                                 meta.trajectories_per_task, length, explore=True, noise=meta.noise)
            share = 1.0 / len(actors)
            for k in actors:
                ga, gc = task_gradient(actors[k], critics[k], batches[k], meta.wrap)
                ga_sum = ga_sum.axpy(share, ga)
                gc_sum = gc_sum.axpy(share, gc)
        meta.actor = outer_update(meta.actor, [ga_sum], meta.outer_lr)
        meta.critic = outer_update(meta.critic, [gc_sum], meta.outer_lr)
        meta.iteration += 1
    return meta


def apply_meta_init(policy, meta: MetaState | None) -> None:
    """Start every follower from the meta parameters (no-op for ``None`` or zero inner steps)."""
    if meta is None or meta.inner_steps == 0:
        return
    for agent in policy.agents.values():
        if meta.wrap in ("actor", "both"):
            agent.actor = meta.actor.copy()
        if meta.wrap in ("critic", "both"):
            agent.critic = meta.critic.copy()


def paired_trial(cfg: SimConfig, meta: MetaState, task: TaskContext, eval_seed: int,
                 length: int | None = None):
    """(pre, post) adaptation returns on one held-out task.

    Both evaluations run the deterministic policy on the same environment
    random numbers (``eval_seed``), which never feed the adaptation.
    """
    length = cfg.maml_traj_len if length is None else length
    _, pre = rollout(cfg, task, meta.actor, meta.critic, eval_seed, 1, length, explore=False)
    actors, critics = adapt_to_task(cfg, meta, task, length)
    _, post = rollout(cfg, task, actors, critics, eval_seed, 1, length, explore=False)
    return pre, post
