"""Seeded runs, parameter sweeps and CSV export.

A run trains the chosen follower policy together with the pricing leader,
then evaluates it with exploration off on a fresh environment. Every random
stream is spawned from the run seed, so a run is a pure function of
(config, policy, seed) and its CSV output is byte-identical on repeat.
"""

from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agents import MADFRLPolicy, PricingLeader
from .baselines import BaselinePolicy
from .config import SimConfig, dump_config
from .env import SatelliteEnv, follower_spec, run_episode
from .federation import Federator
from .ledger import Ledger
from .maml import MetaState, apply_meta_init, meta_train
from .nn import save_params

POLICIES = ("madfrl", "marto", "magcs", "mamcc")

RECORD_COLUMNS = ("slot", "mbs", "follower", "queue", "throughput", "interference", "overhead",
                  "price", "leader_profit", "policy", "seed")
SUMMARY_COLUMNS = ("axis_value", "seed", "mean_throughput", "mean_queue", "mean_interference",
                   "mean_overhead", "mean_profit")
METRICS = SUMMARY_COLUMNS[2:]
TRANSITION_COLUMNS = ("episode", "slot", "mbs", "follower", "arrival", "leo_x", "leo_y", "price",
                      "queue", "cpu_freq", "channel", "offload", "block_size", "served", "overhead",
                      "reward")

# sweep axis name -> SimConfig field
AXES = {
    "V": "v_lyapunov",
    "bandwidth": "channel_bandwidth",
    "tx_power": "tx_power",
    "price_cap": "lambda_max",
    "delta": "model_tx_factor",
    "mbs_freq": "mbs_cpu_freq",
    "unit_cost": "unit_energy_cost",
    "n_followers": "followers_per_mbs",
}


def fmt(x) -> str:
    """Shortest round-trip text for a number."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


@dataclass
class RunResult:
    records: list
    summary: dict
    transitions: list = field(default_factory=list)
    ledger: Ledger | None = None
    actors: dict = field(default_factory=dict)
    eval_trace: list = field(default_factory=list)
    policy: object = None
    leader: object = None


def make_policy(name: str, cfg: SimConfig, seed_seq):
    if name == "madfrl":
        return MADFRLPolicy(cfg, seed_seq)
    if name in POLICIES:
        return BaselinePolicy(name, cfg, seed_seq)
    raise ValueError(f"unknown policy {name!r}; choose from {', '.join(POLICIES)}")


def _streams(seed: int):
    names = ("train_env", "eval_env", "policy", "leader", "maml", "episode")
    return dict(zip(names, np.random.SeedSequence(seed).spawn(len(names))))


def _episode_stats(metrics, slots):
    """Per-follower task bits and mean slant range over an episode (federation weights)."""
    bits = sum(s.arrivals for s in slots)
    dist = sum(np.hypot(s.x, s.y) for s in slots) / max(len(slots), 1)
    return bits, dist


def train(cfg: SimConfig, policy, leader, streams, episodes: int, federator=None,
          transition_log=None):
    """Train ``policy`` and ``leader`` for ``episodes`` episodes on fresh environments."""
    ep_seeds = streams["train_env"].spawn(max(episodes, 1))
    step_rng = np.random.default_rng(streams["episode"])
    for ep in range(episodes):
        progress = ep / max(episodes - 1, 1)
        for p in (policy, leader):
            if hasattr(p, "set_schedule"):
                p.set_schedule(progress)
        env = SatelliteEnv(cfg, np.random.default_rng(ep_seeds[ep]))
        seen = []
        transitions, metrics = run_episode(env, policy, leader, cfg, rng=step_rng, learn=True,
                                           explore=True, on_slot=lambda slot, out, acts: seen.append(slot))
        if transition_log is not None:
            transition_log.extend(_transition_rows(ep, transitions))
        if federator is not None and (ep + 1) % cfg.fed_every == 0:
            bits, dist = _episode_stats(metrics, seen)
            keys = policy.keys
            federator.run_round(policy.agents, {k: bits[k] for k in keys}, {k: dist[k] for k in keys})


def evaluate(cfg: SimConfig, policy, leader, streams, policy_name: str, seed: int, episodes: int = 1):
    """Greedy evaluation; returns (records, eval trace of (slot, f, ch, off, blk))."""
    records, trace = [], []
    ev_seeds = streams["eval_env"].spawn(max(episodes, 1))
    rng = np.random.default_rng(streams["eval_env"].spawn(1)[0])
    offset = 0
    for ep in range(episodes):
        env = SatelliteEnv(cfg, np.random.default_rng(ev_seeds[ep]))
        trace_ep = []

        def keep(slot, out, acts, trace_ep=trace_ep):
            trace_ep.append((slot, out.freqs.copy(), out.channel.copy(), np.asarray(acts_offload(acts)),
                             out.block.copy()))

        _, metrics = run_episode(env, policy, leader, cfg, rng=rng, learn=False, explore=False,
                                 on_slot=keep)
        trace.extend(trace_ep)
        for met in metrics:
            for i in range(cfg.n_mbs):
                for j in range(cfg.followers_per_mbs):
                    records.append((offset + met.slot, i, j, float(met.queue[i, j]),
                                    float(met.throughput[i, j]), float(met.interference[i, j]),
                                    float(met.overhead[i, j]), float(met.price[i, j]),
                                    float(met.leader_profit), policy_name, seed))
        offset += len(metrics)
    return records, trace


def acts_offload(actions):
    return [[a.offload for a in row] for row in actions]


def summarize(records, axis_value=None, seed=None) -> dict:
    """Means over (slot, follower) records; profit is averaged per slot."""
    arr = np.array([r[3:8] for r in records], float)
    profits = {}
    for r in records:
        profits.setdefault(r[0], r[8])
    return {
        "axis_value": axis_value,
        "seed": seed if seed is not None else (records[0][10] if records else None),
        "mean_queue": float(arr[:, 0].mean()),
        "mean_throughput": float(arr[:, 1].mean()),
        "mean_interference": float(arr[:, 2].mean()),
        "mean_overhead": float(arr[:, 3].mean()),
        "mean_profit": float(np.mean(list(profits.values()))),
    }


def run(cfg: SimConfig, policy_name: str = "madfrl", seed: int = 0, train_episodes: int | None = None,
        eval_episodes: int = 1, keep_transitions: bool = False, learn_leader: bool = True) -> RunResult:
    """Full training plus evaluation for one (config, policy, seed)."""
    streams = _streams(seed)
    episodes = cfg.train_episodes if train_episodes is None else train_episodes
    policy = make_policy(policy_name, cfg, streams["policy"])
    leader = PricingLeader(cfg, streams["leader"])
    federator = None
    if policy_name == "madfrl":
        if cfg.maml_inner_steps > 0 and cfg.maml_iterations > 0:
            meta = MetaState.from_config(cfg, streams["maml"])
            meta = meta_train(cfg, meta, np.random.default_rng(streams["maml"].spawn(1)[0]))
            apply_meta_init(policy, meta)
        first = policy.agents[policy.keys[0]].actor
        federator = Federator(cfg, first)
    if not learn_leader:
        leader.learn = lambda rng: None
    log = [] if keep_transitions else None
    train(cfg, policy, leader, streams, episodes, federator, log)
    records, trace = evaluate(cfg, policy, leader, streams, policy_name, seed, eval_episodes)
    actors = policy.actor_params() if hasattr(policy, "actor_params") else {}
    return RunResult(records, summarize(records, seed=seed), log or [],
                     federator.ledger if federator else Ledger(), actors, trace, policy, leader)


def _transition_rows(ep, transitions):
    rows = []
    for (i, j), log in sorted(transitions.items()):
        for t, tr in enumerate(log):
            s, a = tr.state, tr.action
            rows.append((ep, t, i, j, s.arrival, s.leo_x, s.leo_y, s.price, s.queue, a.cpu_freq,
                         a.channel, a.offload, a.block_size, tr.served, tr.overhead, tr.reward))
    return rows


def replay_reward(row: dict, cfg: SimConfig) -> float:
    """Recompute a logged transition's reward from its primitives."""
    q, d = float(row["queue"]), float(row["served"])
    return q * d + cfg.v_lyapunov * (d - float(row["overhead"]) - float(row["price"]) * float(row["cpu_freq"]))


# --- CSV output -----------------------------------------------------------------

def records_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_COLUMNS)
    for r in records:
        w.writerow([fmt(v) if not isinstance(v, str) else v for v in r])
    return buf.getvalue()


def _write(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _rows_csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([v if isinstance(v, str) else ("" if v is None else fmt(v)) for v in r])
    return buf.getvalue()


def write_run(result: RunResult, cfg: SimConfig, out_dir) -> Path:
    """Write records, summary, transitions, ledger, resolved config and actor checkpoints."""
    out = Path(out_dir)
    _write(out / "records.csv", records_csv(result.records))
    s = result.summary
    _write(out / "summary.csv", _rows_csv(SUMMARY_COLUMNS, [[s[c] for c in SUMMARY_COLUMNS]]))
    _write(out / "transitions.csv", _rows_csv(TRANSITION_COLUMNS, result.transitions))
    _write(out / "config.resolved.cfg", dump_config(cfg))
    ledger_path = out / "ledger.jsonl"
    try:
        (result.ledger or Ledger()).export(ledger_path)
    except OSError as exc:
        raise OSError(f"cannot write {ledger_path}: {exc.strerror or exc}") from exc
    if result.actors:
        ck = out / "checkpoints"
        ck.mkdir(parents=True, exist_ok=True)
        for (i, j), params in sorted(result.actors.items()):
            save_params(ck / f"actor_{i}_{j}.bin", params)
    return out


# --- sweeps -----------------------------------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: tuple
    repeats: int = 1

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"unknown axis {self.axis!r}; choose from {', '.join(AXES)}")
        if not self.values:
            raise ValueError("values must be non-empty")
        v = np.asarray(self.values, float)
        d = np.diff(v)
        if len(v) > 1 and not (np.all(d > 0) or np.all(d < 0)):
            raise ValueError("values must be strictly monotone")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")

    def config_for(self, cfg: SimConfig, value) -> SimConfig:
        key = AXES[self.axis]
        if key == "followers_per_mbs":
            value = int(value)
        return cfg.replace(**{key: value})


def _sweep_point(args):
    cfg, policy, seed, value, out_dir, train_episodes = args
    result = run(cfg, policy, seed, train_episodes=train_episodes)
    if out_dir is not None:
        write_run(result, cfg, out_dir)
    s = summarize(result.records, axis_value=value, seed=seed)
    return s


def run_sweep(spec: SweepSpec, cfg: SimConfig, policy: str = "madfrl", seed: int = 0, out_dir=None,
              workers: int = 1, train_episodes: int | None = None) -> list:
    """Run every (value, repeat) point; writes per-point outputs and summary files.

    Repeat ``r`` uses seed ``seed + r``. Results are ordered by value, then
    seed, independent of ``workers``.
    """
    jobs = []
    for value in spec.values:
        pcfg = spec.config_for(cfg, value)
        for r in range(spec.repeats):
            sub = None if out_dir is None else Path(out_dir) / f"{spec.axis}={fmt(value)}" / f"seed={seed + r}"
            jobs.append((pcfg, policy, seed + r, value, sub, train_episodes))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_point, jobs))
    else:
        rows = []
        for job in jobs:
            rows.append(_sweep_point(job))
            if out_dir is not None:
                write_summary(rows, Path(out_dir))
    if out_dir is not None:
        write_summary(rows, Path(out_dir))
    return rows


def summary_stats(rows) -> list:
    """Per axis value: mean and sample std of every metric over seeds."""
    out = []
    for value in dict.fromkeys(r["axis_value"] for r in rows):
        group = [r for r in rows if r["axis_value"] == value]
        row = [value, len(group)]
        for m in METRICS:
            v = np.array([g[m] for g in group], float)
            row += [float(v.mean()), float(v.std(ddof=1)) if len(v) > 1 else 0.0]
        out.append(row)
    return out


def write_summary(rows, out_dir: Path) -> None:
    _write(out_dir / "summary.csv", _rows_csv(SUMMARY_COLUMNS, [[r[c] for c in SUMMARY_COLUMNS] for r in rows]))
    cols = ["axis_value", "n"] + [f"{m}_{k}" for m in METRICS for k in ("mean", "std")]
    _write(out_dir / "summary_stats.csv", _rows_csv(cols, summary_stats(rows)))


def read_csv(path) -> list:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def default_workers() -> int:
    return max(1, min(4, os.cpu_count() or 1))

