"""Simulation configuration: defaults, validation and the ``key = value`` file format.

Units are SI throughout: bits, seconds, Hz, W, meters. Task arrivals quoted in
MB are stored as bits (1 MB = 8e6 bits).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

MB = 8e6


class ConfigError(ValueError):
    """Raised when a configuration violates an invariant.

    ``problems`` holds one ``(line, key, message)`` tuple per offending key;
    ``line`` is ``None`` for problems not tied to a file line.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        msg = "; ".join(
            (f"line {ln}: " if ln is not None else "") + f"{key}: {text}"
            for ln, key, text in self.problems
        )
        super().__init__(msg)


@dataclass(frozen=True)
class SimConfig:
    # topology
    n_mbs: int = 4
    followers_per_mbs: int = 12
    n_leo: int = 4
    n_channels: int = 12
    slot_duration: float = 300.0
    # tasks
    arrival_lo: float = 10 * MB
    arrival_hi: float = 30 * MB
    cycles_per_bit_lo: float = 2000.0
    cycles_per_bit_hi: float = 4000.0
    # LEO geometry
    x_lo: float = 1.0e6
    x_hi: float = 2.0e6
    y_lo: float = 5.0e5
    y_hi: float = 2.0e6
    # channel
    carrier_freq: float = 1.0e8
    light_speed: float = 3.0e8
    eps_los_lo: float = 0.0
    eps_los_hi: float = 1.0
    eps_nlos_lo: float = 10.0
    eps_nlos_hi: float = 30.0
    b1: float = 9.61
    b2: float = 0.16
    noise_power: float = 1e-13
    tx_power: float = 1.0
    channel_bandwidth: float = 1.0e7
    i_max: float = 1e-13
    # drift-plus-penalty and game
    v_lyapunov: float = 10.0
    unit_energy_cost: float = 1.0
    lambda_max: float = 10.0
    price_sign: str = "literal"
    throughput_ewma: float = 0.05
    follower_cpu_max: float = 2.0e9
    mamcc_pool: float = 24.0e9
    # blockchain overhead
    mbs_cpu_freq: float = 6.0e9
    uplink_rate: float = 0.5e10
    downlink_rate: float = 1.0e10
    model_tx_factor: float = 0.5
    model_size: float = 1.2e6
    workload_factor: float = 1.0
    block_min: float = 1.0e5
    block_max: float = 1.0e6
    n_delegates: int = 7
    # learning
    hidden: tuple = (64, 64)
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    leader_lr: float = 1e-3
    gamma: float = 0.0
    batch_size: int = 32
    buffer_size: int = 2000
    update_every: int = 1
    explore_eps_start: float = 0.2
    explore_eps_end: float = 0.01
    noise_start: float = 0.2
    noise_end: float = 0.02
    episode_len: int = 200
    train_episodes: int = 500
    fed_every: int = 10
    agg_lr: float = -1.0
    # meta-learning
    maml_inner_steps: int = 1
    maml_inner_lr: float = 0.05
    maml_outer_lr: float = 0.01
    maml_tasks: int = 4
    maml_trajectories: int = 4
    maml_iterations: int = 20
    maml_traj_len: int = 20
    maml_wrap: str = "actor"
    maml_noise: float = 0.1
    # oracle discretization
    oracle_f_levels: int = 8
    oracle_block_levels: int = 4
    seed: int = 0

    @property
    def n_followers(self) -> int:
        return self.n_mbs * self.followers_per_mbs

    def replace(self, **changes) -> "SimConfig":
        cfg = dataclasses.replace(self, **changes)
        cfg.validate()
        return cfg

    def validate(self, lines=None) -> None:
        """Check every invariant; raise ConfigError listing all violations."""
        lines = lines or {}
        problems = []

        def bad(key, text, also=()):
            problems.append((lines.get(key), key, text))
            for other in also:
                problems.append((lines.get(other), other, text))

        for key in ("n_mbs", "followers_per_mbs", "n_leo", "n_channels", "n_delegates",
                    "episode_len", "batch_size", "buffer_size", "update_every", "fed_every",
                    "maml_tasks", "maml_trajectories", "maml_traj_len",
                    "oracle_f_levels", "oracle_block_levels"):
            if getattr(self, key) < 1:
                bad(key, "must be >= 1")
        for key in ("train_episodes", "maml_inner_steps", "maml_iterations"):
            if getattr(self, key) < 0:
                bad(key, "must be >= 0")
        for lo, hi in (("arrival_lo", "arrival_hi"), ("cycles_per_bit_lo", "cycles_per_bit_hi"),
                       ("x_lo", "x_hi"), ("y_lo", "y_hi"), ("eps_los_lo", "eps_los_hi"),
                       ("eps_nlos_lo", "eps_nlos_hi"), ("block_min", "block_max")):
            if getattr(self, lo) > getattr(self, hi):
                bad(lo, f"{lo} > {hi}", also=(hi,))
        for key in ("slot_duration", "noise_power", "carrier_freq", "light_speed",
                    "channel_bandwidth", "mbs_cpu_freq", "uplink_rate", "downlink_rate",
                    "cycles_per_bit_lo", "x_lo", "y_lo", "workload_factor"):
            if not getattr(self, key) > 0:
                bad(key, "must be > 0")
        for key in ("arrival_lo", "tx_power", "i_max", "v_lyapunov", "unit_energy_cost",
                    "lambda_max", "follower_cpu_max", "mamcc_pool", "model_tx_factor",
                    "model_size", "block_min", "actor_lr", "critic_lr", "leader_lr",
                    "maml_inner_lr", "maml_outer_lr", "explore_eps_end", "noise_end"):
            if getattr(self, key) < 0:
                bad(key, "must be >= 0")
        if not 0 <= self.gamma < 1:
            bad("gamma", "must satisfy 0 <= gamma < 1")
        if not 0 < self.throughput_ewma <= 1:
            bad("throughput_ewma", "must be in (0, 1]")
        if self.price_sign not in ("literal", "cost"):
            bad("price_sign", "must be 'literal' or 'cost'")
        if self.maml_noise <= 0:
            bad("maml_noise", "must be > 0")
        if self.maml_wrap not in ("both", "actor", "critic"):
            bad("maml_wrap", "must be 'both', 'actor' or 'critic'")
        if not self.hidden or any(int(h) < 1 for h in self.hidden):
            bad("hidden", "layer widths must be >= 1")
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, float) and not math.isfinite(v):
                bad(f.name, "must be finite")
        if problems:
            raise ConfigError(problems)


# one-line descriptions written into resolved-config files
_DOC = {
    "n_mbs": "macro base stations N",
    "followers_per_mbs": "digital twins per MBS M",
    "n_leo": "LEO satellites O",
    "n_channels": "OFDMA channels R",
    "slot_duration": "slot length T [s]",
    "arrival_lo": "task arrival lower bound [bits]",
    "arrival_hi": "task arrival upper bound [bits]",
    "follower_cpu_max": "per-DT CPU frequency cap [cycles/s]",
    "mamcc_pool": "CPU pool split equally by MAMCC [cycles/s]",
    "workload_factor": "cycles per bit used to convert |W_m| and S_B into workloads",
    "price_sign": "literal: F2 = C_SBC - price*f; cost: F2 = C_SBC + price*f",
    "gamma": "critic discount; 0 keeps the critic a per-slot regressor",
    "agg_lr": "federated step u in Z + u*sum(w*(Z - Z_local)); -1 is weighted averaging",
}

_FIELDS = {f.name: f for f in fields(SimConfig)}


def _coerce(name, raw):
    default = getattr(SimConfig, name, None) if name != "hidden" else (64, 64)
    raw = raw.strip()
    if name == "hidden":
        return tuple(int(p) for p in raw.replace(" ", "").split(",") if p)
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        val = float(raw)
        if val != int(val):
            raise ValueError(f"expected an integer, got {raw!r}")
        return int(val)
    if isinstance(default, float):
        return float(raw)
    return raw


def parse_config_text(text: str, base: SimConfig | None = None) -> SimConfig:
    """Parse ``key = value`` lines over ``base`` (defaults when None)."""
    base = base or SimConfig()
    values, lines, problems = {}, {}, []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append((lineno, line, "expected 'key = value'"))
            continue
        key, raw = (p.strip() for p in line.split("=", 1))
        if key not in _FIELDS:
            problems.append((lineno, key, "unknown key"))
            continue
        if key in values:
            problems.append((lineno, key, f"duplicate key (first set on line {lines[key]})"))
            continue
        try:
            values[key] = _coerce(key, raw)
        except ValueError as exc:
            problems.append((lineno, key, f"bad value {raw!r}: {exc}"))
            continue
        lines[key] = lineno
    cfg = dataclasses.replace(base, **values)
    try:
        cfg.validate(lines)
    except ConfigError as exc:
        problems.extend(exc.problems)
    if problems:
        problems.sort(key=lambda p: (p[0] is None, p[0] or 0))
        raise ConfigError(problems)
    return cfg


def format_value(v) -> str:
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def dump_config(cfg: SimConfig) -> str:
    out = []
    for f in fields(cfg):
        doc = _DOC.get(f.name)
        if doc:
            out.append(f"# {doc}")
        out.append(f"{f.name} = {format_value(getattr(cfg, f.name))}")
    return "\n".join(out) + "\n"


def load_config(path) -> SimConfig:
    path = Path(path)
    return parse_config_text(path.read_text(encoding="utf-8"))


def validate_config(path, resolved_path=None) -> SimConfig:
    """Load, validate and echo the fully resolved config next to ``path``."""
    cfg = load_config(path)
    resolved_path = Path(resolved_path) if resolved_path else Path(path).with_suffix(".resolved.cfg")
    resolved_path.write_text(dump_config(cfg), encoding="utf-8")
    return cfg


def tiny_config(**changes) -> SimConfig:
    """The desk-scale instance used by oracle, Stackelberg and MAML checks."""
    base = dict(n_mbs=1, followers_per_mbs=2, n_leo=1, n_channels=2, mamcc_pool=2.0e9,
                hidden=(16, 16), episode_len=200)
    base.update(changes)
    return SimConfig().replace(**base)
