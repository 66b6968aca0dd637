"""Network topology, task arrivals, LEO geometry and the OFDMA channel model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SimConfig


@dataclass
class LeoGeometry:
    """Horizontal and vertical distances per (mbs, follower, leo), in meters."""

    horizontal_dist: np.ndarray
    vertical_dist: np.ndarray

    @property
    def slant_range(self) -> np.ndarray:
        return np.hypot(self.horizontal_dist, self.vertical_dist)

    def nearest_leo(self) -> np.ndarray:
        """Index of the LEO with the smallest slant range, per (mbs, follower)."""
        return np.argmin(self.slant_range, axis=-1)

    def target(self, leo_idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        idx = leo_idx[..., None]
        x = np.take_along_axis(self.horizontal_dist, idx, axis=-1)[..., 0]
        y = np.take_along_axis(self.vertical_dist, idx, axis=-1)[..., 0]
        return x, y


@dataclass
class ArrivalBatch:
    bits: np.ndarray
    second_moment_est: np.ndarray


@dataclass
class ChannelAssignment:
    """Channel occupancy for one slot.

    ``indicator[n, m, r]`` is True when follower (n, m) transmits on channel r,
    ``power`` holds the matching transmit power and ``offload_target`` is the
    LEO index for offloading followers and -1 otherwise.
    """

    indicator: np.ndarray
    power: np.ndarray
    offload_target: np.ndarray

    @classmethod
    def from_choices(cls, channel, offload, tx_power, n_channels, target=None):
        channel = np.asarray(channel)
        offload = np.asarray(offload, dtype=bool)
        n, m = channel.shape
        indicator = np.zeros((n, m, n_channels), dtype=bool)
        nn, mm = np.nonzero(offload)
        indicator[nn, mm, channel[nn, mm]] = True
        p = np.asarray(tx_power, float)
        power = indicator * (p[..., None] if p.ndim == 2 else p)
        if target is None:
            target = np.zeros((n, m), dtype=int)
        offload_target = np.where(offload, target, -1)
        return cls(indicator, power, offload_target)

    def validate(self) -> None:
        if np.any(self.indicator.sum(axis=-1) > 1):
            raise ValueError("a follower holds more than one channel")
        if np.any(self.power < 0):
            raise ValueError("negative transmit power")
        offloading = self.indicator.any(axis=-1)
        if np.any(offloading != (self.offload_target >= 0)):
            raise ValueError("offload_target must be set exactly for transmitting followers")


class ArrivalStats:
    """Running empirical second moment of arrivals, one entry per follower.

    Starts from the closed-form uniform value and switches to the sample mean
    of A^2 once observations exist.
    """

    def __init__(self, cfg: SimConfig):
        a, b = cfg.arrival_lo, cfg.arrival_hi
        shape = (cfg.n_mbs, cfg.followers_per_mbs)
        self.prior = np.full(shape, (a * a + a * b + b * b) / 3.0)
        self.count = 0
        self.sum_sq = np.zeros(shape)

    def update(self, bits: np.ndarray) -> np.ndarray:
        self.count += 1
        self.sum_sq += np.square(bits)
        return self.estimate

    @property
    def estimate(self) -> np.ndarray:
        if self.count == 0:
            return self.prior.copy()
        return self.sum_sq / self.count


def sample_arrivals(rng: np.random.Generator, cfg: SimConfig, stats: ArrivalStats | None = None) -> ArrivalBatch:
    shape = (cfg.n_mbs, cfg.followers_per_mbs)
    bits = rng.uniform(cfg.arrival_lo, cfg.arrival_hi, size=shape)
    if stats is None:
        est = np.square(bits)
    else:
        est = stats.update(bits)
    return ArrivalBatch(bits=bits, second_moment_est=est)


def sample_cycles_per_bit(rng: np.random.Generator, cfg: SimConfig) -> np.ndarray:
    return rng.uniform(cfg.cycles_per_bit_lo, cfg.cycles_per_bit_hi,
                       size=(cfg.n_mbs, cfg.followers_per_mbs))


def step_geometry(rng: np.random.Generator, cfg: SimConfig) -> LeoGeometry:
    """Resample every DT-to-LEO distance for the coming slot."""
    shape = (cfg.n_mbs, cfg.followers_per_mbs, cfg.n_leo)
    x = rng.uniform(cfg.x_lo, cfg.x_hi, size=shape)
    y = rng.uniform(cfg.y_lo, cfg.y_hi, size=shape)
    return LeoGeometry(horizontal_dist=x, vertical_dist=y)


def sample_excess_loss(rng: np.random.Generator, cfg: SimConfig) -> tuple[np.ndarray, np.ndarray]:
    """LoS / NLoS excess loss in dB per (mbs, follower, channel)."""
    shape = (cfg.n_mbs, cfg.followers_per_mbs, cfg.n_channels)
    eps_los = rng.uniform(cfg.eps_los_lo, cfg.eps_los_hi, size=shape)
    eps_nlos = rng.uniform(cfg.eps_nlos_lo, cfg.eps_nlos_hi, size=shape)
    return eps_los, eps_nlos


def _check_positive(**arrays):
    for name, arr in arrays.items():
        if np.any(np.asarray(arr) <= 0):
            raise ValueError(f"{name} must be > 0")


def los_probability(x, y, b1: float, b2: float):
    """Line-of-sight probability; the elevation angle is taken in degrees."""
    _check_positive(x=x, y=y)
    theta = np.degrees(np.arctan(np.asarray(y, float) / np.asarray(x, float)))
    return 1.0 / (1.0 + b1 * np.exp(-b2 * (theta - b1)))


def free_space_loss(x, y, carrier_freq: float, light_speed: float):
    _check_positive(x=x, y=y)
    d = np.hypot(x, y)
    return 20.0 * np.log10(4.0 * np.pi * carrier_freq * d / light_speed)


def path_loss(x, y, cfg: SimConfig, eps_los, eps_nlos):
    """Mean path loss in dB: free space plus the LoS/NLoS excess-loss mixture."""
    p = los_probability(x, y, cfg.b1, cfg.b2)
    fs = free_space_loss(x, y, cfg.carrier_freq, cfg.light_speed)
    return fs + p * eps_los + (1.0 - p) * eps_nlos


def channel_gain(loss_db):
    """|10^(-L/10)|^2, the power gain used by the interference and rate formulas."""
    return np.square(np.power(10.0, -np.asarray(loss_db, float) / 10.0))


def _per_channel(losses, n_channels):
    losses = np.asarray(losses, float)
    if losses.ndim == 2:
        losses = np.repeat(losses[..., None], n_channels, axis=-1)
    return losses


def interference(assign: ChannelAssignment, losses, target_mbs: int, channel: int) -> float:
    """Inter-cell interference seen on ``channel`` by MBS ``target_mbs``.

    ``losses`` is indexed (mbs, follower) or (mbs, follower, channel).
    """
    g = channel_gain(_per_channel(losses, assign.indicator.shape[-1]))
    contrib = assign.indicator[:, :, channel] * assign.power[:, :, channel] * g[:, :, channel]
    contrib = np.delete(contrib, target_mbs, axis=0)
    return float(contrib.sum())


def interference_matrix(assign: ChannelAssignment, losses) -> np.ndarray:
    """Interference for every (mbs, channel) pair at once, shape (N, R)."""
    g = channel_gain(_per_channel(losses, assign.indicator.shape[-1]))
    per_mbs = (assign.indicator * assign.power * g).sum(axis=1)
    n = per_mbs.shape[0]
    # summing the others directly avoids cancellation against a dominant own term
    others = ~np.eye(n, dtype=bool)
    return np.stack([per_mbs[others[i]].sum(axis=0) for i in range(n)]) if n else per_mbs


def offload_rate(bandwidth, offload, tx_power, loss_db, noise_power, interf):
    """Achievable offloading rate in bits/s (zero when not offloading)."""
    sinr = np.asarray(offload, float) * tx_power * channel_gain(loss_db) / (noise_power + interf)
    return bandwidth * np.log2(1.0 + sinr)


def local_bits(f, w, T):
    if np.any(np.asarray(w) == 0):
        raise ValueError("cycles per bit must be non-zero")
    return np.asarray(f, float) * T / np.asarray(w, float)


def offload_bits(rate, T):
    return np.asarray(rate, float) * T
