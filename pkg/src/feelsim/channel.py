"""OFDMA uplink with Rayleigh block fading.

All quantities are linear scale (W, W/Hz, Hz, s, bits); dB and dBm values
are converted once by :func:`dbm_to_watts` / :func:`db_to_linear` when a
configuration is loaded.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, InfeasibleDeadlineError


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def path_loss_db(distance_km: float | np.ndarray) -> float | np.ndarray:
    """Macro-cell path loss ``128.1 + 37.6 log10(d)`` with ``d`` in km."""
    return 128.1 + 37.6 * np.log10(distance_km)


@dataclass(frozen=True)
class LinkBudget:
    bandwidth: float  # Hz
    noise_psd: float  # W/Hz

    def __post_init__(self):
        if not (self.bandwidth > 0 and self.noise_psd > 0):
            raise ConfigError("bandwidth and noise PSD must be positive")

    @property
    def noise_power(self) -> float:
        return self.bandwidth * self.noise_psd


@dataclass(frozen=True)
class DeviceProfile:
    id: int
    data_size: int
    tx_power: float  # W
    channel_gain_mean: float  # E|h|^2, linear
    cpu_freq: float  # Hz
    cpu_cycles_per_batch: float
    encode_bits: int

    def __post_init__(self):
        if self.data_size < 1:
            raise ConfigError(f"device {self.id}: data_size must be >= 1")
        for name in ("tx_power", "channel_gain_mean", "cpu_freq"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"device {self.id}: {name} must be positive")
        if self.cpu_cycles_per_batch < 0 or self.encode_bits < 1:
            raise ConfigError(f"device {self.id}: bad cycles or encode width")

    def mean_snr(self, link: LinkBudget) -> float:
        return self.tx_power * self.channel_gain_mean / link.noise_power

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DeviceProfile":
        return cls(
            id=int(d["id"]),
            data_size=int(d["data_size"]),
            tx_power=float(d["tx_power"]),
            channel_gain_mean=float(d["channel_gain_mean"]),
            cpu_freq=float(d["cpu_freq"]),
            cpu_cycles_per_batch=float(d["cpu_cycles_per_batch"]),
            encode_bits=int(d["encode_bits"]),
        )


@dataclass(frozen=True)
class ChannelDraw:
    device_id: int
    gain_sq: float
    round: int


@dataclass(frozen=True)
class PopulationSpec:
    """How to generate devices. Powers are already in watts."""

    tx_power: float = dbm_to_watts(18.0)
    cpu_cycles_per_batch: float = 5e6
    encode_bits: int = 32
    distance_km: tuple[float, float] = (0.01, 0.5)
    cpu_freq_hz: tuple[float, float] = (1e8, 1e9)

    def __post_init__(self):
        lo, hi = self.distance_km
        if not (0 < lo <= hi):
            raise ConfigError(f"distance range must satisfy 0 < lo <= hi, got {self.distance_km}")
        lo, hi = self.cpu_freq_hz
        if not (0 < lo <= hi):
            raise ConfigError(f"cpu frequency range must satisfy 0 < lo <= hi, got {self.cpu_freq_hz}")


def make_population(
    count: int,
    link: LinkBudget,
    spec: PopulationSpec,
    rng: np.random.Generator,
    data_sizes=None,
) -> list[DeviceProfile]:
    """Drop ``count`` devices uniformly in distance and draw their CPU speeds."""
    if count < 1:
        raise ConfigError("population needs at least one device")
    if data_sizes is None:
        data_sizes = [1] * count
    if len(data_sizes) != count:
        raise ConfigError("data_sizes length must equal device count")
    dist = rng.uniform(*spec.distance_km, size=count)
    freq = rng.uniform(*spec.cpu_freq_hz, size=count)
    gains = 10.0 ** (-path_loss_db(dist) / 10.0)
    return [
        DeviceProfile(
            id=m,
            data_size=int(data_sizes[m]),
            tx_power=spec.tx_power,
            channel_gain_mean=float(gains[m]),
            cpu_freq=float(freq[m]),
            cpu_cycles_per_batch=spec.cpu_cycles_per_batch,
            encode_bits=spec.encode_bits,
        )
        for m in range(count)
    ]


def draw_channel(dev: DeviceProfile, round: int, rng: np.random.Generator) -> ChannelDraw:
    # |h|^2 of a CN(0, s) coefficient is exponential with mean s
    return ChannelDraw(device_id=dev.id, gain_sq=float(rng.exponential(dev.channel_gain_mean)), round=round)


def data_rate(dev: DeviceProfile, draw: ChannelDraw, link: LinkBudget) -> float:
    snr = dev.tx_power * draw.gain_sq / link.noise_power
    return link.bandwidth * math.log2(1.0 + snr)


def compute_time(dev: DeviceProfile) -> float:
    return dev.cpu_cycles_per_batch / dev.cpu_freq


def upload_time(payload_bits: int, dev: DeviceProfile, draw: ChannelDraw, link: LinkBudget) -> float:
    if payload_bits == 0:
        return 0.0
    rate = data_rate(dev, draw, link)
    return math.inf if rate == 0.0 else payload_bits / rate


def success_probability(dev: DeviceProfile, link: LinkBudget, r: float, dim: int, deadline: float) -> float:
    """Large-model limit of P(upload finishes before the deadline).

    Raises :class:`InfeasibleDeadlineError` when the deadline does not
    exceed the device's computation time.
    """
    slack = deadline - compute_time(dev)
    if not slack > 0:
        raise InfeasibleDeadlineError(
            f"device {dev.id}: deadline {deadline:g}s <= compute time {compute_time(dev):g}s"
        )
    if math.isinf(slack):
        return 1.0
    bits_per_hz = dev.encode_bits * dim * r / (link.bandwidth * slack)
    try:
        grow = math.expm1(bits_per_hz * math.log(2.0))
    except OverflowError:
        return 0.0
    return math.exp(-grow / dev.mean_snr(link))
