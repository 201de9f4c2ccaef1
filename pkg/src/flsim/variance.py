"""Per-round stochastic runtime conditions: co-runner interference and bandwidth."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from flsim.device import SignalBand
from flsim.errors import ConfigError

WEAK_SIGNAL_MBPS = 40.0


@dataclass(frozen=True)
class InterferenceState:
    cpu_util: float = 0.0
    mem_util: float = 0.0

    def __post_init__(self):
        for name in ("cpu_util", "mem_util"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")


@dataclass(frozen=True)
class NetworkState:
    bandwidth_mbps: float

    def __post_init__(self):
        if not self.bandwidth_mbps > 0:
            raise ConfigError("bandwidth must be positive")

    @property
    def signal_band(self) -> SignalBand:
        return SignalBand.WEAK if self.bandwidth_mbps <= WEAK_SIGNAL_MBPS else SignalBand.STRONG


@dataclass(frozen=True)
class DeviceConditions:
    interference: InterferenceState
    network: NetworkState


@dataclass(frozen=True)
class VarianceSpec:
    interference_prob: float = 0.3
    cpu_util_range: tuple[float, float] = (0.25, 0.75)
    mem_util_range: tuple[float, float] = (0.1, 0.5)
    bw_mean: float = 80.0
    bw_stddev: float = 25.0
    bw_floor: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.interference_prob <= 1.0:
            raise ConfigError("interference_prob must be in [0, 1]")
        for name in ("cpu_util_range", "mem_util_range"):
            lo, hi = getattr(self, name)
            if not 0.0 <= lo <= hi <= 1.0:
                raise ConfigError(f"{name} must satisfy 0 <= lo <= hi <= 1")
        if not self.bw_floor > 0:
            raise ConfigError("bw_floor must be positive")
        if self.bw_stddev < 0:
            raise ConfigError("bw_stddev must be >= 0")


# "weak network" scenario
WEAK_NETWORK = VarianceSpec(bw_mean=25.0)


def _device_rng(seed, round_idx: int, device_id: int) -> np.random.Generator:
    base = list(seed) if isinstance(seed, (tuple, list)) else [seed]
    return np.random.default_rng(np.random.SeedSequence([*base, round_idx, device_id]))


def sample_device_conditions(spec: VarianceSpec, seed, round_idx: int,
                             device_id: int) -> DeviceConditions:
    rng = _device_rng(seed, round_idx, device_id)
    # always consume the same four draws so streams stay aligned
    coin, u_cpu, u_mem, z = rng.random(), rng.random(), rng.random(), rng.standard_normal()
    if coin < spec.interference_prob:
        lo, hi = spec.cpu_util_range
        cpu = lo + (hi - lo) * u_cpu
        lo, hi = spec.mem_util_range
        mem = lo + (hi - lo) * u_mem
        interference = InterferenceState(cpu, mem)
    else:
        interference = InterferenceState(0.0, 0.0)
    bw = max(spec.bw_mean + spec.bw_stddev * z, spec.bw_floor)
    return DeviceConditions(interference, NetworkState(bw))


def sample_round_conditions(spec: VarianceSpec, fleet, round_idx: int,
                            seed) -> dict[int, DeviceConditions]:
    """Independent conditions per device, reproducible from (seed, round, device id)."""
    return {d.id: sample_device_conditions(spec, seed, round_idx, d.id) for d in fleet}
