"""Heterogeneous device fleet: tiers, execution targets, DVFS tables and throughput.

Each tier template fixes CPU/GPU peak power, DVFS step counts, idle and radio
power, and CPU throughput (153.6 / 80 / 52.8 GFLOPS for high / mid / low).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from flsim.errors import ConfigError, ContractViolation


class Tier(enum.IntEnum):
    HIGH = 0
    MID = 1
    LOW = 2


class TargetKind(enum.IntEnum):
    CPU = 0
    GPU = 1


class SignalBand(enum.IntEnum):
    STRONG = 0
    WEAK = 1


@dataclass(frozen=True)
class DvfsStep:
    frequency_hz: float
    busy_power_w: float


@dataclass(frozen=True)
class ExecTargetSpec:
    kind: TargetKind
    dvfs_steps: tuple[DvfsStep, ...]
    cores: int = 1

    def __post_init__(self):
        if not self.dvfs_steps:
            raise ConfigError(f"{self.kind.name} target has no DVFS steps")
        freqs = [s.frequency_hz for s in self.dvfs_steps]
        powers = [s.busy_power_w for s in self.dvfs_steps]
        if any(b <= a for a, b in zip(freqs, freqs[1:])):
            raise ConfigError(f"{self.kind.name} DVFS frequencies must strictly increase")
        if any(b < a for a, b in zip(powers, powers[1:])):
            raise ConfigError(f"{self.kind.name} DVFS busy power must not decrease")
        if not all(math.isfinite(p) and p > 0 for p in powers) or min(freqs) <= 0:
            raise ConfigError(f"{self.kind.name} DVFS table has non-positive entries")
        if self.cores < 1:
            raise ConfigError("cores must be >= 1")

    @property
    def top_frequency(self) -> float:
        return self.dvfs_steps[-1].frequency_hz

    @property
    def top_step(self) -> int:
        return len(self.dvfs_steps) - 1


@dataclass(frozen=True)
class ExecTargetChoice:
    """A concrete execution target: processor kind plus a DVFS step index."""

    kind: TargetKind
    step: int

    def __str__(self):
        return f"{self.kind.name}@{self.step}"


@dataclass(frozen=True)
class DeviceProfile:
    id: int
    tier: Tier
    targets: tuple[ExecTargetSpec, ...]
    idle_power: float
    comm_power: dict  # SignalBand -> watts while transmitting
    base_throughput: dict  # TargetKind -> FLOP/s at the top DVFS step

    def __post_init__(self):
        kinds = [t.kind for t in self.targets]
        if TargetKind.CPU not in kinds:
            raise ConfigError(f"device {self.id}: a CPU execution target is required")
        if len(set(kinds)) != len(kinds):
            raise ConfigError(f"device {self.id}: duplicate execution target kinds")
        if not (math.isfinite(self.idle_power) and self.idle_power > 0):
            raise ConfigError(f"device {self.id}: idle_power must be positive")
        for band in SignalBand:
            p = self.comm_power.get(band)
            if p is None or not (math.isfinite(p) and p > 0):
                raise ConfigError(f"device {self.id}: missing or invalid TX power for {band.name}")
        for kind in kinds:
            thr = self.base_throughput.get(kind)
            if thr is None or not (math.isfinite(thr) and thr > 0):
                raise ConfigError(f"device {self.id}: missing throughput for {kind.name}")

    def target(self, kind: TargetKind) -> ExecTargetSpec:
        for t in self.targets:
            if t.kind == kind:
                return t
        raise LookupError(f"device {self.id} has no {TargetKind(kind).name} target")

    def has_target(self, kind: TargetKind) -> bool:
        return any(t.kind == kind for t in self.targets)

    def peak_power(self) -> float:
        return sum(t.dvfs_steps[-1].busy_power_w for t in self.targets)

    def default_target(self) -> ExecTargetChoice:
        return ExecTargetChoice(TargetKind.CPU, self.target(TargetKind.CPU).top_step)


@dataclass(frozen=True)
class Fleet:
    devices: tuple[DeviceProfile, ...]
    tier_counts: tuple[int, int, int]

    def __post_init__(self):
        if sum(self.tier_counts) != len(self.devices):
            raise ConfigError("tier_counts must sum to the number of devices")
        ids = [d.id for d in self.devices]
        if len(set(ids)) != len(ids):
            raise ConfigError("device ids must be unique")

    def __len__(self):
        return len(self.devices)

    def __iter__(self):
        return iter(self.devices)

    def __getitem__(self, device_id: int) -> DeviceProfile:
        return self.devices[device_id]

    def ids(self) -> list[int]:
        return [d.id for d in self.devices]


# ---------------------------------------------------------------------------
# Tier templates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TargetTemplate:
    peak_frequency_hz: float
    n_steps: int
    peak_power_w: float
    throughput_flops: float
    cores: int = 1
    min_frequency_fraction: float = 0.2
    static_floor: float = 0.1

    def build(self, kind: TargetKind) -> ExecTargetSpec:
        if self.n_steps < 1:
            raise ConfigError("n_steps must be >= 1")
        if self.n_steps == 1:
            fracs = np.array([1.0])
        else:
            fracs = np.linspace(self.min_frequency_fraction, 1.0, self.n_steps)
        # cubic dynamic power with a static floor
        steps = tuple(
            DvfsStep(float(self.peak_frequency_hz * r),
                     float(self.peak_power_w * max(r ** 3, self.static_floor)))
            for r in fracs
        )
        return ExecTargetSpec(kind=kind, dvfs_steps=steps, cores=self.cores)


@dataclass(frozen=True)
class TierTemplate:
    tier: Tier
    cpu: TargetTemplate
    gpu: TargetTemplate | None
    idle_power_w: float
    tx_power_strong_w: float
    tx_power_weak_w: float

    def instantiate(self, device_id: int) -> DeviceProfile:
        targets = [self.cpu.build(TargetKind.CPU)]
        throughput = {TargetKind.CPU: self.cpu.throughput_flops}
        if self.gpu is not None:
            targets.append(self.gpu.build(TargetKind.GPU))
            throughput[TargetKind.GPU] = self.gpu.throughput_flops
        return DeviceProfile(
            id=device_id,
            tier=self.tier,
            targets=tuple(targets),
            idle_power=self.idle_power_w,
            comm_power={SignalBand.STRONG: self.tx_power_strong_w,
                        SignalBand.WEAK: self.tx_power_weak_w},
            base_throughput=throughput,
        )


GPU_THROUGHPUT_FRACTION = 0.4

DEFAULT_TEMPLATES = {
    Tier.HIGH: TierTemplate(
        Tier.HIGH,
        cpu=TargetTemplate(2.8e9, 23, 5.5, 153.6e9, cores=8),
        gpu=TargetTemplate(0.7e9, 7, 2.8, GPU_THROUGHPUT_FRACTION * 153.6e9),
        idle_power_w=0.12,
        tx_power_strong_w=0.8 * 1.2,
        tx_power_weak_w=1.4 * 1.2,
    ),
    Tier.MID: TierTemplate(
        Tier.MID,
        cpu=TargetTemplate(2.7e9, 21, 5.6, 80e9, cores=8),
        gpu=TargetTemplate(0.7e9, 9, 2.4, GPU_THROUGHPUT_FRACTION * 80e9),
        idle_power_w=0.11,
        tx_power_strong_w=0.8,
        tx_power_weak_w=1.4,
    ),
    Tier.LOW: TierTemplate(
        Tier.LOW,
        cpu=TargetTemplate(1.9e9, 15, 3.6, 52.8e9, cores=8),
        gpu=TargetTemplate(0.6e9, 6, 2.0, GPU_THROUGHPUT_FRACTION * 52.8e9),
        idle_power_w=0.10,
        tx_power_strong_w=0.8 * 0.8,
        tx_power_weak_w=1.4 * 0.8,
    ),
}


@dataclass(frozen=True)
class FleetSpec:
    n_high: int
    n_mid: int
    n_low: int
    templates: dict = field(default_factory=lambda: dict(DEFAULT_TEMPLATES))

    @property
    def counts(self) -> tuple[int, int, int]:
        return (self.n_high, self.n_mid, self.n_low)


def build_fleet(spec: FleetSpec) -> Fleet:
    """Instantiate devices tier-major (all High, then Mid, then Low), ids 0..N-1."""
    counts = spec.counts
    if any(c < 0 for c in counts):
        raise ConfigError(f"tier counts must be non-negative, got {counts}")
    if sum(counts) < 1:
        raise ConfigError("fleet must contain at least one device")
    devices = []
    for tier, count in zip(Tier, counts):
        if count == 0:
            continue
        template = spec.templates.get(tier)
        if template is None:
            raise ConfigError(f"no template for tier {tier.name}")
        if template.cpu is None:
            raise ConfigError(f"tier {tier.name} template has no CPU target")
        for _ in range(count):
            devices.append(template.instantiate(len(devices)))
    return Fleet(tuple(devices), counts)


# ---------------------------------------------------------------------------
# Lookups
# ---------------------------------------------------------------------------

# CPU share left to the training job never drops below this
MIN_CPU_SHARE = 0.05


def _step(profile: DeviceProfile, choice: ExecTargetChoice) -> tuple[ExecTargetSpec, DvfsStep]:
    spec = profile.target(choice.kind)
    if not 0 <= choice.step < len(spec.dvfs_steps):
        raise LookupError(
            f"device {profile.id}: {choice.kind.name} step {choice.step} out of range "
            f"[0, {len(spec.dvfs_steps) - 1}]")
    return spec, spec.dvfs_steps[choice.step]


def effective_throughput(profile: DeviceProfile, target: ExecTargetChoice, interference) -> float:
    """FLOP/s delivered by ``target`` while a co-runner holds ``interference.cpu_util`` of the CPU.

    Throughput scales linearly with frequency; contention only slows CPU targets.
    """
    spec, step = _step(profile, target)
    cpu_util = float(interference.cpu_util)
    if not 0.0 <= cpu_util <= 1.0:
        raise ContractViolation(f"cpu_util must be in [0, 1], got {cpu_util}")
    thr = profile.base_throughput[target.kind] * step.frequency_hz / spec.top_frequency
    if target.kind == TargetKind.CPU:
        thr *= max(1.0 - cpu_util, MIN_CPU_SHARE)
    return thr


def power_at(profile: DeviceProfile, target: ExecTargetChoice) -> tuple[float, float]:
    _, step = _step(profile, target)
    return step.busy_power_w, profile.idle_power


# ---------------------------------------------------------------------------
# RL action space
# ---------------------------------------------------------------------------

def exposed_step_indices(n_steps: int, exposed: int) -> list[int]:
    """Evenly spaced step indices, highest frequency first."""
    if exposed < 1:
        raise ConfigError("at least one DVFS step must be exposed")
    if exposed >= n_steps:
        return list(range(n_steps - 1, -1, -1))
    idx = np.round(np.linspace(n_steps - 1, 0, exposed)).astype(int)
    return [int(i) for i in idx]


@dataclass(frozen=True)
class ActionSpace:
    """Second-level actions: (target kind, exposed level), level 0 being the top frequency.

    Action index 0 is always CPU at its top step, the baselines' default target.
    """

    actions: tuple[tuple[TargetKind, int], ...]
    exposed_steps: int

    @classmethod
    def build(cls, kinds=(TargetKind.CPU, TargetKind.GPU), exposed_steps: int = 4) -> ActionSpace:
        kinds = sorted(set(TargetKind(k) for k in kinds))
        if TargetKind.CPU not in kinds:
            raise ConfigError("action space must include the CPU")
        actions = tuple((k, level) for k in kinds for level in range(exposed_steps))
        return cls(actions, exposed_steps)

    def __len__(self):
        return len(self.actions)

    def resolve(self, profile: DeviceProfile, action: int) -> ExecTargetChoice:
        kind, level = self.actions[action]
        spec = profile.target(kind)
        steps = exposed_step_indices(len(spec.dvfs_steps), self.exposed_steps)
        return ExecTargetChoice(kind, steps[min(level, len(steps) - 1)])

    def valid_mask(self, profile: DeviceProfile) -> np.ndarray:
        return np.array([profile.has_target(k) for k, _ in self.actions], dtype=bool)
