"""Per-round energy accounting for participants and idle devices.

Participants: computation energy from per-core busy/idle residency (CPU) or a
single busy/idle split (GPU), plus radio energy at the signal band's TX power.
Their slack after uploading counts toward the idle term of the computation
energy. Non-participants draw idle power for the whole round.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from flsim.device import DeviceProfile, ExecTargetChoice, SignalBand, TargetKind, power_at
from flsim.errors import ContractViolation


@dataclass(frozen=True)
class BusySegment:
    step: int
    seconds: float


@dataclass(frozen=True)
class EnergyTrace:
    device_id: int
    participant: bool
    target_kind: TargetKind | None
    busy: tuple[BusySegment, ...]
    t_idle: float
    t_tx: float
    t_round: float
    signal_band: SignalBand = SignalBand.STRONG

    @property
    def t_busy_total(self) -> float:
        return sum(s.seconds for s in self.busy)

    def check(self):
        times = [self.t_idle, self.t_tx, self.t_round, *(s.seconds for s in self.busy)]
        for t in times:
            if not math.isfinite(t) or t < 0:
                raise ContractViolation(f"device {self.device_id}: invalid time {t!r} in trace")


def participant_trace(profile: DeviceProfile, choice: ExecTargetChoice, t_comp: float,
                      t_tx: float, t_round: float, band: SignalBand) -> EnergyTrace:
    slack = t_round - t_comp - t_tx
    # float noise from the max() over participants
    if -1e-12 * max(t_round, 1.0) < slack < 0:
        slack = 0.0
    return EnergyTrace(profile.id, True, choice.kind, (BusySegment(choice.step, t_comp),),
                       slack, t_tx, t_round, band)


def idle_trace(profile: DeviceProfile, t_round: float) -> EnergyTrace:
    return EnergyTrace(profile.id, False, None, (), 0.0, 0.0, t_round)


def comp_energy(trace: EnergyTrace, profile: DeviceProfile, target: TargetKind | None = None) -> float:
    trace.check()
    kind = trace.target_kind if target is None else TargetKind(target)
    if kind is None:
        return 0.0
    spec = profile.target(kind)
    powers = [(power_at(profile, ExecTargetChoice(kind, s.step))[0], s.seconds) for s in trace.busy]
    if kind == TargetKind.CPU:
        n = spec.cores
        p_idle_core = profile.idle_power / n
        return sum(sum(p / n * t for p, t in powers) + p_idle_core * trace.t_idle
                   for _ in range(n))
    return sum(p * t for p, t in powers) + profile.idle_power * trace.t_idle


def comm_energy(trace: EnergyTrace, profile: DeviceProfile) -> float:
    trace.check()
    return profile.comm_power[SignalBand(trace.signal_band)] * trace.t_tx


def idle_energy(profile: DeviceProfile, t_round: float) -> float:
    if t_round < 0:
        raise ContractViolation("t_round must be >= 0")
    return profile.idle_power * t_round


@dataclass
class EnergyReport:
    e_comp: float
    e_comm: float
    e_idle: float
    local: dict = field(default_factory=dict)  # device id -> joules
    r_energy_global: float = 0.0


def energy_rewards(traces, participants, fleet) -> EnergyReport:
    """Local energy per device and their sum over the whole fleet."""
    participants = set(participants)
    report = EnergyReport(0.0, 0.0, 0.0)
    for profile in fleet:
        trace = traces.get(profile.id)
        if trace is None:
            raise ContractViolation(f"device {profile.id} has no energy trace")
        if profile.id in participants:
            if not trace.participant:
                raise ContractViolation(f"participant {profile.id} has an idle-only trace")
            e_comp = comp_energy(trace, profile)
            e_comm = comm_energy(trace, profile)
            report.e_comp += e_comp
            report.e_comm += e_comm
            local = e_comp + e_comm
        else:
            local = idle_energy(profile, trace.t_round)
            report.e_idle += local
        report.local[profile.id] = local
    unknown = participants - set(report.local)
    if unknown:
        raise ContractViolation(f"participants {sorted(unknown)} are not in the fleet")
    report.r_energy_global = sum(report.local[d.id] for d in fleet)
    return report
