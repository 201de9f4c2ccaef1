import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from energy_oracle import brute_force_global, random_round
from flsim.device import (
    DeviceProfile,
    DvfsStep,
    ExecTargetChoice,
    ExecTargetSpec,
    FleetSpec,
    SignalBand,
    TargetKind,
    Tier,
    build_fleet,
)
from flsim.device import Fleet
from flsim.energy import (
    BusySegment,
    EnergyTrace,
    comm_energy,
    comp_energy,
    energy_rewards,
    idle_energy,
    idle_trace,
    participant_trace,
)
from flsim.errors import ContractViolation


def single_core(device_id=0, idle=0.1):
    cpu = ExecTargetSpec(TargetKind.CPU, (DvfsStep(1e9, 2.0), DvfsStep(2e9, 5.5)), cores=1)
    return DeviceProfile(device_id, Tier.HIGH, (cpu,), idle,
                         {SignalBand.STRONG: 0.8, SignalBand.WEAK: 1.4}, {TargetKind.CPU: 1e9})


def cpu_trace(device_id, segments, t_idle=0.0, t_tx=0.0, t_round=0.0, band=SignalBand.STRONG):
    return EnergyTrace(device_id, True, TargetKind.CPU,
                       tuple(BusySegment(s, t) for s, t in segments), t_idle, t_tx, t_round, band)


def test_single_core_busy_plus_idle():
    dev = single_core()
    assert comp_energy(cpu_trace(0, [(1, 2.0)], t_idle=1.0), dev) == pytest.approx(11.1)


def test_all_zero_times():
    dev = single_core()
    assert comp_energy(cpu_trace(0, [(1, 0.0)]), dev) == 0.0
    assert comm_energy(cpu_trace(0, [(1, 0.0)]), dev) == 0.0
    assert idle_energy(dev, 0.0) == 0.0


def test_two_frequency_segments():
    dev = single_core()
    assert comp_energy(cpu_trace(0, [(1, 1.0), (0, 1.0)]), dev) == pytest.approx(7.5)


def test_strong_band_comm():
    dev = single_core()
    assert comm_energy(cpu_trace(0, [], t_tx=5.0), dev) == pytest.approx(4.0)


def test_weak_band_costs_more():
    dev = single_core()
    strong = comm_energy(cpu_trace(0, [], t_tx=2.0, band=SignalBand.STRONG), dev)
    weak = comm_energy(cpu_trace(0, [], t_tx=2.0, band=SignalBand.WEAK), dev)
    assert weak > strong


def test_idle_energy_linear():
    assert idle_energy(single_core(idle=0.1), 60.0) == pytest.approx(6.0)
    a, b = idle_energy(single_core(idle=0.1), 7.0), idle_energy(single_core(idle=0.3), 7.0)
    assert b == pytest.approx(3 * a)


def test_multicore_cpu_equals_aggregate_power(fleet20):
    dev = fleet20[0]
    trace = participant_trace(dev, dev.default_target(), 2.0, 0.5, 3.0, SignalBand.STRONG)
    assert comp_energy(trace, dev) == pytest.approx(5.5 * 2.0 + dev.idle_power * 0.5)


def test_single_device_fleet_global():
    dev = single_core()
    fleet = Fleet((dev,), (1, 0, 0))
    trace = participant_trace(dev, ExecTargetChoice(TargetKind.CPU, 1), 2.0, 1.0, 3.0,
                              SignalBand.STRONG)
    report = energy_rewards({0: trace}, [0], fleet)
    assert report.r_energy_global == pytest.approx(comp_energy(trace, dev) + comm_energy(trace, dev))


def test_two_device_hand_sum():
    d0, d1 = single_core(0), single_core(1)
    fleet = Fleet((d0, d1), (2, 0, 0))
    traces = {0: cpu_trace(0, [(1, 2.0)], t_idle=1.0, t_tx=5.0, t_round=60.0),
              1: idle_trace(d1, 60.0)}
    report = energy_rewards(traces, [0], fleet)
    assert report.local[0] == pytest.approx(15.1)
    assert report.local[1] == pytest.approx(6.0)
    assert report.r_energy_global == pytest.approx(21.1)


def test_participant_without_participant_trace():
    d0 = single_core(0)
    fleet = Fleet((d0,), (1, 0, 0))
    with pytest.raises(ContractViolation):
        energy_rewards({0: idle_trace(d0, 1.0)}, [0], fleet)


def test_negative_time_rejected():
    with pytest.raises(ContractViolation):
        comp_energy(cpu_trace(0, [(1, -1.0)]), single_core())


def test_randomized_round_matches_brute_force():
    rng = np.random.default_rng(123)
    fleet = build_fleet(FleetSpec(3, 7, 10))
    for _ in range(200):
        participants, traces, args = random_round(rng, fleet)
        report = energy_rewards(traces, participants, fleet)
        busy, t_idle, t_tx, t_round, bands, kinds = args
        expected, per_dev = brute_force_global(fleet, participants, busy, t_idle, t_tx, t_round,
                                               bands, kinds)
        assert report.r_energy_global == pytest.approx(expected, rel=1e-9)
        for d, e in per_dev.items():
            assert report.local[d] == pytest.approx(e, rel=1e-9, abs=1e-12)
        assert math.fsum(report.local.values()) == pytest.approx(report.r_energy_global, rel=1e-9)


@given(st.floats(0, 1e3), st.floats(0, 1e3), st.floats(0, 1e3))
def test_participant_slack_non_negative(t_comp, t_tx, extra):
    dev = single_core()
    t_round = t_comp + t_tx + extra
    trace = participant_trace(dev, ExecTargetChoice(TargetKind.CPU, 1), t_comp, t_tx, t_round,
                              SignalBand.STRONG)
    assert trace.t_idle >= 0.0
    assert comp_energy(trace, dev) >= 0.0 and comm_energy(trace, dev) >= 0.0
