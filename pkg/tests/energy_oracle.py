"""Independent re-summation of the energy model, written from the formulas
rather than from flsim.energy, used as a test oracle."""

from flsim.device import SignalBand, TargetKind
from flsim.energy import BusySegment, EnergyTrace, idle_trace


def brute_force_global(fleet, participants, busy, t_idle, t_tx, t_round, bands, kinds):
    """busy[d]: list of (step, seconds); kinds[d]: TargetKind; bands[d]: SignalBand."""
    total = 0.0
    per_device = {}
    for dev in fleet.devices:
        d = dev.id
        if d in participants:
            spec = [t for t in dev.targets if t.kind == kinds[d]][0]
            comp = 0.0
            if kinds[d] == TargetKind.CPU:
                # explicit per-core, per-frequency double sum
                for _core in range(spec.cores):
                    for step, secs in busy[d]:
                        comp += spec.dvfs_steps[step].busy_power_w / spec.cores * secs
                    comp += dev.idle_power / spec.cores * t_idle[d]
            else:
                for step, secs in busy[d]:
                    comp += spec.dvfs_steps[step].busy_power_w * secs
                comp += dev.idle_power * t_idle[d]
            comm = dev.comm_power[bands[d]] * t_tx[d]
            e = comp + comm
        else:
            e = dev.idle_power * t_round
        per_device[d] = e
        total += e
    return total, per_device


def random_round(rng, fleet):
    n = len(fleet)
    k = int(rng.integers(1, n + 1))
    participants = set(int(d) for d in rng.choice(n, size=k, replace=False))
    t_round = float(rng.uniform(0.0, 100.0))
    busy, t_idle, t_tx, bands, kinds, traces = {}, {}, {}, {}, {}, {}
    for dev in fleet:
        d = dev.id
        if d not in participants:
            traces[d] = idle_trace(dev, t_round)
            continue
        kind = TargetKind(int(rng.integers(0, 2)))
        spec = dev.target(kind)
        segs = [(int(rng.integers(0, len(spec.dvfs_steps))), float(rng.uniform(0, 20)))
                for _ in range(int(rng.integers(1, 4)))]
        busy[d], kinds[d] = segs, kind
        t_idle[d], t_tx[d] = float(rng.uniform(0, 10)), float(rng.uniform(0, 10))
        bands[d] = SignalBand(int(rng.integers(0, 2)))
        traces[d] = EnergyTrace(d, True, kind, tuple(BusySegment(s, t) for s, t in segs),
                                t_idle[d], t_tx[d], t_round, bands[d])
    return participants, traces, (busy, t_idle, t_tx, t_round, bands, kinds)
