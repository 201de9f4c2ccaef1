"""Experiment orchestration: config loading, the per-round loop, convergence and PPW."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from flsim.controller import (
    ActionChoice,
    Policy,
    QStore,
    QStoreMode,
    RewardInputs,
    Selection,
    baseline_select,
    compute_reward,
    featurize,
    oracle_search,
    q_update,
    select,
)
from flsim.device import ActionSpace, FleetSpec, TargetKind, build_fleet
from flsim.energy import energy_rewards, idle_trace, participant_trace
from flsim.errors import ConfigError
from flsim.trainer import ModelState, aggregate, evaluate, local_train, simulate_timing
from flsim.variance import (
    DeviceConditions,
    InterferenceState,
    NetworkState,
    VarianceSpec,
    sample_round_conditions,
)
from flsim.workload import (
    DataMode,
    GlobalParams,
    describe_nn,
    load_idx_dataset,
    make_gaussian_mixture,
    partition_dataset,
    read_csv_dataset,
)

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class FleetConfig:
    high: int = 3
    mid: int = 7
    low: int = 10
    exposed_steps: int = 4
    gpu: bool = True


@dataclass
class DatasetConfig:
    source: str = "synthetic"
    n_train: int = 10000
    n_test: int = 2000
    separation: float = 3.0
    noise: float = 1.0
    condition: float = 1.0
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    train_csv: str | None = None
    test_csv: str | None = None

    def __post_init__(self):
        if self.source not in ("synthetic", "idx", "csv"):
            raise ConfigError(f"dataset.source must be synthetic, idx or csv, got {self.source!r}")


@dataclass
class WorkloadConfig:
    nn: str = "toy_logistic"
    num_features: int = 64
    num_classes: int = 10
    hidden: tuple = (32,)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)


@dataclass
class ParamsConfig:
    batch_size: int = 16
    local_epochs: int = 5
    participants: int = 5
    target_accuracy: float = 90.0
    max_rounds: int = 200
    local_lr: float = 0.05
    patience: int = 5
    unweighted_average: bool = False
    straggler_deadline: float = 3.0

    def __post_init__(self):
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if not self.straggler_deadline > 0:
            raise ConfigError("straggler_deadline must be positive")


@dataclass
class VarianceConfig:
    interference_prob: float = 0.3
    cpu_util_range: tuple = (0.25, 0.75)
    mem_util_range: tuple = (0.1, 0.5)
    bw_mean: float = 80.0
    bw_stddev: float = 25.0
    bw_floor: float = 1.0
    fixed: dict | None = None  # device id -> {cpu_util, mem_util, bandwidth_mbps}

    def spec(self) -> VarianceSpec:
        return VarianceSpec(self.interference_prob, tuple(self.cpu_util_range),
                            tuple(self.mem_util_range), self.bw_mean, self.bw_stddev, self.bw_floor)


@dataclass
class DataConfig:
    non_iid_fraction: float = 0.0
    concentration: float = 0.1


@dataclass
class PolicyConfig:
    name: str = "autofl"
    cluster: object = None

    def __post_init__(self):
        try:
            Policy(self.name)
        except ValueError:
            raise ConfigError(f"unknown policy {self.name!r}") from None
        if self.name == Policy.CLUSTER_FIXED.value and self.cluster is None:
            raise ConfigError("cluster_fixed policy needs policy.cluster")


@dataclass
class RlConfig:
    gamma: float = 0.9
    mu: float = 0.1
    epsilon: float = 0.1
    alpha: float = 1.0
    beta: float = 2.0
    energy_scale: float = 1.0
    qstore_mode: str = "per_device"
    warmup_episodes: int = 0
    init_qstore: str | None = None

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError("rl.gamma must be in (0, 1]")
        if not 0.0 <= self.mu < 1.0:
            raise ConfigError("rl.mu must be in [0, 1)")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError("rl.epsilon must be in [0, 1]")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("rl.alpha and rl.beta must be >= 0")
        if not self.energy_scale > 0:
            raise ConfigError("rl.energy_scale must be positive")
        if self.warmup_episodes < 0:
            raise ConfigError("rl.warmup_episodes must be >= 0")
        try:
            QStoreMode(self.qstore_mode)
        except ValueError:
            raise ConfigError(f"unknown qstore_mode {self.qstore_mode!r}") from None


@dataclass
class SeedsConfig:
    data: int = 0
    variance: int = 0
    rl: int = 0
    train: int = 0


@dataclass
class OutputConfig:
    records_csv: str | None = None
    summary_json: str | None = None
    qstore: str | None = None


_SECTIONS = {
    "fleet": FleetConfig,
    "workload": WorkloadConfig,
    "params": ParamsConfig,
    "variance": VarianceConfig,
    "data": DataConfig,
    "policy": PolicyConfig,
    "rl": RlConfig,
    "seeds": SeedsConfig,
    "output": OutputConfig,
}
_REQUIRED_SEEDS = ("data", "variance", "rl", "train")


def _section(cls, data, where):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for k, v in data.items():
        if k == "dataset" and cls is WorkloadConfig:
            v = _section(DatasetConfig, v, f"{where}.dataset")
        elif isinstance(v, list):
            v = tuple(v)
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass
class ExperimentConfig:
    fleet: FleetConfig = field(default_factory=FleetConfig)
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    params: ParamsConfig = field(default_factory=ParamsConfig)
    variance: VarianceConfig = field(default_factory=VarianceConfig)
    data: DataConfig = field(default_factory=DataConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    rl: RlConfig = field(default_factory=RlConfig)
    seeds: SeedsConfig = field(default_factory=SeedsConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    freeze_model: bool = False
    name: str = "experiment"

    @classmethod
    def from_dict(cls, data: dict, require_seeds: bool = True) -> ExperimentConfig:
        if not isinstance(data, dict):
            raise ConfigError("config root must be a mapping")
        unknown = sorted(set(data) - set(_SECTIONS) - {"freeze_model", "name"})
        if unknown:
            raise ConfigError(f"unknown top-level keys {unknown}")
        if require_seeds:
            seeds = data.get("seeds") or {}
            missing = [s for s in _REQUIRED_SEEDS if s not in seeds]
            if missing:
                raise ConfigError(f"seeds must be explicit; missing {missing}")
        kwargs = {k: _section(c, data.get(k), k) for k, c in _SECTIONS.items()}
        cfg = cls(**kwargs, freeze_model=bool(data.get("freeze_model", False)),
                  name=str(data.get("name", "experiment")))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        try:
            data = yaml.safe_load(Path(path).read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **sections) -> ExperimentConfig:
        """Copy with some fields of some sections overridden: ``replace(rl={"epsilon": 0})``."""
        data = self.to_dict()
        for sec, vals in sections.items():
            if isinstance(vals, dict) and isinstance(data.get(sec), dict):
                for k, v in vals.items():
                    if isinstance(v, dict) and isinstance(data[sec].get(k), dict):
                        data[sec][k].update(v)
                    else:
                        data[sec][k] = v
            else:
                data[sec] = vals
        return ExperimentConfig.from_dict(data)

    def validate(self):
        n = self.fleet.high + self.fleet.mid + self.fleet.low
        GlobalParams(self.params.batch_size, self.params.local_epochs, self.params.participants,
                     max(n, 1), self.params.target_accuracy, self.params.max_rounds,
                     self.params.local_lr)
        DataMode(self.data.non_iid_fraction)
        self.variance.spec()
        if not self.data.concentration > 0:
            raise ConfigError("data.concentration must be positive")


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------

@dataclass
class RoundRecord:
    round: int
    t_round: float
    energy_global: float
    accuracy: float
    reward: float
    n_participants: int
    explored: bool
    episode: int = 0
    participants: tuple = ()  # ((device id, "CPU@22"), ...)
    energy_local: dict = field(default_factory=dict)
    rewards: dict = field(default_factory=dict)
    excluded: tuple = ()


CSV_HEADER = ["round", "t_round_s", "energy_global_j", "accuracy_pct", "reward",
              "n_participants", "explored"]


def write_records_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in records:
            w.writerow([r.round, repr(float(r.t_round)), repr(float(r.energy_global)),
                        repr(float(r.accuracy)), repr(float(r.reward)), r.n_participants,
                        int(r.explored)])


def read_records_csv(path) -> list[RoundRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ConfigError(f"{path}: unexpected header {reader.fieldnames}")
        return [RoundRecord(int(row["round"]), float(row["t_round_s"]),
                            float(row["energy_global_j"]), float(row["accuracy_pct"]),
                            float(row["reward"]), int(row["n_participants"]),
                            bool(int(row["explored"]))) for row in reader]


# ---------------------------------------------------------------------------
# Convergence and PPW
# ---------------------------------------------------------------------------

def detect_convergence(records, target_accuracy: float, patience: int = 5):
    """Index of the first round that starts a run of ``patience`` rounds at or above target."""
    streak = 0
    for i, r in enumerate(records):
        streak = streak + 1 if r.accuracy >= target_accuracy else 0
        if streak == patience:
            return records[i - patience + 1].round
    return None


@dataclass
class Summary:
    rounds: int
    converged: bool
    convergence_round: int | None
    time_to_convergence_s: float | None
    total_time_s: float
    total_energy_j: float
    mean_power_w: float
    mean_t_round_s: float
    final_accuracy: float
    ppw: float | None
    ppw_ratio: float | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def summarize(records, target_accuracy: float = 90.0, patience: int = 5,
              baseline=None) -> Summary:
    """Performance-per-watt = (1 / time to convergence) / mean power.

    Mean power is total fleet energy over total simulated time. With
    ``baseline`` records the PPW ratio against that run is filled in.
    """
    if not records:
        raise ValueError("summarize needs at least one record")
    conv = detect_convergence(records, target_accuracy, patience)
    total_time = sum(r.t_round for r in records)
    total_energy = sum(r.energy_global for r in records)
    mean_power = total_energy / total_time
    t_conv, ppw = None, None
    if conv is not None:
        t_conv = sum(r.t_round for r in records if r.round <= conv)
        ppw = (1.0 / t_conv) / mean_power
    summary = Summary(len(records), conv is not None, conv, t_conv, total_time, total_energy,
                      mean_power, total_time / len(records), records[-1].accuracy, ppw)
    if baseline is not None:
        base = summarize(baseline, target_accuracy, patience)
        if ppw is not None and base.ppw is not None:
            summary.ppw_ratio = ppw / base.ppw
    return summary


# ---------------------------------------------------------------------------
# Round engine
# ---------------------------------------------------------------------------

@dataclass
class RoundOutcome:
    choices: dict  # device id -> ExecTargetChoice
    kept: tuple
    excluded: tuple
    t_round: float
    model: ModelState
    accuracy: float
    energy: object
    rewards: dict  # participant id -> reward

    @property
    def round_reward(self) -> float:
        return float(np.mean([self.rewards[d] for d in sorted(self.rewards)]))


def _seed_words(*parts) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


class RoundSnapshot:
    """One aggregation round frozen at its start: model, conditions and previous accuracy.

    ``outcome`` plays the round for any participant/target assignment without
    mutating anything, so the live loop and the exhaustive oracle share it.
    """

    def __init__(self, exp: Experiment, episode_tag: int, round_idx: int, model: ModelState,
                 conditions: dict, accuracy_prev: float):
        self.exp = exp
        self.episode_tag = episode_tag
        self.round_idx = round_idx
        self.model = model
        self.conditions = conditions
        self.accuracy_prev = accuracy_prev
        self._updates = {}
        self._accuracy = {}

    def device_ids(self):
        return self.exp.fleet.ids()

    def candidate_targets(self, device_id):
        profile = self.exp.fleet[device_id]
        seen = []
        for a in range(len(self.exp.action_space)):
            if self.exp.valid_actions[device_id][a]:
                t = self.exp.action_space.resolve(profile, a)
                if t not in seen:
                    seen.append(t)
        return seen

    def local_update(self, device_id):
        upd = self._updates.get(device_id)
        if upd is None:
            exp = self.exp
            seed = _seed_words(exp.config.seeds.train, self.episode_tag,
                               0 if exp.config.freeze_model else self.round_idx, device_id)
            p = exp.config.params
            upd = local_train(self.model, exp.shard_data[device_id], exp.nn.trainable,
                              p.batch_size, p.local_epochs, p.local_lr, seed, device_id)
            self._updates[device_id] = upd
        return upd

    def aggregated(self, kept):
        key = tuple(sorted(kept))
        hit = self._accuracy.get(key)
        if hit is None:
            model = aggregate(self.model, [self.local_update(d) for d in key],
                              weighted=not self.exp.config.params.unweighted_average)
            hit = self._accuracy[key] = (model, evaluate(self.exp.nn.trainable, model,
                                                         self.exp.test_set))
        return hit

    def outcome(self, choices: dict, exclude_stragglers: bool = False) -> RoundOutcome:
        exp = self.exp
        timing = simulate_timing(choices, self.conditions, exp.nn, exp.global_params, exp.fleet,
                                 exp.shard_sizes)
        totals = {d: timing.total(d) for d in choices}
        kept = sorted(choices)
        if exclude_stragglers and len(kept) > 1:
            deadline = exp.config.params.straggler_deadline * statistics.median(totals.values())
            kept = [d for d in kept if totals[d] <= deadline]
        excluded = tuple(d for d in sorted(choices) if d not in kept)
        t_round = max(totals[d] for d in kept)

        model, accuracy = self.aggregated(kept)

        traces = {}
        for profile in exp.fleet:
            d = profile.id
            band = self.conditions[d].network.signal_band
            if d in choices:
                t_comp = min(timing.t_comp[d], t_round)
                t_tx = min(timing.t_comm[d], max(t_round - t_comp, 0.0))
                traces[d] = participant_trace(profile, choices[d], t_comp, t_tx, t_round, band)
            else:
                traces[d] = idle_trace(profile, t_round)
        report = energy_rewards(traces, choices, exp.fleet)

        rl = exp.config.rl
        rewards = {}
        for d in sorted(choices):
            inputs = RewardInputs(report.r_energy_global, report.local[d], accuracy,
                                  self.accuracy_prev, rl.alpha, rl.beta)
            rewards[d] = compute_reward(inputs, rl.energy_scale)
        return RoundOutcome(dict(choices), tuple(kept), excluded, t_round, model, accuracy,
                            report, rewards)

    def round_reward(self, choices: dict) -> float:
        return self.outcome(choices).round_reward


# ---------------------------------------------------------------------------
# Experiment
# ---------------------------------------------------------------------------

_BASELINES = {Policy.RANDOM, Policy.POWER, Policy.PERFORMANCE, Policy.CLUSTER_FIXED}


class Experiment:
    """Builds the fleet, data and controller state for one config and runs it.

    The Q store persists across ``run`` calls and across warm-up episodes.
    """

    def __init__(self, config: ExperimentConfig, qstore: QStore | None = None):
        self.config = config
        c = config
        self.fleet = build_fleet(FleetSpec(c.fleet.high, c.fleet.mid, c.fleet.low))
        self.nn = describe_nn(c.workload.nn, c.workload.num_features, c.workload.num_classes,
                              tuple(c.workload.hidden))
        self.global_params = GlobalParams(
            c.params.batch_size, c.params.local_epochs, c.params.participants, len(self.fleet),
            c.params.target_accuracy, c.params.max_rounds, c.params.local_lr)
        self.policy = Policy(c.policy.name)
        self.train_set, self.test_set = self._load_data()
        if self.train_set.X.shape[1] != c.workload.num_features:
            raise ConfigError("dataset feature count does not match workload.num_features")
        self.shards = partition_dataset(self.train_set.y, self.fleet,
                                        DataMode(c.data.non_iid_fraction),
                                        c.data.concentration, c.seeds.data)
        self.shard_data = {d: self.train_set.subset(idx) for d, idx in enumerate(self.shards.indices)}
        self.shard_sizes = {d: len(idx) for d, idx in enumerate(self.shards.indices)}

        kinds = [TargetKind.CPU] + ([TargetKind.GPU] if c.fleet.gpu else [])
        self.action_space = ActionSpace.build(kinds, c.fleet.exposed_steps)
        self.valid_actions = {d.id: self.action_space.valid_mask(d) for d in self.fleet}
        labels = [f"{k.name}:{lvl}" for k, lvl in self.action_space.actions]
        tiers = {d.id: d.tier for d in self.fleet}
        if qstore is None and c.rl.init_qstore:
            qstore = QStore.load(c.rl.init_qstore, tiers, labels)
        if qstore is None:
            qstore = QStore(len(self.action_space), c.rl.qstore_mode, c.seeds.rl, tiers,
                            action_labels=labels)
        if qstore.n_actions != len(self.action_space):
            raise ConfigError("Q store action count does not match the action space")
        self.qstore = qstore
        self.rng = np.random.default_rng(np.random.SeedSequence([c.seeds.rl, 1]))
        self.fixed_conditions = self._fixed_conditions()
        self.warmup_records: list[RoundRecord] = []

    def _load_data(self):
        c = self.config.workload
        ds = c.dataset
        if ds.source == "synthetic":
            return make_gaussian_mixture(ds.n_train, ds.n_test, c.num_features, c.num_classes,
                                         ds.separation, ds.noise, self.config.seeds.data,
                                         ds.condition)
        if ds.source == "idx":
            return (load_idx_dataset(ds.train_images, ds.train_labels, c.num_classes),
                    load_idx_dataset(ds.test_images, ds.test_labels, c.num_classes))
        return (read_csv_dataset(ds.train_csv, c.num_classes),
                read_csv_dataset(ds.test_csv, c.num_classes))

    def _fixed_conditions(self):
        fixed = self.config.variance.fixed
        if fixed is None:
            return None
        out = {}
        for d in self.fleet.ids():
            entry = fixed.get(d, fixed.get(str(d)))
            if entry is None:
                raise ConfigError(f"variance.fixed has no entry for device {d}")
            unknown = set(entry) - {"cpu_util", "mem_util", "bandwidth_mbps"}
            if unknown:
                raise ConfigError(f"variance.fixed[{d}]: unknown keys {sorted(unknown)}")
            out[d] = DeviceConditions(
                InterferenceState(float(entry.get("cpu_util", 0.0)), float(entry.get("mem_util", 0.0))),
                NetworkState(float(entry.get("bandwidth_mbps", self.config.variance.bw_mean))))
        return out

    def conditions(self, episode_tag: int, round_idx: int) -> dict:
        if self.fixed_conditions is not None:
            return self.fixed_conditions
        return sample_round_conditions(self.config.variance.spec(), self.fleet, round_idx,
                                       (self.config.seeds.variance, episode_tag))

    def initial_model(self, episode_tag: int) -> ModelState:
        rng = np.random.default_rng(np.random.SeedSequence([self.config.seeds.train, episode_tag, 7]))
        return ModelState(self.nn.trainable.init_params(rng), 0)

    # -- policies -----------------------------------------------------------

    def choose(self, snapshot: RoundSnapshot) -> Selection:
        k = self.global_params.participants
        if self.policy == Policy.AUTOFL:
            g, locals_ = featurize(self.nn, self.global_params, snapshot.conditions, self.shards)
            snapshot.states = (g, locals_)
            return select(self.qstore, g, locals_, k, self.config.rl.epsilon, self.rng,
                          self.valid_actions, self.fleet, self.action_space)
        if self.policy == Policy.ORACLE:
            best = oracle_search(snapshot, k).choices
            return Selection(self._as_choices(best), False)
        picked = baseline_select(self.policy, self.fleet, k, self.rng, self.config.policy.cluster)
        return Selection(self._as_choices(picked), False)

    def _as_choices(self, targets: dict) -> dict:
        return {d: (ActionChoice(True, self._action_of(d, targets[d]), targets[d])
                    if d in targets else ActionChoice(False)) for d in self.fleet.ids()}

    def _action_of(self, device_id, target):
        profile = self.fleet[device_id]
        for a in range(len(self.action_space)):
            if self.valid_actions[device_id][a] and self.action_space.resolve(profile, a) == target:
                return a
        return 0

    # -- loop ---------------------------------------------------------------

    def run_episode(self, episode_tag: int = 0, episode_label: int = 0) -> list[RoundRecord]:
        c = self.config
        model = self.initial_model(episode_tag)
        acc_prev = evaluate(self.nn.trainable, model, self.test_set)
        records: list[RoundRecord] = []
        streak = 0
        for t in range(c.params.max_rounds):
            snap = RoundSnapshot(self, episode_tag, t, model, self.conditions(episode_tag, t),
                                 acc_prev)
            selection = self.choose(snap)
            targets = {d: ch.target for d, ch in selection.choices.items() if ch.selected}
            out = snap.outcome(targets, exclude_stragglers=self.policy in _BASELINES)

            if self.policy == Policy.AUTOFL:
                self._learn(snap, selection, out, episode_tag, t)

            records.append(RoundRecord(
                round=t, t_round=out.t_round, energy_global=out.energy.r_energy_global,
                accuracy=out.accuracy, reward=out.round_reward, n_participants=len(targets),
                explored=selection.explored, episode=episode_label,
                participants=tuple((d, str(targets[d])) for d in sorted(targets)),
                energy_local=dict(out.energy.local), rewards=dict(out.rewards),
                excluded=out.excluded))
            if not c.freeze_model:
                model, acc_prev = out.model, out.accuracy
            streak = streak + 1 if out.accuracy >= c.params.target_accuracy else 0
            if streak >= c.params.patience and not c.freeze_model:
                break
        return records

    def _learn(self, snap, selection, out, episode_tag, t):
        rl = self.config.rl
        g, locals_ = snap.states
        next_cond = self.conditions(episode_tag, 0 if self.config.freeze_model else t + 1)
        g2, next_locals = featurize(self.nn, self.global_params, next_cond, self.shards)
        for d in selection.participants:
            owner = self.qstore.owner(d)
            q_update(self.qstore, owner, (g, locals_[d]), selection.choices[d].action,
                     out.rewards[d], (g2, next_locals[d]), rl.gamma, rl.mu)

    def run(self) -> list[RoundRecord]:
        """Warm-up episodes (records kept in ``warmup_records``), then the measured episode."""
        w = self.config.rl.warmup_episodes if self.policy == Policy.AUTOFL else 0
        self.warmup_records = []
        for i in range(w):
            self.warmup_records += self.run_episode(episode_tag=i + 1, episode_label=i - w)
        return self.run_episode(episode_tag=0, episode_label=0)


def run_experiment(config: ExperimentConfig, qstore: QStore | None = None) -> list[RoundRecord]:
    return Experiment(config, qstore).run()


def run_and_write(config: ExperimentConfig, baseline_records=None):
    """Run one config and write whatever outputs it names; returns (records, summary)."""
    exp = Experiment(config)
    records = exp.run()
    out = config.output
    if out.records_csv:
        Path(out.records_csv).parent.mkdir(parents=True, exist_ok=True)
        write_records_csv(out.records_csv, records)
    summary = None
    if records:
        summary = summarize(records, config.params.target_accuracy, config.params.patience,
                            baseline_records)
    if out.summary_json:
        Path(out.summary_json).parent.mkdir(parents=True, exist_ok=True)
        payload = {"name": config.name, "policy": config.policy.name,
                   "summary": summary.to_dict() if summary else None}
        Path(out.summary_json).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    if out.qstore and exp.policy == Policy.AUTOFL:
        exp.qstore.save(out.qstore)
    return records, summary


# ---------------------------------------------------------------------------
# Reward-trace analysis
# ---------------------------------------------------------------------------

def rolling_mean(values, window: int) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if len(v) < window:
        return np.array([])
    c = np.concatenate([[0.0], np.cumsum(v)])
    return (c[window:] - c[:-window]) / window


def reward_stabilization_round(rewards, window: int = 20, tolerance: float = 0.10):
    """First round after which the ``window``-round rolling mean varies by less than
    ``tolerance`` of its overall range for ``window`` consecutive rounds.

    Returns the round index (end of the first stable stretch's opening
    window) or None if the trace never settles.
    """
    m = rolling_mean(rewards, window)
    if len(m) < window:
        return None
    span = float(m.max() - m.min())
    if span == 0.0 or not math.isfinite(span):
        return window - 1
    for i in range(len(m) - window + 1):
        seg = m[i:i + window]
        if (seg.max() - seg.min()) / span < tolerance:
            return i + window - 1
    return None
