"""Tabular Q-learning participant/target selector and the baseline selection policies.

State is a (global, local) pair of discretized features. The global part
describes the workload (layer mix, B, E, K); the local part describes one
device's co-runner load, network and label coverage. Q values are indexed by
(owner, global state, local state) and hold one entry per execution-target
action. Owners are devices, or device tiers when tables are shared.
"""

from __future__ import annotations

import enum
import io
import itertools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from flsim.device import ExecTargetChoice, Tier
from flsim.errors import ConfigError, ContractViolation, InfeasibleInstance
from flsim.variance import WEAK_SIGNAL_MBPS
from flsim.workload import classes_present


# ---------------------------------------------------------------------------
# Discretization
# ---------------------------------------------------------------------------

class ConvBin(enum.IntEnum):
    SMALL = 0
    MEDIUM = 1
    LARGE = 2
    LARGER = 3


class FcBin(enum.IntEnum):
    SMALL = 0
    LARGE = 1


class Level(enum.IntEnum):
    SMALL = 0
    MEDIUM = 1
    LARGE = 2


class UtilBin(enum.IntEnum):
    NONE = 0
    SMALL = 1
    MEDIUM = 2
    LARGE = 3


class NetBin(enum.IntEnum):
    REGULAR = 0
    BAD = 1


def conv_bin(n: int) -> ConvBin:
    if n < 10:
        return ConvBin.SMALL
    if n < 20:
        return ConvBin.MEDIUM
    # [30, 40) has no bin of its own; it stays in LARGE
    if n < 40:
        return ConvBin.LARGE
    return ConvBin.LARGER


def fc_bin(n: int) -> FcBin:
    return FcBin.SMALL if n < 10 else FcBin.LARGE


def level_bin(x: float, small_below: float, medium_below: float) -> Level:
    if x < small_below:
        return Level.SMALL
    if x < medium_below:
        return Level.MEDIUM
    return Level.LARGE


def util_bin(u: float) -> UtilBin:
    if u <= 0.0:
        return UtilBin.NONE
    if u < 0.25:
        return UtilBin.SMALL
    if u < 0.75:
        return UtilBin.MEDIUM
    return UtilBin.LARGE


def net_bin(bandwidth_mbps: float) -> NetBin:
    return NetBin.BAD if bandwidth_mbps <= WEAK_SIGNAL_MBPS else NetBin.REGULAR


def data_bin(class_fraction: float) -> Level:
    if class_fraction < 0.25:
        return Level.SMALL
    if class_fraction < 1.0:
        return Level.MEDIUM
    return Level.LARGE


class GlobalState(NamedTuple):
    conv: ConvBin
    fc: FcBin
    rc: Level
    batch: Level
    epochs: Level
    participants: Level


class LocalState(NamedTuple):
    co_cpu: UtilBin
    co_mem: UtilBin
    network: NetBin
    data: Level


GLOBAL_STATE_COUNT = len(ConvBin) * len(FcBin) * len(Level) ** 4
LOCAL_STATE_COUNT = len(UtilBin) ** 2 * len(NetBin) * len(Level)


def featurize_global(nn, params) -> GlobalState:
    return GlobalState(
        conv_bin(nn.conv_layers),
        fc_bin(nn.fc_layers),
        level_bin(nn.rc_layers, 5, 10),
        level_bin(params.batch_size, 8, 32),
        level_bin(params.local_epochs, 5, 10),
        level_bin(params.participants, 10, 50),
    )


def featurize_local(cond, shards, device: int) -> LocalState:
    frac = classes_present(shards, device) / shards.num_classes
    return LocalState(
        util_bin(cond.interference.cpu_util),
        util_bin(cond.interference.mem_util),
        net_bin(cond.network.bandwidth_mbps),
        data_bin(frac),
    )


def featurize(nn, params, conditions, shards):
    """Returns (global state, {device id: local state})."""
    g = featurize_global(nn, params)
    return g, {d: featurize_local(c, shards, d) for d, c in sorted(conditions.items())}


# ---------------------------------------------------------------------------
# Q store
# ---------------------------------------------------------------------------

class QStoreMode(enum.Enum):
    PER_DEVICE = "per_device"
    SHARED_PER_TIER = "shared_per_tier"


_STATE_ENUMS = (ConvBin, FcBin, Level, Level, Level, Level)
_LOCAL_ENUMS = (UtilBin, UtilBin, NetBin, Level)


class QStore:
    """Lazily materialized Q tables.

    An entry that was never written reads as a uniform draw from
    ``[0, init_high)`` seeded by ``init_seed`` and the entry's key, so the
    value does not depend on the order in which entries are first touched.
    """

    def __init__(self, n_actions: int, mode=QStoreMode.PER_DEVICE, init_seed: int = 0,
                 device_tiers=None, init_high: float = 0.01, action_labels=None):
        self.n_actions = int(n_actions)
        self.mode = QStoreMode(mode)
        self.init_seed = int(init_seed)
        self.init_high = float(init_high)
        self.device_tiers = dict(device_tiers or {})
        self.action_labels = list(action_labels or [str(a) for a in range(self.n_actions)])
        if self.mode == QStoreMode.SHARED_PER_TIER and not self.device_tiers:
            raise ConfigError("shared-per-tier Q store needs the device -> tier map")
        self._tables: dict = {}

    def owner(self, device_id: int) -> int:
        if self.mode == QStoreMode.SHARED_PER_TIER:
            return int(self.device_tiers[device_id])
        return int(device_id)

    def _init_values(self, key) -> np.ndarray:
        owner, g, l = key
        spawn = (0 if self.mode == QStoreMode.PER_DEVICE else 1, owner, *map(int, g), *map(int, l))
        rng = np.random.default_rng(np.random.SeedSequence(self.init_seed, spawn_key=spawn))
        return rng.uniform(0.0, self.init_high, self.n_actions)

    def row(self, owner: int, g, l) -> np.ndarray:
        key = (owner, tuple(g), tuple(l))
        vals = self._tables.get(key)
        if vals is None:
            vals = self._tables[key] = self._init_values(key)
        return vals

    def device_row(self, device_id: int, g, l) -> np.ndarray:
        return self.row(self.owner(device_id), g, l)

    def __len__(self):
        return len(self._tables)

    def items(self):
        return self._tables.items()

    # -- text snapshot -----------------------------------------------------

    def _owner_name(self, owner: int) -> str:
        if self.mode == QStoreMode.SHARED_PER_TIER:
            return Tier(owner).name
        return str(owner)

    def dumps(self) -> str:
        out = io.StringIO()
        out.write(f"# qstore mode={self.mode.value} n_actions={self.n_actions} "
                  f"init_seed={self.init_seed} init_high={self.init_high!r}\n")
        out.write("# owner\tglobal\tlocal\taction\tvalue\n")
        for (owner, g, l), vals in sorted(self._tables.items()):
            gs = ",".join(e(v).name for e, v in zip(_STATE_ENUMS, g))
            ls = ",".join(e(v).name for e, v in zip(_LOCAL_ENUMS, l))
            for a, v in enumerate(vals):
                out.write(f"{self._owner_name(owner)}\t{gs}\t{ls}\t{self.action_labels[a]}\t{float(v)!r}\n")
        return out.getvalue()

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str, device_tiers=None, action_labels=None) -> QStore:
        lines = text.splitlines()
        if not lines or not lines[0].startswith("# qstore"):
            raise ConfigError("not a Q-store snapshot")
        meta = dict(tok.split("=", 1) for tok in lines[0][len("# qstore"):].split())
        store = cls(int(meta["n_actions"]), QStoreMode(meta["mode"]), int(meta["init_seed"]),
                    device_tiers=device_tiers, init_high=float(meta["init_high"]),
                    action_labels=action_labels)
        label_idx = {lab: i for i, lab in enumerate(store.action_labels)}
        for ln in lines[1:]:
            if not ln.strip() or ln.startswith("#"):
                continue
            owner_s, gs, ls, act, val = ln.split("\t")
            if store.mode == QStoreMode.SHARED_PER_TIER:
                owner = int(Tier[owner_s])
            else:
                owner = int(owner_s)
            g = GlobalState(*(e[n] for e, n in zip(_STATE_ENUMS, gs.split(","))))
            l = LocalState(*(e[n] for e, n in zip(_LOCAL_ENUMS, ls.split(","))))
            if act not in label_idx:
                raise ConfigError(f"unknown action label {act!r} in Q-store snapshot")
            store.row(owner, g, l)[label_idx[act]] = float(val)
        return store

    @classmethod
    def load(cls, path, device_tiers=None, action_labels=None) -> QStore:
        return cls.loads(Path(path).read_text(), device_tiers, action_labels)


# ---------------------------------------------------------------------------
# Selection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ActionChoice:
    selected: bool
    action: int | None = None
    target: ExecTargetChoice | None = None

    def __post_init__(self):
        if self.selected != (self.action is not None):
            raise ContractViolation("an action is present iff the device is selected")


@dataclass
class Selection:
    choices: dict  # device id -> ActionChoice
    explored: bool

    @property
    def participants(self) -> list[int]:
        return sorted(d for d, c in self.choices.items() if c.selected)


def select(qstore: QStore, s_global, s_locals, k: int, epsilon: float, rng,
           valid_actions=None, fleet=None, action_space=None) -> Selection:
    """Epsilon-greedy choice of K participants and one action each.

    One coin per round decides between exploring (uniform devices, uniform
    actions) and exploiting (top-K devices by their best Q value, ties broken
    by a random shuffle; per device the argmax action, lowest index on ties).
    """
    devices = sorted(s_locals)
    if not 1 <= k <= len(devices):
        raise ContractViolation(f"need 1 <= K <= N, got K={k}, N={len(devices)}")
    if not 0.0 <= epsilon <= 1.0:
        raise ContractViolation("epsilon must be in [0, 1]")

    def mask(d):
        if valid_actions is None:
            return np.ones(qstore.n_actions, dtype=bool)
        return valid_actions[d]

    chosen: dict[int, int] = {}
    explored = bool(rng.random() < epsilon)
    if explored:
        picks = rng.choice(len(devices), size=k, replace=False)
        for i in sorted(int(p) for p in picks):
            d = devices[i]
            allowed = np.flatnonzero(mask(d))
            chosen[d] = int(allowed[rng.integers(len(allowed))])
    else:
        best_action, score = {}, {}
        for d in devices:
            q = np.where(mask(d), qstore.device_row(d, s_global, s_locals[d]), -np.inf)
            a = int(np.argmax(q))
            best_action[d], score[d] = a, float(q[a])
        order = [devices[i] for i in rng.permutation(len(devices))]
        order.sort(key=lambda d: -score[d])
        for d in order[:k]:
            chosen[d] = best_action[d]

    choices = {}
    for d in devices:
        if d in chosen:
            target = None
            if fleet is not None and action_space is not None:
                target = action_space.resolve(fleet[d], chosen[d])
            choices[d] = ActionChoice(True, chosen[d], target)
        else:
            choices[d] = ActionChoice(False)
    return Selection(choices, explored)


# ---------------------------------------------------------------------------
# Reward and update
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RewardInputs:
    r_energy_global: float
    r_energy_local: float
    r_accuracy: float
    r_accuracy_prev: float
    alpha: float = 1.0
    beta: float = 2.0

    def __post_init__(self):
        for acc in (self.r_accuracy, self.r_accuracy_prev):
            if not 0.0 <= acc <= 100.0:
                raise ContractViolation(f"accuracy {acc} outside [0, 100]")
        if self.alpha < 0 or self.beta < 0:
            raise ContractViolation("alpha and beta must be >= 0")


def compute_reward(inputs: RewardInputs, energy_scale: float = 1.0) -> float:
    """Accuracy penalty when the round did not help; otherwise energy cost against accuracy gain."""
    gain = inputs.r_accuracy - inputs.r_accuracy_prev
    if gain <= 0:
        return inputs.r_accuracy - 100.0
    return (-inputs.r_energy_global / energy_scale - inputs.r_energy_local / energy_scale
            + inputs.alpha * inputs.r_accuracy + inputs.beta * gain)


def q_update(qstore: QStore, owner: int, state, action: int, reward: float, next_state,
             gamma: float = 0.9, mu: float = 0.1) -> float:
    """One Bellman step towards ``reward + mu * max_a' Q(next_state, a')``."""
    if not math.isfinite(reward):
        raise ContractViolation(f"non-finite reward {reward!r}")
    if not 0.0 < gamma <= 1.0 or not 0.0 <= mu < 1.0:
        raise ContractViolation("need gamma in (0, 1] and mu in [0, 1)")
    row = qstore.row(owner, *state)
    best_next = float(np.max(qstore.row(owner, *next_state)))
    old = float(row[action])
    row[action] = old + gamma * (reward + mu * best_next - old)
    return float(row[action])


# ---------------------------------------------------------------------------
# Baseline policies
# ---------------------------------------------------------------------------

class Policy(enum.Enum):
    AUTOFL = "autofl"
    RANDOM = "random"
    POWER = "power"
    PERFORMANCE = "performance"
    CLUSTER_FIXED = "cluster_fixed"
    ORACLE = "oracle"


# (high, mid, low) participants per characterization cluster
CLUSTERS = {
    "C1": (20, 0, 0),
    "C2": (15, 5, 0),
    "C3": (10, 5, 5),
    "C4": (5, 10, 5),
    "C5": (5, 5, 10),
    "C6": (0, 5, 15),
    "C7": (0, 0, 20),
}


def _ranked(devices, key, rng):
    order = [devices[i] for i in rng.permutation(len(devices))]
    order.sort(key=key)
    return order


def baseline_select(policy, fleet, k: int, rng, cluster=None) -> dict:
    """Participants for a non-learning policy, each on its CPU at the top DVFS step."""
    policy = Policy(policy)
    devices = list(fleet)
    if not 1 <= k <= len(devices):
        raise ContractViolation(f"need 1 <= K <= N, got K={k}, N={len(devices)}")
    if policy == Policy.RANDOM:
        picked = [devices[i] for i in rng.choice(len(devices), size=k, replace=False)]
    elif policy == Policy.POWER:
        picked = _ranked(devices, lambda d: d.peak_power(), rng)[:k]
    elif policy == Policy.PERFORMANCE:
        picked = _ranked(devices, lambda d: -max(d.base_throughput.values()), rng)[:k]
    elif policy == Policy.CLUSTER_FIXED:
        counts = CLUSTERS.get(cluster, cluster) if isinstance(cluster, str) else cluster
        if counts is None or len(counts) != 3:
            raise ConfigError(f"unknown cluster {cluster!r}")
        picked = []
        for tier, n in zip(Tier, counts):
            pool = [d for d in devices if d.tier == tier]
            if n > len(pool):
                raise ConfigError(
                    f"cluster {cluster!r} needs {n} {tier.name} devices, fleet has {len(pool)}")
            picked += [pool[i] for i in rng.choice(len(pool), size=n, replace=False)]
    else:
        raise ConfigError(f"{policy.value} is not a baseline policy")
    return {d.id: d.default_target() for d in sorted(picked, key=lambda d: d.id)}


# ---------------------------------------------------------------------------
# Exhaustive oracle
# ---------------------------------------------------------------------------

ORACLE_BUDGET = 10 ** 6


@dataclass
class OracleResult:
    choices: dict  # device id -> ExecTargetChoice
    reward: float
    evaluations: int


def oracle_search(snapshot, k: int, budget: int = ORACLE_BUDGET) -> OracleResult:
    """Try every K-subset and every target assignment against one frozen round.

    ``snapshot`` must provide ``device_ids()``, ``candidate_targets(device_id)``
    and ``round_reward(choices)``; the best reward wins, first found on ties.
    """
    ids = list(snapshot.device_ids())
    if not 1 <= k <= len(ids):
        raise ContractViolation(f"need 1 <= K <= N, got K={k}, N={len(ids)}")
    targets = {d: list(snapshot.candidate_targets(d)) for d in ids}
    widest = max(len(t) for t in targets.values())
    size = math.comb(len(ids), k) * widest ** k
    if size > budget:
        raise InfeasibleInstance(
            f"oracle would enumerate up to {size:.3g} combinations (budget {budget}); "
            "use the learned policy for instances this large")
    best, best_reward, evals = None, -math.inf, 0
    for subset in itertools.combinations(ids, k):
        for assignment in itertools.product(*(targets[d] for d in subset)):
            choices = dict(zip(subset, assignment))
            r = snapshot.round_reward(choices)
            evals += 1
            if r > best_reward:
                best, best_reward = choices, r
    return OracleResult(best, best_reward, evals)
