"""FedAvg mechanics: local SGD, weighted aggregation, evaluation and round timing."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from flsim.device import effective_throughput
from flsim.errors import ConfigError, ContractViolation, TrainingDivergence


@dataclass(frozen=True)
class ModelState:
    params: np.ndarray
    version: int = 0

    def __post_init__(self):
        if not np.all(np.isfinite(self.params)):
            raise ContractViolation("model parameters must be finite")


@dataclass(frozen=True)
class LocalUpdate:
    device_id: int
    delta: np.ndarray
    sample_count: int


@dataclass(frozen=True)
class RoundTiming:
    t_comp: dict
    t_comm: dict
    t_round: float

    def total(self, device_id: int) -> float:
        return self.t_comp[device_id] + self.t_comm[device_id]


def local_train(global_state: ModelState, shard, body, batch_size: int, epochs: int,
                lr: float, seed, device_id: int = -1) -> LocalUpdate:
    """E epochs of minibatch SGD from the global parameters; returns the parameter delta."""
    n = len(shard.y)
    if n == 0:
        raise ContractViolation(f"device {device_id} has an empty shard")
    if batch_size < 1 or epochs < 1:
        raise ContractViolation("batch_size and epochs must be >= 1")
    rng = np.random.default_rng(seed)
    params = global_state.params.copy()
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            batch = order[start:start + batch_size]
            loss, grad = body.loss_and_grad(params, shard.X[batch], shard.y[batch])
            if not np.isfinite(loss):
                raise TrainingDivergence(device_id, loss)
            params -= lr * grad
    if not np.all(np.isfinite(params)):
        raise TrainingDivergence(device_id, float("nan"))
    return LocalUpdate(device_id, params - global_state.params, n)


def aggregate(global_state: ModelState, updates, weighted: bool = True) -> ModelState:
    """Apply the (sample-weighted) mean of the deltas, reduced in device-id order."""
    updates = sorted(updates, key=lambda u: u.device_id)
    if not updates:
        raise ContractViolation("aggregate needs at least one update")
    size = global_state.params.shape
    for u in updates:
        if u.delta.shape != size:
            raise ContractViolation(
                f"update from device {u.device_id} has shape {u.delta.shape}, expected {size}")
        if u.sample_count < 1:
            raise ContractViolation(f"update from device {u.device_id} has no samples")
    if weighted:
        total = float(sum(u.sample_count for u in updates))
        weights = [u.sample_count / total for u in updates]
    else:
        weights = [1.0 / len(updates)] * len(updates)
    step = np.zeros(size)
    for w, u in zip(weights, updates):
        step += w * u.delta
    return ModelState(global_state.params + step, global_state.version + 1)


def evaluate(body, model: ModelState, test_set) -> float:
    """Top-1 accuracy in percent; argmax ties go to the lowest class index."""
    if len(test_set.y) == 0:
        raise ContractViolation("empty test set")
    pred = np.argmax(body.logits(model.params, test_set.X), axis=1)
    return 100.0 * float(np.mean(pred == test_set.y))


def simulate_timing(participants, conditions, nn, params, fleet, shard_sizes) -> RoundTiming:
    """Analytic compute and upload latency; the round lasts as long as its slowest participant.

    ``participants`` maps device id to its ExecTargetChoice.
    """
    if not participants:
        raise ContractViolation("a round needs at least one participant")
    t_comp, t_comm = {}, {}
    for dev_id in sorted(participants):
        cond = conditions[dev_id]
        thr = effective_throughput(fleet[dev_id], participants[dev_id], cond.interference)
        work = nn.flops_per_sample * shard_sizes[dev_id] * params.local_epochs
        t_comp[dev_id] = work / thr
        t_comm[dev_id] = nn.update_bytes * 8 / (cond.network.bandwidth_mbps * 1e6)
    t_round = max(t_comp[d] + t_comm[d] for d in t_comp)
    return RoundTiming(t_comp, t_comm, t_round)


# ---------------------------------------------------------------------------
# Checkpoints: b"FLCK" | u32 version | u64 length | little-endian float32 params
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"FLCK"
_HEADER = struct.Struct("<4sIQ")


def save_checkpoint(path, model: ModelState) -> None:
    body = np.asarray(model.params, dtype="<f4").tobytes()
    Path(path).write_bytes(_HEADER.pack(CHECKPOINT_MAGIC, model.version, model.params.size) + body)


def load_checkpoint(path) -> ModelState:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ConfigError(f"{path}: truncated checkpoint")
    magic, version, length = _HEADER.unpack_from(data)
    if magic != CHECKPOINT_MAGIC:
        raise ConfigError(f"{path}: not a checkpoint (magic {magic!r})")
    params = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    if params.size != length:
        raise ConfigError(f"{path}: expected {length} parameters, found {params.size}")
    return ModelState(params.astype(np.float64), version)
