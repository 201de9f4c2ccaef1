class ConfigError(ValueError):
    """Invalid experiment, fleet or workload configuration."""


class ContractViolation(ValueError):
    """A caller broke an operation's precondition."""


class TrainingDivergence(RuntimeError):
    """Local training produced a non-finite loss."""

    def __init__(self, device_id, loss):
        super().__init__(f"local training diverged on device {device_id} (loss={loss!r})")
        self.device_id = device_id
        self.loss = loss


class InfeasibleInstance(ValueError):
    """Exhaustive oracle search would exceed its enumeration budget."""
