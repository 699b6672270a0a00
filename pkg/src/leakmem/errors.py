"""Exception types shared across the package."""


class LeakmemError(Exception):
    """Base class for all package errors."""


class ShapeError(LeakmemError):
    """Operand shapes are incompatible; the message names both shapes."""


class NumericError(LeakmemError):
    """Non-finite values or numerically unusable inputs."""


class DegenerateInputError(LeakmemError):
    """An operand is degenerate for the operation, e.g. a zero-norm vector."""


class DomainError(LeakmemError):
    """Input lies outside the operation's mathematical domain."""


class ContractError(LeakmemError):
    """An API precondition was violated by the caller."""


class NotFittedError(ContractError):
    """Estimator used before ``fit``."""


class ConfigError(LeakmemError):
    """Run configuration is missing fields, has unknown fields, or bad values."""


class CheckpointError(LeakmemError):
    """Checkpoint file is unreadable, truncated, or has a mismatched version."""


class CapabilityError(LeakmemError):
    """Checkpoint lacks the parameters a command needs."""


class TrainingAborted(LeakmemError):
    """A loss term became non-finite during training."""

    def __init__(self, term: str, step: int):
        super().__init__(f"non-finite value in loss term '{term}' at step {step}")
        self.term = term
        self.step = step
