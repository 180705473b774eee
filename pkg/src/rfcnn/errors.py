"""Errors raised by the core library.

Plain ``ValueError`` is used for ordinary argument problems; the classes
below exist where callers need to distinguish the failure mode.
"""


class ShapeError(ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class DegenerateBatchError(ValueError):
    """Batch statistics are undefined (fewer than two values per channel)."""


class EmptyLossError(ValueError):
    """Every (sample, label) pair is masked out; the loss is undefined."""


class ContractError(ValueError):
    """An operation was invoked in a way its mode forbids."""


class ClippedReceptiveFieldError(ValueError):
    """The input is too small to contain the network's receptive field."""


class UndefinedMetricError(ValueError):
    """A metric has no defined value on the given predictions."""


class TrainingDivergedError(RuntimeError):
    """Loss or gradients became non-finite during training."""

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step
