"""Exception types shared across the package."""


class LcnnError(Exception):
    """Base class for all lcnn errors."""


class DimensionError(LcnnError):
    """Shapes or geometry fields do not match."""


class UnsupportedGeometryError(LcnnError):
    """Operation does not support the requested geometry (e.g. stride > 1)."""


class BoundsError(LcnnError):
    """An index refers outside its table (dictionary row, kernel tap, ...)."""


class ModeError(LcnnError):
    """Layer or model is in the wrong mode (training vs inference) for the call."""


class TransferError(LcnnError):
    """A dictionary-transfer plan cannot be applied."""


class StructureError(LcnnError):
    """Model structure does not match what the operation requires."""


class ContractError(LcnnError):
    """A protocol precondition was violated (e.g. unfrozen dictionary in few-shot)."""


class ConfigError(LcnnError):
    """Experiment configuration is malformed or incomplete."""


class DataError(LcnnError):
    """Dataset or model file cannot be read."""


class NumericFailureError(LcnnError):
    """Training produced a non-finite value; carries the offending layer index."""

    def __init__(self, message: str, layer_id: int | None = None):
        super().__init__(message)
        self.layer_id = layer_id
