"""Exception types raised across the package."""


class DGZError(Exception):
    """Base class for every error raised by dgz."""


class ShapeError(DGZError, ValueError):
    pass


class ContractError(DGZError, ValueError):
    """A documented precondition was violated."""


class MissingNodeError(DGZError, KeyError):
    """A gradient was requested for a tensor the tape never saw."""


class NotPSDError(DGZError, ValueError):
    pass


class PoisonedGradientError(DGZError, FloatingPointError):
    pass


class NumericalError(DGZError, FloatingPointError):
    pass


class TrainingDivergedError(DGZError, RuntimeError):
    def __init__(self, stage, epoch, detail=""):
        self.stage = stage
        self.epoch = epoch
        msg = f"{stage} diverged at epoch {epoch}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class FormatError(DGZError, ValueError):
    """A file or document failed validation; ``field`` names the culprit."""

    def __init__(self, field, detail):
        self.field = field
        super().__init__(f"{field}: {detail}")


class ConfigError(DGZError, ValueError):
    pass
