"""Exception types shared across the package."""


class HandFusionError(Exception):
    pass


class DimensionError(HandFusionError, ValueError):
    """Shapes of operands are incompatible."""


class ContractError(HandFusionError, ValueError):
    """A documented precondition was violated."""


class EmptyCloudError(HandFusionError):
    """A point-cloud operation ended up with zero points."""


class ProjectionError(HandFusionError, ValueError):
    """A point at or behind the camera plane was projected."""


class TopologyError(HandFusionError, ValueError):
    pass


class FusionSkipped(HandFusionError):
    """Raised when a hand has no usable point cloud; callers substitute a zero global feature."""


class ParseError(HandFusionError, ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class ConfigError(HandFusionError, ValueError):
    pass


class TrainingDiverged(HandFusionError):
    """A non-finite loss was produced; a diagnostic dump has been written."""


class CheckpointMismatch(HandFusionError):
    """A checkpoint does not fit the current topology or configuration."""
