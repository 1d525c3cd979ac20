class FDSMError(Exception):
    pass


class ConfigurationError(FDSMError, ValueError):
    pass


class ShapeError(FDSMError, ValueError):
    pass


class ProtocolError(FDSMError):
    pass


class NonFiniteError(FDSMError, FloatingPointError):
    def __init__(self, primitive, message=None):
        self.primitive = primitive
        super().__init__(message or f"non-finite value produced by primitive '{primitive}'")


class TrainingDivergedError(FDSMError):
    def __init__(self, iteration, message):
        self.iteration = iteration
        super().__init__(f"iteration {iteration}: {message}")


class CheckpointError(FDSMError):
    pass


class CheckpointMagicError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass
