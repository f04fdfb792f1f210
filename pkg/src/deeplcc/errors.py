"""Exception types shared across the package."""


class DeepLccError(Exception):
    """Base class for all package errors."""


class WellPosednessViolation(DeepLccError):
    pass


class DepthExceedsLength(DeepLccError, ValueError):
    pass


class InsufficientData(DeepLccError, ValueError):
    pass


class DimensionMismatch(DeepLccError, ValueError):
    pass


class NotWarmedUp(DeepLccError):
    pass


class SingularMap(DeepLccError, ValueError):
    pass


class InvalidLiteralBounds(DeepLccError, ValueError):
    pass


class ExcitationFailure(DeepLccError):
    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate


class ControllerFault(DeepLccError):
    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step
