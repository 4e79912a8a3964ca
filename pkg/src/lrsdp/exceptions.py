"""Exception types shared across the solver."""


class LrSdpError(Exception):
    """Base class for all solver errors."""


class SdpaParseError(LrSdpError, ValueError):
    """Malformed SDPA sparse input; message carries the offending line number."""


class UnsupportedFeatureError(LrSdpError, ValueError):
    """Input uses a feature outside the supported problem class (multi-block, linear blocks)."""


class DimensionMismatchError(LrSdpError, ValueError):
    """Operator applied to an operand of incompatible shape."""


class DivergedError(LrSdpError, RuntimeError):
    """Iteration produced non-finite values; carries the last finite iterate."""

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class SpdViolationError(LrSdpError, RuntimeError):
    """CG observed a non-positive curvature direction; the operator is not SPD."""
