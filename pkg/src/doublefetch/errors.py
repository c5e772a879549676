"""Exception hierarchy shared by all backends and front ends."""


class DoubleFetchError(Exception):
    """Base class for all package errors."""


class UsageError(DoubleFetchError):
    """Caller violated an API contract (unknown line, bad argument, ...)."""


class StateError(DoubleFetchError):
    """Operation requires state that is missing (e.g. no calibration yet)."""


class ResourceError(DoubleFetchError):
    """Allocation or OS resource failure."""


class CapabilityError(DoubleFetchError):
    """The platform lacks a required instruction or feature."""


class CalibrationError(DoubleFetchError):
    """Hit/miss latency distributions could not be separated."""
