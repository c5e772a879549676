"""Cache-probe detection, triggered exploitation, and transactional
elimination of double-fetch races, with a deterministic simulator backend."""

from .config import RunConfig, SimTiming
from .errors import (
    CalibrationError,
    CapabilityError,
    DoubleFetchError,
    ResourceError,
    StateError,
    UsageError,
)
from .monitor import MonitorConfig, MonitorReport, detection_probability, is_double_fetch, monitor_invoke
from .probe import CalibrationProfile, ProbeSample, SharedBuffer, SimProbeBackend
from .targets import TargetDescriptor, build_registry

__version__ = "0.1.0"

__all__ = [
    "RunConfig",
    "SimTiming",
    "DoubleFetchError",
    "UsageError",
    "StateError",
    "ResourceError",
    "CapabilityError",
    "CalibrationError",
    "SharedBuffer",
    "ProbeSample",
    "CalibrationProfile",
    "SimProbeBackend",
    "MonitorConfig",
    "MonitorReport",
    "monitor_invoke",
    "is_double_fetch",
    "detection_probability",
    "TargetDescriptor",
    "build_registry",
    "__version__",
]
