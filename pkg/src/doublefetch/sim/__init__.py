"""Deterministic virtual-cache and scheduling substrate."""

from .engine import AccessEvent, SimEngine, VirtualClock
from .interleave import InterleavingResult, Schedule, Step, flip_once, persistent_flipper, run_interleavings

__all__ = [
    "AccessEvent",
    "SimEngine",
    "VirtualClock",
    "Schedule",
    "Step",
    "InterleavingResult",
    "run_interleavings",
    "flip_once",
    "persistent_flipper",
]
