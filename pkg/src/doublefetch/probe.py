"""Cache side-channel primitives behind a backend contract.

A backend can flush a line, time a reload, and classify the latency as a
hit or a miss against a calibrated threshold. The simulator backend gives
exact, deterministic latencies; the hardware backend (``doublefetch.hw``)
measures real caches.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .config import LINE_SIZE, PAGE_SIZE, SimTiming
from .errors import CalibrationError, StateError, UsageError
from .sim.engine import ACTOR_MONITOR, ACTOR_TARGET, READ, SimEngine

HIT = "Hit"
MISS = "Miss"

#: calibration samples allowed on the wrong side of the threshold
MAX_OVERLAP_FRACTION = 0.10


@dataclass(frozen=True)
class SharedBuffer:
    """A page-granular allocation whose lines can be probed.

    ``line_ids`` cover the requested extent at cache-line granularity; the
    underlying allocation is page-rounded so distinct buffers never share a
    line and their first lines sit on distinct pages.
    """

    base_address: int
    size_bytes: int  # requested size
    alloc_bytes: int  # page-rounded size actually reserved
    line_ids: tuple[int, ...]

    @property
    def n_pages(self) -> int:
        return self.alloc_bytes // PAGE_SIZE

    def line_for_offset(self, offset: int) -> int:
        if not 0 <= offset < self.size_bytes:
            raise UsageError(f"offset {offset} outside buffer of {self.size_bytes} bytes")
        return self.line_ids[offset // LINE_SIZE]


@dataclass(frozen=True)
class ProbeSample:
    timestamp: int
    latency: int
    classification: str  # HIT or MISS


@dataclass(frozen=True)
class CalibrationProfile:
    """Measured hit/miss latency distributions and the derived threshold."""

    threshold: int
    hit_latencies: dict[int, int]
    miss_latencies: dict[int, int]
    fr_cycle_cost: int

    def classify(self, latency: int) -> str:
        return HIT if latency < self.threshold else MISS

    def as_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "fr_cycle_cost": self.fr_cycle_cost,
            "hit_latencies": {str(k): v for k, v in sorted(self.hit_latencies.items())},
            "miss_latencies": {str(k): v for k, v in sorted(self.miss_latencies.items())},
        }


def select_threshold(hits: list[int], misses: list[int]) -> int:
    """Midpoint between the 99th-percentile hit and 1st-percentile miss.

    Robust to tail noise on hardware; exact on the simulator where the two
    supports are single points.
    """
    if not hits or not misses:
        raise CalibrationError("empty calibration sample")
    hi = float(np.percentile(np.asarray(hits), 99))
    lo = float(np.percentile(np.asarray(misses), 1))
    if hi >= lo:
        raise CalibrationError(
            f"hit/miss latencies are not separable (p99 hit {hi:.0f} >= p1 miss {lo:.0f})"
        )
    return int((hi + lo) // 2)


def build_profile(hits: list[int], misses: list[int], fr_cycle_cost: int) -> CalibrationProfile:
    threshold = select_threshold(hits, misses)
    wrong = sum(1 for v in hits if v >= threshold) + sum(1 for v in misses if v < threshold)
    overlap = wrong / (len(hits) + len(misses))
    if overlap > MAX_OVERLAP_FRACTION:
        raise CalibrationError(f"{overlap:.1%} of calibration samples misclassified")
    return CalibrationProfile(
        threshold=threshold,
        hit_latencies=dict(Counter(hits)),
        miss_latencies=dict(Counter(misses)),
        fr_cycle_cost=fr_cycle_cost,
    )


class SimProbeBackend:
    """Probe primitives on the deterministic simulator.

    Reload latency is exactly ``timing.hit_latency`` or
    ``timing.miss_latency``; one flush+reload pair advances the virtual
    clock by ``timing.fr_cycle_cost`` ticks.
    """

    name = "sim"

    def __init__(self, timing: SimTiming | None = None, record_events: bool = True):
        self.timing = timing or SimTiming()
        self.engine = SimEngine(self.timing, record_events=record_events)
        self.profile: CalibrationProfile | None = None

    # -- allocation ------------------------------------------------------

    def allocate_shared(self, size_bytes: int) -> SharedBuffer:
        base, alloc, line_ids = self.engine.allocate_lines(size_bytes)
        return SharedBuffer(base, size_bytes, alloc, tuple(line_ids))

    # -- probe ops -------------------------------------------------------

    def flush(self, line: int) -> None:
        if not self.engine.knows_line(line):
            raise UsageError(f"line {line:#x} does not belong to a registered buffer")
        self.engine.op_flush(line, ACTOR_MONITOR)

    def timed_reload(self, line: int) -> ProbeSample:
        if self.profile is None:
            raise StateError("timed_reload requires calibrate() first")
        at, hit = self.engine.op_reload(line, ACTOR_MONITOR)
        latency = self.timing.hit_latency if hit else self.timing.miss_latency
        return ProbeSample(at, latency, self.profile.classify(latency))

    def touch(self, line: int) -> None:
        """A target-side access, for hand-driven experiments."""
        self.engine.op_access(line, READ, ACTOR_TARGET)

    def calibrate(self, rounds: int) -> CalibrationProfile:
        if rounds < 1:
            raise UsageError("rounds must be >= 1 on the sim backend")
        buf = self.allocate_shared(LINE_SIZE)
        line = buf.line_ids[0]
        hits: list[int] = []
        misses: list[int] = []
        pair_costs: list[int] = []
        for _ in range(rounds):
            start = self.engine.clock.now
            self.engine.op_flush(line, ACTOR_MONITOR)
            _, _ = self.engine.op_reload(line, ACTOR_MONITOR)
            misses.append(self.timing.miss_latency)
            pair_costs.append(self.engine.clock.now - start)
            self.engine.op_access(line, READ, ACTOR_TARGET)  # known-hit warmup
            _, hit = self.engine.op_reload(line, ACTOR_MONITOR)
            hits.append(self.timing.hit_latency if hit else self.timing.miss_latency)
        fr = int(round(sum(pair_costs) / len(pair_costs)))
        self.profile = build_profile(hits, misses, fr)
        return self.profile
