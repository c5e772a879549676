"""Virtual timeline, line-granular cache state, and the actor scheduler.

Everything in the simulation is serialized through one logical clock: each
operation takes effect at an integer tick and consumes at least one tick,
so event timestamps are strictly increasing by construction. Operations of
different actors that become ready at the same instant are ordered by a
fixed priority (flushes, then adversary writes, then target accesses, then
probe reloads), which also fixes the cache-visibility of boundary accesses.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..config import LINE_SIZE, PAGE_SIZE, SimTiming
from ..errors import ResourceError, UsageError

READ = "Read"
WRITE = "Write"
FLUSH = "Flush"

ACTOR_TARGET = "Target"
ACTOR_MONITOR = "Monitor"
ACTOR_TRIGGER = "Trigger"
ACTOR_TXBODY = "TxBody"

# scheduler tie-break: lower runs first at the same instant
PRIO_FLUSH = 0
PRIO_ADVERSARY = 1
PRIO_TARGET = 2
PRIO_RELOAD = 3

# line-state slots (plain lists in the hot path)
_FLUSH_SEQ = 0
_ACCESS_SEQ = 1
_VERSION = 2

MAX_BUFFER_BYTES = 1 << 40


@dataclass(frozen=True)
class AccessEvent:
    line: int
    kind: str
    vtime: int
    actor: str


class VirtualClock:
    """Monotonic virtual time; advances via explicit step or event emission."""

    __slots__ = ("now",)

    def __init__(self) -> None:
        self.now = 0

    def step(self, ticks: int) -> int:
        if ticks < 0:
            raise UsageError("clock cannot go backwards")
        self.now += ticks
        return self.now


class SimEngine:
    """Shared memory, cache-line state, event log, and allocator for one run.

    Instances share nothing; a fuzzing worker owns exactly one engine.
    """

    def __init__(self, timing: SimTiming | None = None, record_events: bool = True):
        self.timing = timing or SimTiming()
        self.record_events = record_events
        self.clock = VirtualClock()
        self.locked = False  # set while a lock-protected region runs
        self._seq = 0
        self._next_page = PAGE_SIZE  # leave page 0 unmapped, like real life
        self._lines: dict[int, list[int]] = {}
        self.events: list[AccessEvent] = []

    # ------------------------------------------------------------------ #
    # allocation

    def allocate_lines(self, size_bytes: int) -> tuple[int, int, list[int]]:
        """Reserve a page-granular region; returns (base, alloc_bytes, line_ids).

        line_ids cover the requested extent at 64-byte granularity; the
        allocation itself is rounded up to whole pages so two regions never
        share a cache line (and first lines of distinct regions are at
        least a page apart).
        """
        if size_bytes < 1:
            raise UsageError("size_bytes must be >= 1")
        if size_bytes > MAX_BUFFER_BYTES:
            raise ResourceError(f"allocation of {size_bytes} bytes refused")
        pages = -(-size_bytes // PAGE_SIZE)
        base = self._next_page
        self._next_page += pages * PAGE_SIZE
        n_lines = -(-size_bytes // LINE_SIZE)
        line_ids = [base + LINE_SIZE * i for i in range(n_lines)]
        for lid in line_ids:
            # fresh lines start cached: the allocator just touched them
            self._lines[lid] = [0, 1, 0]
        return base, pages * PAGE_SIZE, line_ids

    def knows_line(self, line: int) -> bool:
        return line in self._lines

    def _state(self, line: int) -> list[int]:
        st = self._lines.get(line)
        if st is None:
            raise UsageError(f"line {line:#x} does not belong to a registered buffer")
        return st

    # ------------------------------------------------------------------ #
    # cache + event primitives (effect is instantaneous at `at`,
    # the caller accounts for the op's tick cost)

    def touch(self, line: int, kind: str, actor: str, at: int) -> None:
        st = self._state(line)
        self._seq += 1
        st[_ACCESS_SEQ] = self._seq
        if kind == WRITE:
            st[_VERSION] += 1
        if self.record_events:
            self.events.append(AccessEvent(line, kind, at, actor))

    def flush_line(self, line: int, actor: str, at: int) -> None:
        st = self._state(line)
        self._seq += 1
        st[_FLUSH_SEQ] = self._seq
        if self.record_events:
            self.events.append(AccessEvent(line, FLUSH, at, actor))

    def cached(self, line: int) -> bool:
        """True iff some access hit the line after its latest flush."""
        st = self._state(line)
        return st[_ACCESS_SEQ] > st[_FLUSH_SEQ]

    def version(self, line: int) -> int:
        return self._state(line)[_VERSION]

    # ------------------------------------------------------------------ #
    # direct-use probe ops (the monitor actors inline the same semantics)

    def op_flush(self, line: int, actor: str = ACTOR_MONITOR) -> int:
        at = self.clock.now
        self.flush_line(line, actor, at)
        self.clock.step(self.timing.flush_ticks)
        return at

    def op_reload(self, line: int, actor: str = ACTOR_MONITOR) -> tuple[int, bool]:
        """Timed reload: returns (effect vtime, was_hit); re-caches the line."""
        at = self.clock.now
        hit = self.cached(line)
        self.touch(line, READ, actor, at)
        self.clock.step(self.timing.reload_ticks)
        return at, hit

    def op_access(self, line: int, kind: str, actor: str = ACTOR_TARGET) -> int:
        at = self.clock.now
        self.touch(line, kind, actor, at)
        self.clock.step(self.timing.per_access_ticks)
        return at

    # ------------------------------------------------------------------ #

    def events_csv_rows(self):
        yield ("vtime", "actor", "kind", "line")
        for ev in self.events:
            yield (ev.vtime, ev.actor, ev.kind, f"{ev.line:#x}")


class Actor:
    """One cooperative step sequence on the shared timeline.

    Subclasses set ``deadline`` (earliest tick the next op may take effect)
    and ``priority``; ``step`` executes exactly one op at ``at`` and
    updates the deadline, or sets ``done``.
    """

    __slots__ = ("deadline", "priority", "done")

    def __init__(self, deadline: int, priority: int):
        self.deadline = deadline
        self.priority = priority
        self.done = False

    def step(self, engine: SimEngine, at: int) -> None:  # pragma: no cover
        raise NotImplementedError

    def halt(self) -> None:
        self.done = True


def run_actors(engine: SimEngine, actors: list[Actor], stop_when=None) -> None:
    """Drive actors until ``stop_when()`` (or until all are done).

    At each step the ready actor with the smallest effective instant runs;
    ties break on (priority, registration order). Effects are serialized:
    an op's effect instant is max(its deadline, current clock).
    """
    clock = engine.clock
    while True:
        if stop_when is not None and stop_when():
            return
        best = None
        best_key = None
        for idx, actor in enumerate(actors):
            if actor.done:
                continue
            eff = actor.deadline
            now = clock.now
            if eff < now:
                eff = now
            key = (eff, actor.priority, idx)
            if best_key is None or key < best_key:
                best_key = key
                best = actor
        if best is None:
            return
        at = best_key[0]
        if at > clock.now:
            clock.step(at - clock.now)  # idle skip: nobody is ready earlier
        best.step(engine, at)
