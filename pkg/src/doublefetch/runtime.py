"""Timed execution of targets on the simulator: cells, actors, drivers.

A target invocation materializes each reference parameter into a fresh
SharedBuffer (per-invocation isolation), wraps the target generator in a
scheduler actor, and interleaves it with probe/adversary actors on one
shared virtual timeline.
"""

from __future__ import annotations

import random

from .errors import UsageError
from .probe import SimProbeBackend
from .sim.engine import (
    ACTOR_MONITOR,
    ACTOR_TARGET,
    ACTOR_TRIGGER,
    ACTOR_TXBODY,
    PRIO_ADVERSARY,
    PRIO_FLUSH,
    PRIO_RELOAD,
    PRIO_TARGET,
    READ,
    WRITE,
    Actor,
    SimEngine,
    run_actors,
)
from .targets import TargetDescriptor, result_flags


class SimCells:
    """Backing store for one invocation's parameters."""

    def __init__(self, backend: SimProbeBackend, target: TargetDescriptor, args: dict):
        self.buffers = {}
        self._values: dict[tuple[str, int], object] = {}
        self._lines: dict[tuple[str, int], int] = {}
        self._first_line: dict[str, int] = {}
        self._all_lines: dict[str, tuple[int, ...]] = {}
        for spec in target.param_specs:
            if not spec.reference:
                continue
            buf = backend.allocate_shared(spec.size_bytes)
            self.buffers[spec.name] = buf
            self._first_line[spec.name] = buf.line_ids[0]
            self._all_lines[spec.name] = buf.line_ids
            value = args[spec.name]
            if spec.members > 1:
                members = tuple(value)
                if len(members) != spec.members:
                    raise UsageError(f"{spec.name}: expected {spec.members} members")
                stride = max(1, spec.size_bytes // spec.members)
                for m, mv in enumerate(members):
                    self._values[(spec.name, m)] = mv
                    self._lines[(spec.name, m)] = buf.line_for_offset(m * stride)
            else:
                self._values[(spec.name, 0)] = value
                self._lines[(spec.name, 0)] = buf.line_ids[0]

    def value(self, name: str, member: int = 0):
        try:
            return self._values[(name, member)]
        except KeyError:
            raise UsageError(f"unknown parameter {name!r} (member {member})") from None

    def set_value(self, name: str, value, member: int = 0) -> None:
        if (name, member) not in self._values:
            raise UsageError(f"unknown parameter {name!r} (member {member})")
        self._values[(name, member)] = value

    def line(self, name: str, member: int = 0) -> int:
        return self._lines[(name, member)]

    def monitored_lines(self, name: str, all_lines: bool = False) -> tuple[int, ...]:
        if all_lines:
            return self._all_lines[name]
        return (self._first_line[name],)


class TargetActor(Actor):
    """Drives a target generator, executing its ops on the engine."""

    __slots__ = ("engine", "cells", "gen", "result", "returned_at",
                 "_send", "_op", "_started", "in_tx")

    def __init__(self, engine: SimEngine, cells: SimCells, gen, start_at: int):
        super().__init__(start_at, PRIO_TARGET)
        self.engine = engine
        self.cells = cells
        self.gen = gen
        self.result = None
        self.returned_at = None
        self._send = None
        self._op = None
        self._started = False
        self.in_tx = False
        self._advance(start_at)  # pull ops up to the first schedulable one

    def _advance(self, anchor: int) -> None:
        """Fetch the next non-idle op; idles only push the deadline.

        Generator exhaustion becomes a "return" pseudo-op so that trailing
        idle time still elapses before the invocation counts as returned
        (probe hits after the return instant are discarded by stopping).
        """
        deadline = anchor
        while True:
            try:
                if self._started:
                    op = self.gen.send(self._send)
                else:
                    op = next(self.gen)
                    self._started = True
                self._send = None
            except StopIteration as stop:
                self.result = stop.value if stop.value is not None else {}
                self._op = ("return",)
                self.deadline = deadline
                return
            if op[0] == "idle":
                deadline += op[1]
                continue
            self._op = op
            self.deadline = deadline
            return

    def step(self, engine: SimEngine, at: int) -> None:
        op = self._op
        kind = op[0]
        timing = engine.timing
        if kind == "return":
            self.done = True
            self.returned_at = at
            return
        if kind == "r" or kind == "rm":
            member = op[2] if kind == "rm" else 0
            actor = ACTOR_TXBODY if self.in_tx else ACTOR_TARGET
            engine.touch(self.cells.line(op[1], member), READ, actor, at)
            engine.clock.step(timing.per_access_ticks)
            self._send = self.cells.value(op[1], member)
        elif kind == "w":
            actor = ACTOR_TXBODY if self.in_tx else ACTOR_TARGET
            engine.touch(self.cells.line(op[1]), WRITE, actor, at)
            engine.clock.step(timing.per_access_ticks)
            self.cells.set_value(op[1], op[2])
        elif kind == "txr":
            name, member = op[1], op[2]
            line = self.cells.line(name, member)
            engine.touch(line, READ, ACTOR_TXBODY, at)
            engine.clock.step(timing.per_access_ticks)
            self._send = (self.cells.value(name, member), engine.version(line), line)
        elif kind == "commit":
            read_vers, writes = op[1], op[2]
            ok = all(engine.version(line) == ver for line, ver in read_vers.items())
            cost = timing.tx_commit_ticks
            if ok:
                t = at
                for (name, member), value in writes:
                    engine.touch(self.cells.line(name, member), WRITE, ACTOR_TXBODY, t)
                    self.cells.set_value(name, value, member)
                    t += 1
                cost += len(writes)
            engine.clock.step(cost)
            self._send = ok
        elif kind == "tx_enter":
            if self.in_tx:
                raise UsageError("transactional regions do not nest")
            self.in_tx = True
            engine.clock.step(timing.tx_begin_ticks)
        elif kind == "tx_exit":
            self.in_tx = False
            engine.clock.step(1)
        elif kind == "lock":
            if op[1]:
                engine.locked = True
            else:
                engine.locked = False
            engine.clock.step(timing.lock_ticks)
        else:
            raise UsageError(f"unknown target op {op!r}")
        self._advance(engine.clock.now)


class ProbePairActor(Actor):
    """Continuous flush+reload pairs over a line set; collects hit times.

    After a reload that hit, re-arming is delayed by ``timing.hit_rearm``
    ticks (the probe records the sample and re-synchronizes), which fixes
    the minimum distinguishable inter-fetch distance at two pair costs.
    """

    __slots__ = ("lines", "timing", "hits", "pairs", "period_slack", "noise_rng",
                 "_i", "_phase_hit", "_state", "actor_name")

    def __init__(self, lines, timing, start_at: int, phase: int = 0,
                 probe_period: int | None = None, noise_rng: random.Random | None = None,
                 actor_name: str = ACTOR_MONITOR):
        super().__init__(start_at + phase, PRIO_FLUSH)
        self.lines = tuple(lines)
        self.timing = timing
        self.hits: list[int] = []
        self.pairs = 0
        pair_cost = timing.fr_cycle_cost * len(self.lines)
        period = probe_period if probe_period is not None else pair_cost
        if period < pair_cost:
            raise UsageError("probe_period shorter than one flush+reload cycle")
        self.period_slack = period - pair_cost
        self.noise_rng = noise_rng
        self._i = 0
        self._phase_hit = False
        self._state = "flush"
        self.actor_name = actor_name

    def step(self, engine: SimEngine, at: int) -> None:
        timing = self.timing
        if self._state == "flush":
            engine.flush_line(self.lines[self._i], self.actor_name, at)
            engine.clock.step(timing.flush_ticks)
            self._i += 1
            if self._i == len(self.lines):
                self._i = 0
                self._state = "reload"
                self.priority = PRIO_RELOAD
                self._phase_hit = False
            self.deadline = engine.clock.now
            return
        # reload
        line = self.lines[self._i]
        hit = engine.cached(line)
        engine.touch(line, READ, self.actor_name, at)
        engine.clock.step(timing.reload_ticks)
        if hit and not self._phase_hit:
            self._phase_hit = True
            self.hits.append(at)
        self._i += 1
        if self._i == len(self.lines):
            self._i = 0
            self._state = "flush"
            self.priority = PRIO_FLUSH
            self.pairs += 1
            rearm = timing.hit_rearm if self._phase_hit else 0
            noise = self.noise_rng.randrange(timing.noise_ticks + 1) \
                if (self.noise_rng is not None and timing.noise_ticks) else 0
            self.deadline = engine.clock.now + rearm + self.period_slack + noise
            if self._phase_hit:
                self.on_hit(engine, at)
        else:
            self.deadline = engine.clock.now

    def on_hit(self, engine: SimEngine, at: int) -> None:
        """Hook for trigger subclasses; the plain monitor only records."""


class TriggerActor(ProbePairActor):
    """Probe until the n-th distinct hit, then write a mutated value once."""

    __slots__ = ("cells", "param", "mutated", "fire_on_hit", "flip_at", "_firing")

    def __init__(self, cells: SimCells, param: str, mutated, fire_on_hit: int,
                 timing, start_at: int, phase: int = 0):
        super().__init__(cells.monitored_lines(param), timing, start_at, phase,
                         actor_name=ACTOR_TRIGGER)
        self.cells = cells
        self.param = param
        self.mutated = mutated
        self.fire_on_hit = fire_on_hit
        self.flip_at = None
        self._firing = False

    def on_hit(self, engine: SimEngine, at: int) -> None:
        if len(self.hits) == self.fire_on_hit:
            self._firing = True
            self.priority = PRIO_ADVERSARY
            self.deadline = engine.clock.now

    def step(self, engine: SimEngine, at: int) -> None:
        if not self._firing:
            super().step(engine, at)
            return
        if engine.locked:
            self.deadline = engine.clock.now + 1
            return
        engine.touch(self.cells.line(self.param), WRITE, ACTOR_TRIGGER, at)
        engine.clock.step(engine.timing.per_access_ticks)
        self.cells.set_value(self.param, self.mutated)
        self.flip_at = at
        self.done = True  # trigger-once: at most one mutation per invocation


class FlipperActor(Actor):
    """Rewrites the parameter every tick with a fresh valid-or-invalid draw."""

    __slots__ = ("cells", "param", "valid", "invalid", "rng", "first_invalid_at", "writes")

    def __init__(self, cells: SimCells, param: str, valid, invalid,
                 rng: random.Random, start_at: int):
        super().__init__(start_at, PRIO_ADVERSARY)
        self.cells = cells
        self.param = param
        self.valid = valid
        self.invalid = invalid
        self.rng = rng
        self.first_invalid_at = None
        self.writes = 0

    def step(self, engine: SimEngine, at: int) -> None:
        if engine.locked:
            self.deadline = engine.clock.now + 1
            return
        use_invalid = bool(self.rng.getrandbits(1))
        engine.touch(self.cells.line(self.param), WRITE, ACTOR_TRIGGER, at)
        engine.clock.step(engine.timing.per_access_ticks)
        self.cells.set_value(self.param, self.invalid if use_invalid else self.valid)
        self.writes += 1
        if use_invalid and self.first_invalid_at is None:
            self.first_invalid_at = at
        self.deadline = at + 1


class OneShotWriteActor(Actor):
    """The busy-wait competitor: sleep a tuned delay, write once."""

    __slots__ = ("cells", "param", "value", "flip_at")

    def __init__(self, cells: SimCells, param: str, value, write_at: int):
        super().__init__(write_at, PRIO_ADVERSARY)
        self.cells = cells
        self.param = param
        self.value = value
        self.flip_at = None

    def step(self, engine: SimEngine, at: int) -> None:
        if engine.locked:
            self.deadline = engine.clock.now + 1
            return
        engine.touch(self.cells.line(self.param), WRITE, ACTOR_TRIGGER, at)
        engine.clock.step(engine.timing.per_access_ticks)
        self.cells.set_value(self.param, self.value)
        self.flip_at = at
        self.done = True


def invoke_timed(backend: SimProbeBackend, target: TargetDescriptor, args: dict,
                 aux: list[Actor] | None = None, gap_override: int | None = None,
                 cells: SimCells | None = None):
    """Run one invocation to completion; aux actors stop at target return.

    Returns (state, verdict, flags, target_actor).
    """
    engine = backend.engine
    if cells is None:
        cells = SimCells(backend, target, args)
    gaps = target.resolve_gaps(backend.timing, gap_override)
    gen = target.invoke(args, gaps)
    tactor = TargetActor(engine, cells, gen, engine.clock.now)
    actors: list[Actor] = [tactor]
    if aux:
        actors.extend(aux)
    run_actors(engine, actors, stop_when=lambda: tactor.done)
    state = tactor.result
    verdict = target.oracle(state)
    return state, verdict, result_flags(target, state), tactor
