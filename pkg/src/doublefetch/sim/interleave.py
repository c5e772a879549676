"""Order-exhaustive oracle: run a target under every interleaving of an
adversary step program into its access sequence.

Timing is abstracted away here; only the order of memory operations
matters. For a target with T accesses and an adversary with A steps the
enumeration yields exactly C(T+A, A) schedules (every way of merging the
two sequences), which is the ground truth exploitability oracle the
annotations are checked against.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass

from ..errors import UsageError

TARGET = "target"
ADVERSARY = "adversary"


@dataclass(frozen=True)
class Schedule:
    steps: tuple[tuple[str, int], ...]

    def to_json(self) -> str:
        return json.dumps([[a, i] for a, i in self.steps])

    @classmethod
    def from_json(cls, text: str) -> "Schedule":
        data = json.loads(text)
        return cls(tuple((str(a), int(i)) for a, i in data))


@dataclass(frozen=True)
class InterleavingResult:
    outcomes: tuple[tuple[Schedule, str], ...]
    sampled: bool

    def verdicts(self) -> list[str]:
        return [v for _, v in self.outcomes]

    def count(self, verdict: str) -> int:
        return sum(1 for _, v in self.outcomes if v == verdict)


# adversary step program ----------------------------------------------------- #

Step = tuple  # ("w", param, value) | ("wait", ticks)


def flip_once(param: str, value) -> list[Step]:
    return [("w", param, value)]


def persistent_flipper(param: str, values, steps: int) -> list[Step]:
    """Alternates the given values for `steps` writes (a tireless attacker)."""
    vals = list(values)
    return [("w", param, vals[i % len(vals)]) for i in range(steps)]


# ---------------------------------------------------------------------------- #


class EnumState:
    """Parameter values plus per-line write versions; no clock, no cache."""

    __slots__ = ("values", "versions", "locked", "in_tx")

    def __init__(self, target, args: dict):
        self.values: dict[tuple[str, int], object] = {}
        self.versions: dict[str, int] = {}
        self.locked = False
        self.in_tx = False
        for spec in target.param_specs:
            if not spec.reference:
                continue
            value = args[spec.name]
            if spec.members > 1:
                for m, mv in enumerate(tuple(value)):
                    self.values[(spec.name, m)] = mv
            else:
                self.values[(spec.name, 0)] = value
            self.versions[spec.name] = 0

    def read(self, name: str, member: int = 0):
        try:
            return self.values[(name, member)]
        except KeyError:
            raise UsageError(f"unknown parameter {name!r}") from None

    def write(self, name: str, value, member: int = 0) -> None:
        if (name, member) not in self.values:
            raise UsageError(f"unknown parameter {name!r}")
        self.values[(name, member)] = value
        self.versions[name] += 1


class _Run:
    """One execution of target+adversary under a choice policy."""

    def __init__(self, target, args, gaps, adversary):
        self.target = target
        self.adversary = adversary
        self.state = EnumState(target, args)
        self.gen = target.invoke(args, gaps)
        self.schedule: list[tuple[str, int]] = []
        self.t_steps = 0
        self.adv_i = 0
        self._send = None
        self._op = self._fetch(first=True)
        self.result = None

    def _fetch(self, first=False):
        while True:
            try:
                op = next(self.gen) if first else self.gen.send(self._send)
                first = False
                self._send = None
            except StopIteration as stop:
                self.result = stop.value if stop.value is not None else {}
                return None
            k = op[0]
            if k == "idle":
                continue
            if k == "tx_enter":
                if self.state.in_tx:
                    raise UsageError("transactional regions do not nest")
                self.state.in_tx = True
                continue
            if k == "tx_exit":
                self.state.in_tx = False
                continue
            return op

    def target_available(self) -> bool:
        return self._op is not None

    def adversary_available(self) -> bool:
        return self.adv_i < len(self.adversary) and not self.state.locked

    def step_target(self) -> None:
        op = self._op
        k = op[0]
        st = self.state
        if k == "r":
            self._send = st.read(op[1])
        elif k == "rm":
            self._send = st.read(op[1], op[2])
        elif k == "w":
            st.write(op[1], op[2])
        elif k == "txr":
            name, member = op[1], op[2]
            self._send = (st.read(name, member), st.versions[name], name)
        elif k == "commit":
            read_vers, writes = op[1], op[2]
            ok = all(st.versions[line] == ver for line, ver in read_vers.items())
            if ok:
                for (name, member), value in writes:
                    st.write(name, value, member)
            self._send = ok
        elif k == "lock":
            st.locked = bool(op[1])
        else:
            raise UsageError(f"unknown target op {op!r}")
        self.schedule.append((TARGET, self.t_steps))
        self.t_steps += 1
        self._op = self._fetch()

    def step_adversary(self) -> None:
        step = self.adversary[self.adv_i]
        if step[0] == "w":
            self.state.write(step[1], step[2])
        elif step[0] != "wait":
            raise UsageError(f"unknown adversary step {step!r}")
        self.schedule.append((ADVERSARY, self.adv_i))
        self.adv_i += 1

    def verdict(self) -> str:
        return self.target.oracle(self.result)


def _drive(target, args, gaps, adversary, choose):
    """Run to completion; `choose(i)` picks adversary-next at decision i."""
    run = _Run(target, args, gaps, adversary)
    decision = 0
    while True:
        t_ok = run.target_available()
        a_ok = run.adversary_available()
        if t_ok and a_ok:
            adv_next = choose(decision, run)
            decision += 1
        elif a_ok:
            adv_next = True
        elif t_ok:
            adv_next = False
        else:
            break
        if adv_next:
            run.step_adversary()
        else:
            run.step_target()
    return run


def run_interleavings(target, args, adversary, max_schedules: int = 100_000,
                      seed: int = 0, gap_override: int | None = None,
                      timing=None) -> InterleavingResult:
    """Enumerate (or, past max_schedules, uniformly sample) interleavings.

    Returns every (schedule, verdict) pair; `sampled` flags the fallback.
    """
    from ..config import SimTiming

    if max_schedules < 1:
        raise UsageError("max_schedules must be >= 1")
    gaps = target.resolve_gaps(timing or SimTiming(), gap_override)
    t_nominal = target.nominal_steps()
    a_steps = len(adversary)
    estimate = math.comb(t_nominal + a_steps, a_steps)
    if estimate <= max_schedules:
        outcomes = _enumerate_all(target, args, gaps, adversary)
        return InterleavingResult(tuple(outcomes), sampled=False)
    outcomes = _sample(target, args, gaps, adversary, max_schedules, seed, t_nominal)
    return InterleavingResult(tuple(outcomes), sampled=True)


def _enumerate_all(target, args, gaps, adversary):
    outcomes = []
    stack: list[tuple[bool, ...]] = [()]
    while stack:
        prefix = stack.pop()
        new_branches: list[int] = []
        choices: list[bool] = []

        def choose(i, _run):
            if i < len(prefix):
                c = prefix[i]
            else:
                c = False  # default: target first; remember the fork
                new_branches.append(i)
            choices.append(c)
            return c

        run = _drive(target, args, gaps, adversary, choose)
        outcomes.append((Schedule(tuple(run.schedule)), run.verdict()))
        for pos in new_branches:
            stack.append(tuple(choices[:pos]) + (True,))
    return outcomes


def _sample(target, args, gaps, adversary, n: int, seed: int, t_nominal: int):
    rng = random.Random(seed)
    outcomes = []
    for _ in range(n):
        def choose(_i, run):
            a_rem = len(adversary) - run.adv_i
            t_rem = max(1, t_nominal - run.t_steps)
            return rng.random() < a_rem / (a_rem + t_rem)

        run = _drive(target, args, gaps, adversary, choose)
        outcomes.append((Schedule(tuple(run.schedule)), run.verdict()))
    return outcomes


def replay_schedule(target, args, adversary, schedule: Schedule,
                    gap_override: int | None = None, timing=None) -> str:
    """Re-execute one recorded schedule; returns the verdict."""
    from ..config import SimTiming

    gaps = target.resolve_gaps(timing or SimTiming(), gap_override)
    run = _Run(target, args, gaps, adversary)
    for actor, idx in schedule.steps:
        if actor == TARGET:
            if not run.target_available() or idx != run.t_steps:
                raise UsageError(f"schedule step ({actor}, {idx}) does not match the target")
            run.step_target()
        elif actor == ADVERSARY:
            if not run.adversary_available() or idx != run.adv_i:
                raise UsageError(f"schedule step ({actor}, {idx}) cannot run here")
            run.step_adversary()
        else:
            raise UsageError(f"unknown actor {actor!r}")
    while run.target_available():
        run.step_target()
    return run.verdict()
