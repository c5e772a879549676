"""Corpus of instrumented black boxes emulating privileged call handlers.

Each target declares its parameters, performs its fetches through the
backend shim (by yielding access ops), and exposes a verdict oracle that
inspects the run's internal state instead of crashing: ``Corrupted`` means
a canary or bounds check tripped, ``FaultDetected`` means the target
noticed tampering and bailed out safely.

Op protocol yielded by target generators (values are sent back in):

    ("r", name)            read a parameter           -> current value
    ("rm", name, member)   read one struct member     -> current value
    ("w", name, value)     write a parameter
    ("idle", ticks)        do internal work for `ticks` virtual ticks
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .config import SimTiming
from .errors import UsageError
from .sim.engine import READ, WRITE

BENIGN = "Benign"
CORRUPTED = "Corrupted"
FAULT = "FaultDetected"

EXPLOITABLE = "Exploitable"
NON_EXPLOITABLE = "NonExploitableDoubleFetch"
SINGLE_FETCH = "SingleFetch"

CAT_FILENAMES = "Filenames"
CAT_SHARED_INOUT = "SharedInOut"
CAT_STRINGS = "Strings"
CAT_SANITY = "SanityCheck"
CAT_STRUCT = "StructureElements"
CAT_EXPLOITABLE = "ExploitableBug"

STRCPY_CAPACITY = 24  # bytes the emulated kernel-side buffer can hold
SWITCH_TABLE_SIZE = 6  # five cases plus the default slot
DEDUPE_MAX_RECORDS = 16
RETRY_BUDGET = 8


@dataclass(frozen=True)
class ParamSpec:
    """Shape of one black-box parameter, plus its argument generator."""

    index: int
    name: str
    kind: str  # IntScalar | Buffer | CString | StructWithMembers | FileNameLike | InOutBuffer
    size_bytes: int
    valid_generator: str
    members: int = 1
    reference: bool = True  # lives in a SharedBuffer and can be monitored


@dataclass(frozen=True)
class ScriptStep:
    """One declared access: parameter, kind, and gap before it (fr-cycles)."""

    param: str
    kind: str
    gap_frs: float


@dataclass(frozen=True)
class TargetDescriptor:
    id: str
    param_specs: tuple[ParamSpec, ...]
    invoke: object  # generator function (args, gaps) -> state dict
    oracle: object  # state dict -> verdict string
    annotation: str
    category: str
    access_script: tuple[ScriptStep, ...]
    main_gap: str = "gap"  # gap name that gap_override replaces
    gap_frs: dict = field(default_factory=dict)  # name -> fr-cycles
    exploit_param: int = 0
    preferred_strategy: str = "Increment"
    fire_on_hit: int = 1  # which detected access triggers the flip

    def resolve_gaps(self, timing: SimTiming, gap_override: int | None = None) -> dict:
        c = timing.fr_cycle_cost
        gaps = {name: max(1, round(frs * c)) for name, frs in self.gap_frs.items()}
        if gap_override is not None:
            if gap_override < 0:
                raise UsageError("gap_override must be >= 0")
            gaps[self.main_gap] = gap_override
        return gaps

    def param(self, index: int) -> ParamSpec:
        for spec in self.param_specs:
            if spec.index == index:
                return spec
        raise UsageError(f"target {self.id} has no parameter {index}")

    def nominal_steps(self) -> int:
        return len(self.access_script)

    def flip_window_frs(self) -> tuple[float, float]:
        """Nominal (start, end) of the exploit window, in fr-cycles from entry.

        The window spans from access ``fire_on_hit`` to the following
        access of the same parameter; a busy-wait competitor tunes its
        sleep against this.
        """
        pname = self.param_specs[self.exploit_param].name
        t = 0.0
        seen = 0
        start = end = None
        for step in self.access_script:
            t += step.gap_frs
            if step.param == pname:
                seen += 1
                if seen == self.fire_on_hit:
                    start = t
                elif start is not None and end is None:
                    end = t
                    break
        if start is None or end is None:
            raise UsageError(f"target {self.id} has no flip window")
        return start, end

    def script_json(self) -> list:
        return [[s.param, s.kind, s.gap_frs] for s in self.access_script]


# --------------------------------------------------------------------------- #
# corpus targets


def _naive_strcpy(args, gaps):
    """Length-check-then-copy with no revalidation (the classic bug)."""
    state = {"capacity": STRCPY_CAPACITY, "rejected": False, "copied": 0}
    yield ("idle", gaps["warmup"])
    s1 = yield ("r", "str")
    if len(s1) > STRCPY_CAPACITY:
        state["rejected"] = True
        yield ("idle", gaps["tail"])
        return state
    yield ("idle", gaps["gap"])
    s2 = yield ("r", "str")  # copy loop runs to s2's terminator
    state["copied"] = len(s2)
    yield ("idle", gaps["tail"])
    return state


def _naive_strcpy_oracle(state):
    if state["rejected"]:
        return BENIGN
    return CORRUPTED if state["copied"] > state["capacity"] else BENIGN


def _safe_retry_copy(args, gaps):
    """Length, allocate, copy, then verify termination; retry on mismatch."""
    state = {"attempts": 0, "exhausted": False}
    yield ("idle", gaps["warmup"])
    while True:
        state["attempts"] += 1
        s1 = yield ("r", "str")
        length = len(s1)
        yield ("idle", gaps["gap"])
        s2 = yield ("r", "str")
        # copy of exactly `length` bytes; terminator present iff the source
        # did not grow in between
        if len(s2) <= length:
            break
        if state["attempts"] > RETRY_BUDGET:
            state["exhausted"] = True
            break
        yield ("idle", gaps["retry"])
    yield ("idle", gaps["tail"])
    return state


def _safe_retry_copy_oracle(state):
    return FAULT if state["exhausted"] else BENIGN


def _dedupe_analog(args, gaps):
    """Count is fetched for the allocation and again for the iteration."""
    state = {}
    yield ("idle", gaps["warmup"])
    c1 = yield ("r", "count")
    state["allocated"] = c1
    yield ("idle", gaps["gap"])  # memdup + setup between the two fetches
    c2 = yield ("r", "count")
    yield ("idle", gaps["peek"])
    _records = yield ("r", "records")
    state["iterated"] = c2
    yield ("idle", gaps["tail"])
    return state


def _dedupe_analog_oracle(state):
    return CORRUPTED if state["iterated"] > state["allocated"] else BENIGN


def _switch_jump_table(args, gaps):
    """Compiler-style dispatch: one fetch bounds-checks, a second indexes."""
    state = {"table": SWITCH_TABLE_SIZE, "checked": None, "dispatched": None}
    yield ("idle", gaps["warmup"])
    s1 = yield ("r", "selector")
    state["checked"] = s1
    if not 0 <= s1 < SWITCH_TABLE_SIZE:
        yield ("idle", gaps["tail"])
        return state  # default case, no table access
    yield ("idle", gaps["gap"])
    s2 = yield ("r", "selector")
    state["dispatched"] = s2
    yield ("idle", gaps["tail"])
    return state


def _switch_jump_table_oracle(state):
    idx = state["dispatched"]
    if idx is None:
        return BENIGN
    if not 0 <= idx < state["table"]:
        return CORRUPTED
    return BENIGN


def _switch_flags(state):
    idx = state["dispatched"]
    if idx is not None and idx != state["checked"] and 0 <= idx < state["table"]:
        return {"wrong_case": True}
    return {}


def _multi_check_invoke(n_checks):
    def invoke(args, gaps):
        state = {"checks": [], "use": None}
        yield ("idle", gaps["warmup"])
        for _ in range(n_checks):
            v = yield ("r", "value")
            state["checks"].append(v)
            yield ("idle", gaps["gap"])
        state["use"] = yield ("r", "value")
        yield ("idle", gaps["tail"])
        return state

    return invoke


def _multi_check_oracle(state):
    checks = state["checks"]
    if any(v != checks[0] for v in checks):
        return FAULT  # revalidation noticed the change
    return CORRUPTED if state["use"] > checks[0] else BENIGN


def _single_fetch(args, gaps):
    yield ("idle", gaps["warmup"])
    _ = yield ("r", "buf")
    yield ("idle", gaps["tail"])
    return {}


def _two_fetch(args, gaps):
    yield ("idle", gaps["warmup"])
    _ = yield ("r", "buf")
    yield ("idle", gaps["gap"])
    _ = yield ("r", "buf")
    yield ("idle", gaps["tail"])
    return {}


def _inout_buffer(args, gaps):
    """One read and one write to the same line; probes cannot tell them apart."""
    yield ("idle", gaps["warmup"])
    v = yield ("r", "buf")
    yield ("idle", gaps["gap"])
    yield ("w", "buf", v + 1)  # result written in place
    yield ("idle", gaps["tail"])
    return {}


def _struct_members(args, gaps):
    """Two adjacent members of one structure share a cache line."""
    yield ("idle", gaps["warmup"])
    _ = yield ("rm", "rec", 0)
    yield ("idle", gaps["gap"])
    _ = yield ("rm", "rec", 1)
    yield ("idle", gaps["tail"])
    return {}


def _filename_cache(args, gaps):
    """Name lookup touches the buffer repeatedly before caching it."""
    yield ("idle", gaps["warmup"])
    for _ in range(7):
        _ = yield ("r", "name")
        yield ("idle", gaps["gap"])
    yield ("idle", gaps["tail"])
    return {}


def _sanity_ok(args, gaps):
    """Two fetches with correct revalidation: a change is detected safely."""
    state = {"mismatch": False}
    yield ("idle", gaps["warmup"])
    v1 = yield ("r", "value")
    yield ("idle", gaps["gap"])
    v2 = yield ("r", "value")
    if v2 != v1:
        state["mismatch"] = True
    yield ("idle", gaps["tail"])
    return state


def _sanity_ok_oracle(state):
    return FAULT if state["mismatch"] else BENIGN


def _always_benign(_state):
    return BENIGN


# --------------------------------------------------------------------------- #
# descriptor table

_WARM = 3.0
_GAP = 4.0
_TAIL = 4.0
#: paper-scale inter-fetch distance of the dedupe bug, in fr-cycles
#: (about 10,000 cycles against a ~300-cycle probe pair)
DEDUPE_GAP_FRS = 33.5


def _mk(id, params, invoke, oracle, annotation, category, script, gap_frs, **kw):
    return TargetDescriptor(
        id=id,
        param_specs=tuple(params),
        invoke=invoke,
        oracle=oracle,
        annotation=annotation,
        category=category,
        access_script=tuple(ScriptStep(*s) for s in script),
        gap_frs=gap_frs,
        **kw,
    )


def multi_check_target(n_checks: int) -> TargetDescriptor:
    if not 1 <= n_checks <= 8:
        raise UsageError("n_checks must be in [1, 8]")
    script = []
    gap = _WARM
    for _ in range(n_checks + 1):
        script.append(("value", READ, gap))
        gap = _GAP
    return _mk(
        f"multi_check_{n_checks}",
        [ParamSpec(0, "value", "IntScalar", 8, "int_range:0:1000")],
        _multi_check_invoke(n_checks),
        _multi_check_oracle,
        EXPLOITABLE,
        CAT_SANITY,
        script,
        {"warmup": _WARM, "gap": _GAP, "tail": _TAIL},
        fire_on_hit=n_checks,
    )


def build_registry() -> dict[str, TargetDescriptor]:
    """The full corpus, keyed by target id."""
    reg: dict[str, TargetDescriptor] = {}

    def add(t: TargetDescriptor) -> None:
        reg[t.id] = t

    add(_mk(
        "naive_strcpy",
        [ParamSpec(0, "str", "CString", 64, f"cstring_upto:{STRCPY_CAPACITY}")],
        _naive_strcpy,
        _naive_strcpy_oracle,
        EXPLOITABLE,
        CAT_STRINGS,
        [("str", READ, _WARM), ("str", READ, _GAP)],
        {"warmup": _WARM, "gap": _GAP, "tail": _TAIL},
        preferred_strategy="RandomValue",
    ))
    add(_mk(
        "safe_retry_copy",
        [ParamSpec(0, "str", "CString", 64, f"cstring_upto:{STRCPY_CAPACITY}")],
        _safe_retry_copy,
        _safe_retry_copy_oracle,
        NON_EXPLOITABLE,
        CAT_STRINGS,
        [("str", READ, _WARM), ("str", READ, _GAP)],
        {"warmup": _WARM, "gap": _GAP, "retry": 1.0, "tail": _TAIL},
    ))
    add(_mk(
        "dedupe_analog",
        [
            ParamSpec(0, "count", "IntScalar", 8, f"int_range:1:{DEDUPE_MAX_RECORDS}"),
            ParamSpec(1, "records", "Buffer", 128, "records_for_count"),
        ],
        _dedupe_analog,
        _dedupe_analog_oracle,
        EXPLOITABLE,
        CAT_SANITY,
        [("count", READ, _WARM), ("count", READ, DEDUPE_GAP_FRS), ("records", READ, 0.5)],
        {"warmup": _WARM, "gap": DEDUPE_GAP_FRS, "peek": 0.5, "tail": _TAIL},
    ))
    add(_mk(
        "switch_jump_table",
        [ParamSpec(0, "selector", "IntScalar", 8, f"int_range:0:{SWITCH_TABLE_SIZE - 1}")],
        _switch_jump_table,
        _switch_jump_table_oracle,
        EXPLOITABLE,
        CAT_SANITY,
        [("selector", READ, _WARM), ("selector", READ, _GAP)],
        {"warmup": _WARM, "gap": _GAP, "tail": _TAIL},
    ))
    for n in range(1, 9):
        add(multi_check_target(n))
    for t in controls():
        add(t)
    return reg


def controls() -> list[TargetDescriptor]:
    """Non-exploitable and single-fetch control targets."""
    out = []
    out.append(_mk(
        "single_fetch",
        [ParamSpec(0, "buf", "Buffer", 64, "int_range:0:255")],
        _single_fetch,
        _always_benign,
        SINGLE_FETCH,
        CAT_SANITY,
        [("buf", READ, _WARM)],
        {"warmup": _WARM, "tail": _TAIL},
    ))
    out.append(_mk(
        "two_fetch",
        [ParamSpec(0, "buf", "Buffer", 64, "int_range:0:255")],
        _two_fetch,
        _always_benign,
        NON_EXPLOITABLE,
        CAT_SANITY,
        [("buf", READ, _WARM), ("buf", READ, _GAP)],
        {"warmup": _WARM, "gap": _GAP, "tail": _TAIL},
    ))
    out.append(_mk(
        "inout_buffer",
        [ParamSpec(0, "buf", "InOutBuffer", 64, "int_range:0:255")],
        _inout_buffer,
        _always_benign,
        NON_EXPLOITABLE,
        CAT_SHARED_INOUT,
        [("buf", READ, _WARM), ("buf", WRITE, _GAP)],
        {"warmup": _WARM, "gap": _GAP, "tail": _TAIL},
    ))
    out.append(_mk(
        "struct_members",
        [ParamSpec(0, "rec", "StructWithMembers", 16, "struct_pair", members=2)],
        _struct_members,
        _always_benign,
        NON_EXPLOITABLE,
        CAT_STRUCT,
        [("rec", READ, _WARM), ("rec", READ, _GAP)],
        {"warmup": _WARM, "gap": _GAP, "tail": _TAIL},
    ))
    out.append(_mk(
        "filename_cache",
        [ParamSpec(0, "name", "FileNameLike", 64, "filename")],
        _filename_cache,
        _always_benign,
        NON_EXPLOITABLE,
        CAT_FILENAMES,
        [("name", READ, _WARM)] + [("name", READ, _GAP)] * 6,
        {"warmup": _WARM, "gap": _GAP, "tail": _TAIL},
    ))
    out.append(_mk(
        "sanity_ok",
        [ParamSpec(0, "value", "IntScalar", 8, "int_range:0:1000")],
        _sanity_ok,
        _sanity_ok_oracle,
        NON_EXPLOITABLE,
        CAT_SANITY,
        [("value", READ, _WARM), ("value", READ, _GAP)],
        {"warmup": _WARM, "gap": _GAP, "tail": _TAIL},
    ))
    return out


def result_flags(target: TargetDescriptor, state: dict) -> dict:
    """Documented benign divergences (e.g. the wrong-case switch dispatch)."""
    if target.id == "switch_jump_table":
        return _switch_flags(state)
    flags = {}
    if state.get("attempts", 0) > 1:
        flags["retries"] = state["attempts"] - 1
    return flags


#: canonical single-flip mutation per target, used by the ground-truth oracle
def canonical_flip_value(target: TargetDescriptor, args: dict):
    pname = target.param_specs[target.exploit_param].name
    original = args[pname]
    if target.id in ("naive_strcpy", "safe_retry_copy"):
        return b"Z" * (STRCPY_CAPACITY + 17)
    if target.id == "switch_jump_table":
        return SWITCH_TABLE_SIZE + 3
    if isinstance(original, int):
        return original + 1
    if isinstance(original, tuple):
        return tuple(v + 1 for v in original)
    return original + b"!"
