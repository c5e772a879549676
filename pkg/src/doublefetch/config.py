"""Run configuration: simulator timing constants and backend selection.

The simulator constants are configuration, not claims about any machine.
They are chosen so one flush+reload pair costs ``fr_cycle_cost`` virtual
ticks and hit/miss reload latencies are cleanly separated.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, fields, replace

from .errors import UsageError

PAGE_SIZE = 4096
LINE_SIZE = 64

BACKEND_ENV_VAR = "DOUBLEFETCH_BACKEND"


@dataclass(frozen=True)
class SimTiming:
    """Virtual-time costs of the simulated probe and memory shim.

    One flush+reload pair occupies ``flush_ticks + reload_ticks`` ticks on
    the logical timeline. After a reload that observed a hit, the probe
    spends ``rearm_after_hit`` extra ticks (recording the sample) before the
    next flush; this lockout is what makes the minimum detectable
    inter-fetch gap two pair-lengths.
    """

    hit_latency: int = 70
    miss_latency: int = 200
    flush_ticks: int = 1
    reload_ticks: int = 2
    per_access_ticks: int = 1
    noise_ticks: int = 0  # optional uniform probe pause, off by default
    rearm_after_hit: int | None = None  # None -> 2 * fr_cycle_cost - reload_ticks
    # protection-mode costs for the switch bench (ratios mirror measured
    # overheads of locking vs transactional retry; values are config)
    lock_ticks: int = 19
    tx_begin_ticks: int = 15
    tx_commit_ticks: int = 15

    def __post_init__(self) -> None:
        if self.flush_ticks < 1 or self.reload_ticks < 1 or self.per_access_ticks < 1:
            raise UsageError("tick costs must be >= 1")
        if not 0 < self.hit_latency < self.miss_latency:
            raise UsageError("need 0 < hit_latency < miss_latency")
        if self.noise_ticks < 0:
            raise UsageError("noise_ticks must be >= 0")

    @property
    def fr_cycle_cost(self) -> int:
        return self.flush_ticks + self.reload_ticks

    @property
    def hit_rearm(self) -> int:
        """Delay from a hit reload's completion to the re-arming flush."""
        if self.rearm_after_hit is not None:
            return self.rearm_after_hit
        # floor the detectable gap at exactly two flush+reload cycles
        return 2 * self.fr_cycle_cost - self.reload_ticks

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


#: Timing used by the statistical acceptance runs: a longer pair gives the
#: detection curve a fine-grained phase axis (24 distinct phases per cycle).
ACCEPTANCE_TIMING = SimTiming(flush_ticks=4, reload_ticks=20)


@dataclass(frozen=True)
class RunConfig:
    """Effective configuration for one command or experiment."""

    backend: str = "sim"
    seed: int | None = None
    timing: SimTiming = field(default_factory=SimTiming)
    record_events: bool = False
    monitor_all_lines: bool = False

    def __post_init__(self) -> None:
        if self.backend not in ("sim", "hw"):
            raise UsageError(f"unknown backend {self.backend!r} (expected sim or hw)")
        if self.backend == "sim" and self.seed is None:
            raise UsageError("seed is mandatory when backend = sim")

    def with_timing(self, **kw) -> "RunConfig":
        return replace(self, timing=replace(self.timing, **kw))

    def as_dict(self) -> dict:
        return {
            "backend": self.backend,
            "seed": self.seed,
            "timing": self.timing.as_dict(),
            "record_events": self.record_events,
            "monitor_all_lines": self.monitor_all_lines,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def default_backend_name() -> str:
    return os.environ.get(BACKEND_ENV_VAR, "sim")


_TIMING_KEYS = {f.name for f in fields(SimTiming)}


def load_config_file(path: str) -> dict:
    """Parse a flat ``key = value`` config file into a string dict."""
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            key, val = line.split("=", 1)
            out[key.strip()] = val.strip()
    return out


def build_run_config(options: dict) -> RunConfig:
    """Build a RunConfig from flat string/typed options.

    Recognized keys: ``backend``, ``seed``, ``record_events``,
    ``monitor_all_lines`` and any SimTiming field name (optionally prefixed
    with ``timing.``). Unknown keys raise UsageError.
    """
    timing_kw: dict = {}
    cfg_kw: dict = {}
    for key, val in options.items():
        name = key.removeprefix("timing.")
        if name in _TIMING_KEYS:
            timing_kw[name] = None if str(val) == "None" else int(val)
        elif key == "backend":
            cfg_kw["backend"] = str(val)
        elif key == "seed":
            cfg_kw["seed"] = None if val is None else int(val)
        elif key in ("record_events", "monitor_all_lines"):
            cfg_kw[key] = val if isinstance(val, bool) else str(val).lower() in ("1", "true", "yes")
        else:
            raise UsageError(f"unknown config key {key!r}")
    cfg_kw.setdefault("backend", default_backend_name())
    return RunConfig(timing=SimTiming(**timing_kw), **cfg_kw)
