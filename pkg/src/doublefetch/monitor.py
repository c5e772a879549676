"""Per-parameter probe monitoring of one black-box invocation (P1).

A probe runs flush+reload pairs over each watched parameter's line for the
whole invocation; distinct flush epochs with a hit count as distinct
fetches. ``is_double_fetch`` is simply "two or more fetches seen".
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

from .config import SimTiming
from .errors import UsageError
from .probe import SimProbeBackend
from .runtime import ProbePairActor, SimCells, invoke_timed
from .targets import TargetDescriptor, build_registry


@dataclass(frozen=True)
class MonitorConfig:
    params_to_watch: tuple[int, ...] | None = None  # None -> every reference param
    probe_period: int | None = None  # ticks; None -> one pair back to back
    max_duration: int | None = None  # stop sampling past this many ticks
    phase: int = 0  # probe start offset relative to invocation entry
    monitor_all_lines: bool = False


@dataclass(frozen=True)
class ParamReport:
    index: int
    hit_timestamps: tuple[int, ...]

    @property
    def fetch_count(self) -> int:
        return len(self.hit_timestamps)


@dataclass(frozen=True)
class MonitorReport:
    target_id: str
    per_param: tuple[ParamReport, ...]
    invocation_result: dict = field(default_factory=dict)

    def param(self, index: int) -> ParamReport:
        for pr in self.per_param:
            if pr.index == index:
                return pr
        raise UsageError(f"report has no parameter {index}")

    def fetch_count(self, index: int) -> int:
        return self.param(index).fetch_count

    def to_json(self) -> str:
        payload = {
            "schema_version": 1,
            "target": self.target_id,
            "result": self.invocation_result,
            "params": [
                {
                    "param": pr.index,
                    "fetch_count": pr.fetch_count,
                    "hits": list(pr.hit_timestamps),
                }
                for pr in self.per_param
            ],
        }
        return json.dumps(payload, sort_keys=True, indent=2)


def monitor_invoke(backend: SimProbeBackend, target: TargetDescriptor, args: dict,
                   cfg: MonitorConfig | None = None,
                   gap_override: int | None = None) -> MonitorReport:
    """Run the target once with one probe per watched parameter."""
    cfg = cfg or MonitorConfig()
    timing = backend.timing
    if cfg.probe_period is not None and cfg.probe_period < timing.fr_cycle_cost:
        raise UsageError(
            f"probe_period {cfg.probe_period} is below the flush+reload cycle cost "
            f"{timing.fr_cycle_cost}; the probe cannot keep up"
        )
    if cfg.params_to_watch is None:
        watched = tuple(s.index for s in target.param_specs if s.reference)
    else:
        watched = cfg.params_to_watch
    for idx in watched:
        if not target.param(idx).reference:
            raise UsageError(
                f"parameter {idx} of {target.id} is value-typed and cannot be monitored"
            )

    cells = SimCells(backend, target, args)
    start = backend.engine.clock.now
    probes = []
    for idx in watched:
        name = target.param(idx).name
        lines = cells.monitored_lines(name, all_lines=cfg.monitor_all_lines)
        probes.append(ProbePairActor(lines, timing, start, phase=cfg.phase,
                                     probe_period=cfg.probe_period))
    state, verdict, flags, tactor = invoke_timed(
        backend, target, args, aux=probes, gap_override=gap_override, cells=cells)

    horizon = None if cfg.max_duration is None else start + cfg.max_duration
    per_param = []
    for idx, probe in zip(watched, probes):
        hits = probe.hits if horizon is None else [t for t in probe.hits if t <= horizon]
        per_param.append(ParamReport(idx, tuple(hits)))
    result = {"verdict": verdict}
    if flags:
        result["flags"] = flags
    return MonitorReport(target.id, tuple(per_param), result)


def is_double_fetch(report: MonitorReport, param: int) -> bool:
    return report.fetch_count(param) >= 2


def detection_probability(gap: int, timing: SimTiming, trials: int, seed: int,
                          target: TargetDescriptor | None = None) -> float:
    """Empirical probability that a two-access target at `gap` ticks is
    reported as a double fetch, over uniformly random probe phases."""
    if gap < 0:
        raise UsageError("gap must be >= 0")
    if trials < 1:
        raise UsageError("trials must be >= 1")
    if target is None:
        target = build_registry()["two_fetch"]
    rng = random.Random(seed)
    c = timing.fr_cycle_cost
    args = {target.param_specs[0].name: 1}
    hits = 0
    for _ in range(trials):
        backend = SimProbeBackend(timing, record_events=False)
        cfg = MonitorConfig(params_to_watch=(0,), phase=rng.randrange(c))
        report = monitor_invoke(backend, target, args, cfg, gap_override=gap)
        if report.fetch_count(0) >= 2:
            hits += 1
    return hits / trials
