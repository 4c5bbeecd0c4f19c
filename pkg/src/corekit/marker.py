"""In-process measurement markers for named code regions.

Instrumented programs bracket interesting code with start/stop calls;
the CLI hands over the event set, core list, and a result path through
environment variables, and picks the region file up after the target
exits.  Without that environment every call is a silent no-op, so
instrumented binaries run unchanged outside the tool.
"""

from __future__ import annotations

import ctypes
import ctypes.util
import os
import threading
from dataclasses import dataclass, field

from .cpuid import load_dump
from .errors import MarkerError
from .events.engine import parse_event_string, with_implicit_fixed
from .events.tables import arch_for
from .msr import DevMsrBackend, FixtureMsrBackend, load_fixture
from .topology import build_topology

ENV_RESULT = "COREKIT_MARKER_RESULT"
ENV_EVENTS = "COREKIT_MARKER_EVENTS"
ENV_CORES = "COREKIT_MARKER_CORES"
ENV_BACKEND = "COREKIT_BACKEND"
ENV_CPUID_DUMP = "COREKIT_CPUID_DUMP"
ENV_MSR_FIXTURE = "COREKIT_MSR_FIXTURE"


@dataclass
class RegionRecord:
    """Accumulated measurements of one named region.

    Rows are keyed by (thread_id, os_id); counts only ever grow, one
    start/stop pair at a time.
    """

    region_id: int
    name: str
    calls: dict[tuple[int, int], int] = field(default_factory=dict)
    cycles: dict[tuple[int, int], int] = field(default_factory=dict)
    counts: dict[tuple[int, int], dict[str, int]] = field(default_factory=dict)

    def add(self, key: tuple[int, int], deltas: dict[str, int]) -> None:
        self.calls[key] = self.calls.get(key, 0) + 1
        self.cycles[key] = self.cycles.get(key, 0) + int(
            deltas.get("CPU_CLK_UNHALTED_CORE", 0)
        )
        row = self.counts.setdefault(key, {})
        for name, value in deltas.items():
            row[name] = row.get(name, 0) + int(value)


class MarkerSession:
    """Live marker state: registered regions and per-thread snapshots."""

    def __init__(self, number_of_threads: int, number_of_regions: int,
                 arch=None, spec=None, backend=None,
                 result_path: str | None = None):
        self.number_of_threads = number_of_threads
        self.number_of_regions = number_of_regions
        self.arch = arch
        self.spec = spec
        self.backend = backend
        self.result_path = result_path
        self.noop = backend is None or spec is None
        self.regions: list[RegionRecord] = []
        self._noop_regions = 0
        self._open: dict[int, tuple[int, dict[str, int]]] = {}
        self._lock = threading.Lock()
        self.warnings: list[str] = []

    def register_region(self, name: str) -> int:
        if self.noop:
            self._noop_regions += 1
            return self._noop_regions - 1
        if len(self.regions) >= self.number_of_regions:
            raise MarkerError(
                "region capacity %d exceeded" % self.number_of_regions
            )
        if any(r.name == name for r in self.regions):
            raise MarkerError("region %r already registered" % name)
        region = RegionRecord(region_id=len(self.regions), name=name)
        self.regions.append(region)
        return region.region_id

    def _read_counters(self, os_id: int) -> dict[str, int]:
        assert self.spec is not None and self.backend is not None
        out = {}
        for event, slot in self.spec.assignments:
            out[event.name] = self.backend.read(os_id, slot.counter)
        return out

    def start_region(self, thread_id: int, os_id: int) -> None:
        if self.noop:
            return
        with self._lock:
            if thread_id in self._open:
                raise MarkerError(
                    "thread %d starts a region while one is open (nesting "
                    "is not allowed)" % thread_id
                )
            self._open[thread_id] = (os_id, self._read_counters(os_id))

    def stop_region(self, thread_id: int, os_id: int, region_id: int) -> None:
        if self.noop:
            return
        with self._lock:
            if thread_id not in self._open:
                raise MarkerError("thread %d stops without a start" % thread_id)
            if not 0 <= region_id < len(self.regions):
                raise MarkerError("unknown region id %d" % region_id)
            start_os, before = self._open.pop(thread_id)
            after = self._read_counters(os_id)
        deltas = {}
        slot_of = {ev.name: slot for ev, slot in self.spec.assignments}
        for name, end in after.items():
            deltas[name] = (end - before.get(name, 0)) & slot_of[name].mask
        self.regions[region_id].add((thread_id, start_os), deltas)

    def close(self) -> None:
        if self.noop:
            return
        if self._open:
            for thread_id, (os_id, _) in sorted(self._open.items()):
                self.warnings.append(
                    "region left open by thread %d on core %d" % (thread_id, os_id)
                )
            self._open.clear()
        if self.result_path:
            with open(self.result_path, "w", encoding="utf-8") as fh:
                fh.write(render_result(self))


def render_result(session: MarkerSession) -> str:
    """Serialize a session to the region result file format."""
    lines = [
        "threads %d regions %d" % (session.number_of_threads, len(session.regions))
    ]
    for region in session.regions:
        lines.append("region %d %s" % (region.region_id, region.name))
        for key in sorted(region.calls):
            thread_id, os_id = key
            pairs = " ".join(
                "%s=%d" % (name, value)
                for name, value in region.counts[key].items()
            )
            line = "thread %d core %d calls %d cycles %d" % (
                thread_id, os_id, region.calls[key], region.cycles[key]
            )
            lines.append(line + (" " + pairs if pairs else ""))
    for warning in session.warnings:
        lines.append("warning %s" % warning)
    return "\n".join(lines) + "\n"


@dataclass
class ParsedRegion:
    region_id: int
    name: str
    rows: list[dict]


@dataclass
class ParsedResult:
    threads: int
    regions: list[ParsedRegion]
    warnings: list[str]


def parse_result(text: str) -> ParsedResult:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise MarkerError("empty marker result file")
    head = lines[0].split()
    if len(head) != 4 or head[0] != "threads" or head[2] != "regions":
        raise MarkerError("bad marker result header: %r" % lines[0])
    result = ParsedResult(threads=int(head[1]), regions=[], warnings=[])
    current: ParsedRegion | None = None
    for raw in lines[1:]:
        parts = raw.split()
        if parts[0] == "region":
            current = ParsedRegion(
                region_id=int(parts[1]), name=" ".join(parts[2:]), rows=[]
            )
            result.regions.append(current)
        elif parts[0] == "thread":
            if current is None:
                raise MarkerError("row before any region: %r" % raw)
            if parts[2] != "core" or parts[4] != "calls" or parts[6] != "cycles":
                raise MarkerError("bad marker result row: %r" % raw)
            row = {
                "thread_id": int(parts[1]),
                "os_id": int(parts[3]),
                "calls": int(parts[5]),
                "cycles": int(parts[7]),
                "counts": {},
            }
            for pair in parts[8:]:
                name, sep, value = pair.partition("=")
                if not sep:
                    raise MarkerError("bad count pair %r" % pair)
                row["counts"][name] = int(value)
            current.rows.append(row)
        elif parts[0] == "warning":
            result.warnings.append(" ".join(parts[1:]))
        else:
            raise MarkerError("unrecognized marker result line: %r" % raw)
    if len(result.regions) != int(head[3]):
        raise MarkerError(
            "header promises %s regions, file has %d"
            % (head[3], len(result.regions))
        )
    return result


def load_result(path: str | os.PathLike[str]) -> ParsedResult:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_result(fh.read())


def session_from_env(number_of_threads: int, number_of_regions: int,
                     env=None) -> MarkerSession:
    """Build a session from the CLI environment contract.

    Missing environment means the process was not launched by the CLI:
    the session degrades to a no-op shell.
    """
    env = os.environ if env is None else env
    result_path = env.get(ENV_RESULT)
    events = env.get(ENV_EVENTS)
    if not result_path or not events:
        return MarkerSession(number_of_threads, number_of_regions)
    if env.get(ENV_BACKEND, "live") == "fixture":
        dump = load_dump(env[ENV_CPUID_DUMP])
        topo = build_topology(dump)
        backend = FixtureMsrBackend(
            load_fixture(env[ENV_MSR_FIXTURE]),
            socket_of={t.os_id: t.socket_id for t in topo.threads},
        )
    else:
        from .cpuid import LiveCpuidSource

        topo = build_topology(LiveCpuidSource().collect())
        backend = DevMsrBackend()
    arch = arch_for(topo)
    spec = with_implicit_fixed(parse_event_string(events, arch), arch)
    return MarkerSession(
        number_of_threads, number_of_regions,
        arch=arch, spec=spec, backend=backend, result_path=result_path,
    )


_SESSION: MarkerSession | None = None


def marker_init(number_of_threads: int, number_of_regions: int) -> MarkerSession:
    """Process-wide init; call exactly once, before any other marker call."""
    global _SESSION
    if _SESSION is not None:
        raise MarkerError("marker library initialized twice")
    _SESSION = session_from_env(number_of_threads, number_of_regions)
    return _SESSION


def _session() -> MarkerSession:
    if _SESSION is None:
        raise MarkerError("marker library not initialized")
    return _SESSION


def register_region(name: str) -> int:
    return _session().register_region(name)


def start_region(thread_id: int, os_id: int) -> None:
    _session().start_region(thread_id, os_id)


def stop_region(thread_id: int, os_id: int, region_id: int) -> None:
    _session().stop_region(thread_id, os_id, region_id)


def marker_close() -> None:
    global _SESSION
    _session().close()
    _SESSION = None


def _reset_for_tests() -> None:
    global _SESSION
    _SESSION = None


_GETCPU_OVERRIDE = None


def set_processor_id_override(fn) -> None:
    """Test hook: inject the os_id source for fixture runs."""
    global _GETCPU_OVERRIDE
    _GETCPU_OVERRIDE = fn


def get_processor_id() -> int:
    """os_id the calling thread currently executes on."""
    if _GETCPU_OVERRIDE is not None:
        return _GETCPU_OVERRIDE()
    libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6",
                       use_errno=True)
    try:
        cpu = libc.sched_getcpu()
        if cpu >= 0:
            return cpu
    except AttributeError:
        pass
    with open("/proc/self/stat", "rb") as fh:
        fields = fh.read().split()
    return int(fields[38])  # task_cpu, last-executed processor
