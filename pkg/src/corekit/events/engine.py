"""Counter programming, measurement, derived metrics, multiplexing.

All hardware access goes through an MSR backend object, so the whole
engine runs identically against recorded fixtures and live devices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import EventSpecError, MeasurementError
from .groups import RESERVED, EventGroup, eval_formula, formula_variables
from .tables import ArchTable, CounterSlot, EventDefinition

_NS = 10**9


@dataclass
class EventSetSpec:
    """A validated set of event-to-counter assignments."""

    assignments: list[tuple[EventDefinition, CounterSlot]]
    group: EventGroup | None
    text: str

    def event_names(self) -> list[str]:
        return [ev.name for ev, _ in self.assignments]


def parse_event_string(text: str, arch: ArchTable) -> EventSetSpec:
    """Turn a group name or an EVENT:COUNTER,... string into a spec.

    Rejects unknown events and counters, assignments the event table
    does not allow, double-booked counters, and repeated events.
    """
    text = text.strip()
    if not text:
        raise EventSpecError("empty event specification")
    if text in arch.groups:
        group = arch.groups[text]
        assignments = [
            (arch.event(e), arch.slot(s)) for e, s in group.assignments
        ]
        return EventSetSpec(assignments, group, text)
    if ":" not in text:
        raise EventSpecError(
            "%r is neither a group on %s nor an EVENT:COUNTER list"
            % (text, arch.display)
        )
    assignments = []
    used_slots: set[str] = set()
    used_events: set[str] = set()
    for part in text.split(","):
        part = part.strip()
        event_name, sep, slot_name = part.partition(":")
        if not sep or not event_name or not slot_name:
            raise EventSpecError(
                "event assignments look like EVENT:COUNTER, got %r" % part
            )
        event = arch.event(event_name)
        slot = arch.slot(slot_name)
        if slot_name not in event.counters:
            raise EventSpecError(
                "event %s cannot be counted on %s (allowed: %s)"
                % (event_name, slot_name, ", ".join(event.counters))
            )
        if slot_name in used_slots:
            raise EventSpecError("counter %s assigned twice" % slot_name)
        if event_name in used_events:
            raise EventSpecError("event %s listed twice" % event_name)
        used_slots.add(slot_name)
        used_events.add(event_name)
        assignments.append((event, slot))
    return EventSetSpec(assignments, None, text)


@dataclass
class MeasurementResult:
    """Per-core counts and runtimes of one measurement interval."""

    arch: str
    cores: list[int]
    counts: dict[int, dict[str, float]]
    runtime_s: dict[int, float]
    clock_hz: float
    group: str | None = None
    multiplexed: bool = False


class ProgramHandle:
    """Counters programmed and ready; start()/stop() bracket the run.

    On multi-socket machines, uncore events are owned by the lowest
    selected core of each touched socket; only owner cores carry the
    uncore counts in the result (other cores omit those keys entirely,
    they are not zero).
    """

    def __init__(self, arch: ArchTable, spec: EventSetSpec, cores: list[int],
                 backend, topo):
        self.arch = arch
        self.spec = spec
        self.cores = cores
        self.backend = backend
        self.topo = topo
        self.core_events = [
            (ev, slot) for ev, slot in spec.assignments if slot.kind != "uncore"
        ]
        self.uncore_events = [
            (ev, slot) for ev, slot in spec.assignments if slot.kind == "uncore"
        ]
        self.owners: dict[int, int] = {}
        if self.uncore_events:
            for core in cores:
                socket = topo.socket_of(core)
                if socket not in self.owners or core < self.owners[socket]:
                    self.owners[socket] = core
        self._snapshot: dict[tuple[int, str], int] = {}
        self._running = False
        self._t0_ns = 0

    def _slots_for(self, core: int):
        """(core, slot) read/zero targets this core is responsible for."""
        for ev, slot in self.core_events:
            yield ev, slot
        if core in self.owners.values():
            for ev, slot in self.uncore_events:
                yield ev, slot

    def start(self) -> None:
        if self._running:
            raise MeasurementError("measurement already running")
        backend = self.backend
        for core in self.cores:
            for _, slot in self._slots_for(core):
                backend.write(core, slot.counter, 0)
        for core in self.cores:
            for _, slot in self._slots_for(core):
                self._snapshot[(core, slot.name)] = backend.read(core, slot.counter)
        self._t0_ns = backend.clock.now_ns()
        self._running = True

    def stop(self) -> MeasurementResult:
        if not self._running:
            raise MeasurementError("measurement is not running")
        backend = self.backend
        t1_ns = backend.clock.now_ns()
        counts: dict[int, dict[str, float]] = {}
        for core in self.cores:
            per_core: dict[str, float] = {}
            for ev, slot in self._slots_for(core):
                before = self._snapshot[(core, slot.name)]
                after = backend.read(core, slot.counter)
                per_core[ev.name] = (after - before) & slot.mask
            counts[core] = per_core
        wall_s = (t1_ns - self._t0_ns) / _NS
        runtime_s = {}
        for core in self.cores:
            cycles = counts[core].get("CPU_CLK_UNHALTED_CORE")
            if cycles is not None and self.topo.clock_hz > 0:
                runtime_s[core] = cycles / self.topo.clock_hz
            else:
                runtime_s[core] = wall_s
        self._running = False
        self._snapshot.clear()
        return MeasurementResult(
            arch=self.arch.name,
            cores=list(self.cores),
            counts=counts,
            runtime_s=runtime_s,
            clock_hz=self.topo.clock_hz,
            group=self.spec.group.name if self.spec.group else None,
        )


def with_implicit_fixed(spec: EventSetSpec, arch: ArchTable) -> EventSetSpec:
    """Fixed counters cost nothing, so they are always measured on
    architectures that have them."""
    if not arch.has_fixed():
        return spec
    assignments = list(spec.assignments)
    names = {ev.name for ev, _ in assignments}
    used_slots = {slot.name for _, slot in assignments}
    for slot in arch.slots.values():
        if slot.kind != "fixed" or slot.fixed_event is None:
            continue
        if slot.name in used_slots or slot.fixed_event in names:
            continue
        if slot.fixed_event in arch.events:
            assignments.append((arch.events[slot.fixed_event], slot))
    return EventSetSpec(assignments, spec.group, spec.text)


def program(spec: EventSetSpec, cores: list[int], backend, topo) -> ProgramHandle:
    """Write all event-select and enable registers for a measurement.

    Core-scope registers are written once per selected core; uncore
    registers once per touched socket, on the owner core.
    """
    if not cores:
        raise MeasurementError("no cores selected")
    if len(set(cores)) != len(cores):
        raise MeasurementError("core list contains duplicates")
    for core in cores:
        topo.thread(core)  # raises TopologyError for unknown ids
    arch = arch_of(topo)
    spec = with_implicit_fixed(spec, arch)
    handle = ProgramHandle(arch, spec, cores, backend, topo)

    backend.allow_writes(arch.write_whitelist())
    for core in cores:
        global_bits = 0
        fixed_bits = 0
        for ev, slot in handle.core_events:
            if slot.kind == "pmc":
                backend.write(core, slot.config, ev.select_value())
                global_bits |= 1 << slot.index
            elif slot.kind == "fixed":
                fixed_bits |= 0b011 << (4 * slot.index)
                global_bits |= 1 << (32 + slot.index)
        if arch.fixed_ctrl is not None and fixed_bits:
            backend.write(core, arch.fixed_ctrl, fixed_bits)
        if arch.global_ctrl is not None:
            backend.write(core, arch.global_ctrl, global_bits)
    for socket, owner in sorted(handle.owners.items()):
        uncore_bits = 0
        for ev, slot in handle.uncore_events:
            backend.write(owner, slot.config, ev.select_value())
            uncore_bits |= 1 << slot.index
        if arch.uncore_ctrl is not None:
            backend.write(owner, arch.uncore_ctrl, uncore_bits)
    return handle


def arch_of(topo) -> ArchTable:
    from .tables import arch_for

    return arch_for(topo)


def measure(handle: ProgramHandle, workload=None,
            duration: float | None = None) -> MeasurementResult:
    """start/stop around a callable or a timed wait."""
    handle.start()
    if workload is not None:
        workload()
    elif duration is not None:
        handle.backend.clock.sleep(duration)
    return handle.stop()


def derive_metrics(group: EventGroup, counts: dict[int, dict[str, float]],
                   runtime_s: dict[int, float],
                   clock_hz: float) -> dict[int, dict[str, float | None]]:
    """Evaluate a group's formulas per core.  Pure: no register access.

    A metric is None (undefined) on a core where a referenced event is
    absent (uncore counts on non-owner cores) or a division hits zero.
    An event missing from every core is a specification error.
    """
    available: set[str] = set()
    for per_core in counts.values():
        available |= set(per_core)
    for metric in group.metrics:
        refs = formula_variables(metric.ast) - set(RESERVED)
        missing = refs - available
        if missing:
            raise EventSpecError(
                "metric %r needs unmeasured events: %s"
                % (metric.name, ", ".join(sorted(missing)))
            )
    out: dict[int, dict[str, float | None]] = {}
    for core, per_core in counts.items():
        env = dict(per_core)
        env["runtime"] = runtime_s.get(core, 0.0)
        env["clock"] = clock_hz
        out[core] = {m.name: eval_formula(m.ast, env) for m in group.metrics}
    return out


def multiplex(specs: list[EventSetSpec], cores: list[int], backend, topo,
              slice_s: float, total_s: float) -> MeasurementResult:
    """Round-robin the event sets in time slices over total_s seconds.

    Counts are extrapolated by total/active time of each set and the
    result is flagged multiplexed.  With a single set this degrades to
    a plain timed measurement.  A shorter final slice is allowed; every
    set must get at least one slice.
    """
    if not specs:
        raise MeasurementError("no event sets given")
    if slice_s <= 0 or total_s <= 0:
        raise MeasurementError("slice and total durations must be positive")
    slice_ns = int(round(slice_s * _NS))
    total_ns = int(round(total_s * _NS))
    if slice_ns * len(specs) > total_ns:
        raise MeasurementError(
            "%d sets of %gs slices do not fit in %gs"
            % (len(specs), slice_s, total_s)
        )
    if len(specs) == 1:
        handle = program(specs[0], cores, backend, topo)
        return measure(handle, duration=total_s)

    acc: list[dict[int, dict[str, float]]] = [
        {core: {} for core in cores} for _ in specs
    ]
    active_ns = [0] * len(specs)
    elapsed = 0
    turn = 0
    while elapsed < total_ns:
        dt_ns = min(slice_ns, total_ns - elapsed)
        index = turn % len(specs)
        handle = program(specs[index], cores, backend, topo)
        result = measure(handle, duration=dt_ns / _NS)
        for core in cores:
            bucket = acc[index][core]
            for name, value in result.counts[core].items():
                bucket[name] = bucket.get(name, 0.0) + value
        active_ns[index] += dt_ns
        elapsed += dt_ns
        turn += 1

    counts: dict[int, dict[str, float]] = {core: {} for core in cores}
    for index in range(len(specs)):
        scale = total_ns / active_ns[index]
        for core in cores:
            for name, value in acc[index][core].items():
                counts[core][name] = value * scale
    runtime_s = {core: total_ns / _NS for core in cores}
    return MeasurementResult(
        arch=arch_of(topo).name,
        cores=list(cores),
        counts=counts,
        runtime_s=runtime_s,
        clock_hz=topo.clock_hz,
        group=None,
        multiplexed=True,
    )
