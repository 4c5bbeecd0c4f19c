"""Per-architecture PMU register maps and event tables.

Event tables live in text files under events/data/ so they can be
extended without code changes:

    event <NAME> code <hex> umask <hex> scope <core|uncore> counters <slot,...>
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

from ..errors import EventSpecError

PERFEVTSEL0 = 0x186
PMC0 = 0xC1
FIXED_CTR0 = 0x309
FIXED_CTR_CTRL = 0x38D
PERF_GLOBAL_CTRL = 0x38F
UNCORE_GLOBAL_CTRL = 0x391
UNCORE_PMC0 = 0x3B0
UNCORE_PERFEVTSEL0 = 0x3C0


@dataclass(frozen=True)
class CounterSlot:
    """One programmable, fixed, or uncore counter register pair."""

    name: str
    kind: str  # 'fixed' | 'pmc' | 'uncore'
    counter: int
    config: int | None
    width: int
    index: int
    fixed_event: str | None = None

    @property
    def mask(self) -> int:
        return (1 << self.width) - 1


@dataclass(frozen=True)
class EventDefinition:
    """One countable event and the slots able to count it."""

    name: str
    code: int
    umask: int
    scope: str  # 'core' | 'uncore'
    counters: tuple[str, ...]

    def select_value(self) -> int:
        """Event-select register encoding (user+kernel rings, enabled)."""
        value = self.code | (self.umask << 8) | (1 << 22)
        if self.scope == "core":
            value |= (1 << 16) | (1 << 17)
        return value


@dataclass
class ArchTable:
    """Everything the engine needs to know about one PMU generation."""

    name: str
    display: str
    events: dict[str, EventDefinition]
    slots: dict[str, CounterSlot]
    fixed_ctrl: int | None
    global_ctrl: int | None
    uncore_ctrl: int | None
    groups: dict  # name -> EventGroup, populated by groups.load_groups

    def slot(self, name: str) -> CounterSlot:
        try:
            return self.slots[name]
        except KeyError:
            raise EventSpecError(
                "no counter %s on %s" % (name, self.display)
            ) from None

    def event(self, name: str) -> EventDefinition:
        try:
            return self.events[name]
        except KeyError:
            raise EventSpecError(
                "no event %s on %s" % (name, self.display)
            ) from None

    def write_whitelist(self) -> set[int]:
        allowed = set()
        for slot in self.slots.values():
            allowed.add(slot.counter)
            if slot.config is not None:
                allowed.add(slot.config)
        for reg in (self.fixed_ctrl, self.global_ctrl, self.uncore_ctrl):
            if reg is not None:
                allowed.add(reg)
        return allowed

    def uncore_config_addrs(self) -> set[int]:
        addrs = {s.config for s in self.slots.values()
                 if s.kind == "uncore" and s.config is not None}
        if self.uncore_ctrl is not None:
            addrs.add(self.uncore_ctrl)
        return addrs

    def has_fixed(self) -> bool:
        return any(s.kind == "fixed" for s in self.slots.values())


def parse_event_table(text: str) -> dict[str, EventDefinition]:
    events: dict[str, EventDefinition] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] != "event" or len(parts) != 10:
            raise EventSpecError("malformed event table line %d: %r" % (lineno, raw))
        name = parts[1]
        fields = dict(zip(parts[2::2], parts[3::2]))
        missing = {"code", "umask", "scope", "counters"} - set(fields)
        if missing:
            raise EventSpecError(
                "event table line %d lacks %s" % (lineno, ", ".join(sorted(missing)))
            )
        if fields["scope"] not in ("core", "uncore"):
            raise EventSpecError("bad scope on event table line %d" % lineno)
        if name in events:
            raise EventSpecError("duplicate event %s on line %d" % (name, lineno))
        events[name] = EventDefinition(
            name=name,
            code=int(fields["code"], 0),
            umask=int(fields["umask"], 0),
            scope=fields["scope"],
            counters=tuple(c for c in fields["counters"].split(",") if c),
        )
    return events


def _fixed_slots(width: int) -> dict[str, CounterSlot]:
    return {
        "FIXC0": CounterSlot("FIXC0", "fixed", FIXED_CTR0, None, width, 0,
                             fixed_event="INSTR_RETIRED_ANY"),
        "FIXC1": CounterSlot("FIXC1", "fixed", FIXED_CTR0 + 1, None, width, 1,
                             fixed_event="CPU_CLK_UNHALTED_CORE"),
    }


def _pmc_slots(count: int, width: int) -> dict[str, CounterSlot]:
    return {
        "PMC%d" % i: CounterSlot("PMC%d" % i, "pmc", PMC0 + i,
                                 PERFEVTSEL0 + i, width, i)
        for i in range(count)
    }


def _uncore_slots(count: int, width: int) -> dict[str, CounterSlot]:
    return {
        "UPMC%d" % i: CounterSlot("UPMC%d" % i, "uncore", UNCORE_PMC0 + i,
                                  UNCORE_PERFEVTSEL0 + i, width, i)
        for i in range(count)
    }


def _read_data(filename: str) -> str:
    return (
        resources.files("corekit.events")
        .joinpath("data/%s" % filename)
        .read_text(encoding="utf-8")
    )


def _build_core2() -> ArchTable:
    slots = {**_fixed_slots(40), **_pmc_slots(2, 40)}
    return ArchTable(
        name="core2",
        display="Intel Core 2",
        events=parse_event_table(_read_data("events_core2.txt")),
        slots=slots,
        fixed_ctrl=FIXED_CTR_CTRL,
        global_ctrl=PERF_GLOBAL_CTRL,
        uncore_ctrl=None,
        groups={},
    )


def _build_nehalem() -> ArchTable:
    slots = {**_fixed_slots(48), **_pmc_slots(4, 48), **_uncore_slots(8, 48)}
    return ArchTable(
        name="nehalem",
        display="Intel Nehalem",
        events=parse_event_table(_read_data("events_nehalem.txt")),
        slots=slots,
        fixed_ctrl=FIXED_CTR_CTRL,
        global_ctrl=PERF_GLOBAL_CTRL,
        uncore_ctrl=UNCORE_GLOBAL_CTRL,
        groups={},
    )


_BUILDERS = {"core2": _build_core2, "nehalem": _build_nehalem}
_CACHE: dict[str, ArchTable] = {}

# Leaf 1 model numbers (family 6) per PMU generation.  The Westmere
# shrink keeps the Nehalem counter layout, so it shares the table.
_INTEL_MODELS = {
    0x0F: "core2", 0x16: "core2", 0x17: "core2", 0x1D: "core2",
    0x1A: "nehalem", 0x1E: "nehalem", 0x1F: "nehalem", 0x2E: "nehalem",
    0x25: "nehalem", 0x2C: "nehalem", 0x2F: "nehalem",
}


def detect_arch(vendor: str, family: int, model: int) -> str | None:
    if vendor == "GenuineIntel" and family == 6:
        return _INTEL_MODELS.get(model)
    return None


def get_arch_table(name: str) -> ArchTable:
    if name not in _CACHE:
        builder = _BUILDERS.get(name)
        if builder is None:
            raise EventSpecError("no event table for architecture %r" % name)
        table = builder()
        from .groups import load_arch_groups  # cycle: groups parse needs tables

        table.groups = load_arch_groups(table)
        _CACHE[name] = table
    return _CACHE[name]


def arch_for(topo) -> ArchTable:
    """The ArchTable for a decoded machine; EventSpecError if the PMU
    generation is not in the registry."""
    name = detect_arch(topo.vendor, topo.family, topo.model)
    if name is None:
        raise EventSpecError(
            "no performance counter support for %s family %d model %#x"
            % (topo.vendor, topo.family, topo.model)
        )
    return get_arch_table(name)
