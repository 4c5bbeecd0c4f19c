"""Processor feature bits: reporting and toggling.

The flag table decodes IA32_MISC_ENABLE.  Polarity matters: prefetcher
bits are disable bits (set means off), feature bits are enable bits.
Capability flags (BTS, PEBS, MONITOR/MWAIT) describe what the part can
do rather than a switch, so they render as supported/unsupported and
reject writes.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import FeatureError
from .events.tables import detect_arch

IA32_MISC_ENABLE = 0x1A0


@dataclass(frozen=True)
class FeatureFlag:
    key: str
    label: str
    bit: int
    set_means: str  # 'on' | 'off': meaning of a set bit
    writable: bool
    capability: bool = False

    def state(self, register: int) -> str:
        bit_set = bool(register & (1 << self.bit))
        active = bit_set if self.set_means == "on" else not bit_set
        if self.capability:
            return "supported" if active else "unsupported"
        return "enabled" if active else "disabled"


CORE2_FLAGS = (
    FeatureFlag("FAST_STRINGS", "Fast-Strings", 0, "on", False),
    FeatureFlag("TCC", "Automatic Thermal Control", 3, "on", False),
    FeatureFlag("PERF_MON", "Performance monitoring", 7, "on", False),
    FeatureFlag("HW_PREFETCHER", "Hardware Prefetcher", 9, "off", True),
    FeatureFlag("BTS", "Branch Trace Storage", 11, "off", False, capability=True),
    FeatureFlag("PEBS", "PEBS", 12, "off", False, capability=True),
    FeatureFlag("SPEEDSTEP", "Intel Enhanced SpeedStep", 16, "on", False),
    FeatureFlag("MONITOR", "MONITOR/MWAIT", 18, "on", False, capability=True),
    FeatureFlag("CL_PREFETCHER", "Adjacent Cache Line Prefetch", 19, "off", True),
    FeatureFlag("CPUID_MAX_VAL", "Limit CPUID Maxval", 22, "on", False),
    FeatureFlag("XD_DISABLE", "XD Bit Disable", 34, "on", False),
    FeatureFlag("DCU_PREFETCHER", "DCU Prefetcher", 37, "off", True),
    FeatureFlag("IDA", "Intel Dynamic Acceleration", 38, "off", False),
    FeatureFlag("IP_PREFETCHER", "IP Prefetcher", 39, "off", True),
)


def flag_table(topo) -> tuple[FeatureFlag, ...]:
    """The feature table for this machine; only Core 2 has one."""
    if detect_arch(topo.vendor, topo.family, topo.model) != "core2":
        raise FeatureError(
            "feature control is only supported on Intel Core 2 processors "
            "(this machine: %s family %d model %#x)"
            % (topo.vendor or "unknown vendor", topo.family, topo.model)
        )
    return CORE2_FLAGS


def find_flag(table, name: str) -> FeatureFlag:
    for flag in table:
        if flag.key == name or flag.label == name:
            return flag
    raise FeatureError("unknown feature %r" % name)


def report(os_id: int, backend, topo) -> list[tuple[FeatureFlag, str]]:
    """Decode every flag of the machine's table from the live register."""
    table = flag_table(topo)
    register = backend.read(os_id, IA32_MISC_ENABLE)
    return [(flag, flag.state(register)) for flag in table]


def toggle(os_id: int, name: str, enable: bool, backend, topo) -> str:
    """Set one feature to enabled/disabled via read-modify-write.

    No write is issued when the bit already has the requested value.
    The new state is confirmed by re-reading the register.
    """
    table = flag_table(topo)
    flag = find_flag(table, name)
    if not flag.writable:
        raise FeatureError("feature %s is read-only" % flag.key)
    register = backend.read(os_id, IA32_MISC_ENABLE)
    want_set = enable if flag.set_means == "on" else not enable
    mask = 1 << flag.bit
    current_set = bool(register & mask)
    if current_set != want_set:
        backend.allow_writes({IA32_MISC_ENABLE})
        backend.write(os_id, IA32_MISC_ENABLE,
                      register | mask if want_set else register & ~mask)
    confirmed = backend.read(os_id, IA32_MISC_ENABLE)
    if bool(confirmed & mask) != want_set:
        raise FeatureError(
            "feature %s did not hold the requested value" % flag.key
        )
    return flag.state(confirmed)


def render_report(topo, os_id: int, states) -> str:
    """The feature listing block for one core."""
    sep = "-" * 61
    lines = [
        sep,
        "%-16s%s " % ("CPU name:", topo.cpu_name),
        "%-16s%d " % ("CPU core id:", os_id),
        sep,
    ]
    for flag, state in states:
        lines.append("%-32s%s" % (flag.label + ":", state))
    lines.append(sep)
    return "\n".join(lines) + "\n"
