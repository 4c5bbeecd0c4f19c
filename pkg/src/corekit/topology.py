"""Thread and cache topology decoding from cpuid records.

Decoding never talks to hardware: it consumes a CpuidDump, so recorded
dumps and live snapshots go through the identical code path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .cpuid import VENDOR_AMD, VENDOR_INTEL, CpuidDump
from .errors import TopologyError


def ceil_log2(n: int) -> int:
    """Smallest w with 2**w >= n (0 for n <= 1)."""
    if n <= 1:
        return 0
    return (n - 1).bit_length()


@dataclass(frozen=True)
class ApicLayout:
    """Bit widths of the SMT and core fields inside an APIC id."""

    smt_width: int
    core_width: int

    def split(self, apic_id: int) -> tuple[int, int, int]:
        """Decompose an APIC id into (smt_id, core_id, socket_id)."""
        smt = apic_id & ((1 << self.smt_width) - 1)
        core = (apic_id >> self.smt_width) & ((1 << self.core_width) - 1)
        socket = apic_id >> (self.smt_width + self.core_width)
        return smt, core, socket

    def join(self, smt: int, core: int, socket: int) -> int:
        return (
            (socket << (self.smt_width + self.core_width))
            | (core << self.smt_width)
            | smt
        )


@dataclass(frozen=True)
class HWThread:
    """One hardware thread with its decoded position."""

    os_id: int
    apic_id: int
    smt_id: int
    core_id: int
    socket_id: int


@dataclass
class CacheDescriptor:
    """One cache level as seen by every core that has an instance of it."""

    level: int
    kind: str  # 'data' | 'instruction' | 'unified'
    size_bytes: int
    associativity: int
    sets: int
    line_size: int
    inclusive: bool = False
    threads_sharing: int = 1
    groups: list[list[int]] = field(default_factory=list)


@dataclass
class TopologyMap:
    """Complete node description assembled from one cpuid dump."""

    cpu_name: str
    vendor: str
    clock_hz: float
    family: int
    model: int
    stepping: int
    sockets: int
    cores_per_socket: int
    threads_per_core: int
    threads: list[HWThread]
    caches: list[CacheDescriptor]
    cache_warnings: list[str] = field(default_factory=list)

    def thread(self, os_id: int) -> HWThread:
        for t in self.threads:
            if t.os_id == os_id:
                return t
        raise TopologyError("unknown hardware thread %d" % os_id)

    def socket_of(self, os_id: int) -> int:
        return self.thread(os_id).socket_id

    def socket_members(self, socket_id: int) -> list[int]:
        """os ids of one socket, ordered by APIC id."""
        members = [t for t in self.threads if t.socket_id == socket_id]
        members.sort(key=lambda t: t.apic_id)
        return [t.os_id for t in members]

    def socket_ids(self) -> list[int]:
        return sorted({t.socket_id for t in self.threads})


def signature(dump: CpuidDump, os_id: int | None = None) -> tuple[int, int, int]:
    """(family, model, stepping) from the leaf 1 processor signature."""
    if os_id is None:
        os_id = dump.os_ids()[0]
    eax = dump.require(os_id, 1).eax
    stepping = eax & 0xF
    base_family = (eax >> 8) & 0xF
    base_model = (eax >> 4) & 0xF
    ext_family = (eax >> 20) & 0xFF
    ext_model = (eax >> 16) & 0xF
    family = base_family + ext_family if base_family == 0xF else base_family
    if base_family in (0x6, 0xF):
        model = (ext_model << 4) | base_model
    else:
        model = base_model
    return family, model, stepping


def _apic_id(dump: CpuidDump, os_id: int) -> int:
    rec = dump.get(os_id, 0xB)
    if rec is not None and dump.require(os_id, 0).eax >= 0xB:
        return rec.edx
    return (dump.require(os_id, 1).ebx >> 24) & 0xFF


def _layout_x2apic(dump: CpuidDump, os_id: int) -> ApicLayout:
    """Extended topology leaf: shift widths reported per level."""
    smt_shift = None
    core_shift = None
    for sub in range(8):
        rec = dump.get(os_id, 0xB, sub)
        if rec is None:
            break
        level_type = (rec.ecx >> 8) & 0xFF
        if level_type == 0:
            break
        shift = rec.eax & 0x1F
        if level_type == 1:
            smt_shift = shift
        elif level_type == 2:
            core_shift = shift
    if smt_shift is None or core_shift is None:
        raise TopologyError(
            "extended topology leaf lacks SMT or core level on thread %d" % os_id
        )
    return ApicLayout(smt_width=smt_shift, core_width=core_shift - smt_shift)


def _layout_intel_legacy(dump: CpuidDump, os_id: int) -> ApicLayout:
    """Pre-extended-leaf Intel: leaf 1 logical count plus leaf 4 core count."""
    leaf1 = dump.require(os_id, 1)
    htt = bool(leaf1.edx & (1 << 28))
    logical = (leaf1.ebx >> 16) & 0xFF if htt else 1
    logical = max(logical, 1)
    cores = 1
    rec = dump.get(os_id, 4)
    if rec is not None and dump.require(os_id, 0).eax >= 4:
        cores = ((rec.eax >> 26) & 0x3F) + 1
    if logical % cores:
        # Round up: addressable ids per core is a power of two.
        smt_per_core = -(-logical // cores)
    else:
        smt_per_core = logical // cores
    return ApicLayout(smt_width=ceil_log2(smt_per_core), core_width=ceil_log2(cores))


def _layout_amd(dump: CpuidDump, os_id: int) -> ApicLayout:
    ext0 = dump.get(os_id, 0x80000000)
    core_width = 0
    if ext0 is not None and ext0.eax >= 0x80000008:
        ecx = dump.require(os_id, 0x80000008).ecx
        nc = ecx & 0xFF
        apic_core_size = (ecx >> 12) & 0xF
        core_width = apic_core_size if apic_core_size else ceil_log2(nc + 1)
    else:
        leaf1 = dump.require(os_id, 1)
        if leaf1.edx & (1 << 28):
            core_width = ceil_log2(max((leaf1.ebx >> 16) & 0xFF, 1))
    return ApicLayout(smt_width=0, core_width=core_width)


def decode_layout(dump: CpuidDump, os_id: int | None = None) -> ApicLayout:
    """APIC id field widths for one thread (same on every thread of a
    homogeneous machine; decode_thread_topology enforces that)."""
    if os_id is None:
        os_id = dump.os_ids()[0]
    if dump.vendor == VENDOR_INTEL:
        if dump.require(os_id, 0).eax >= 0xB and dump.get(os_id, 0xB) is not None:
            return _layout_x2apic(dump, os_id)
        return _layout_intel_legacy(dump, os_id)
    if dump.vendor == VENDOR_AMD:
        return _layout_amd(dump, os_id)
    raise TopologyError("unsupported processor vendor %r" % dump.vendor)


def decode_thread_topology(dump: CpuidDump) -> list[HWThread]:
    """Decode every hardware thread's (smt, core, socket) position.

    Raises TopologyError for unsupported vendors, for contradictory
    field widths across threads, and for duplicate APIC ids.
    """
    os_ids = dump.os_ids()
    if not os_ids:
        raise TopologyError("dump contains no records")
    layout = decode_layout(dump, os_ids[0])
    threads = []
    seen_apic: dict[int, int] = {}
    for os_id in os_ids:
        here = decode_layout(dump, os_id)
        if here != layout:
            raise TopologyError(
                "thread %d reports field widths %r, thread %d reports %r"
                % (os_ids[0], layout, os_id, here)
            )
        apic = _apic_id(dump, os_id)
        if apic in seen_apic:
            raise TopologyError(
                "APIC id %#x appears on threads %d and %d"
                % (apic, seen_apic[apic], os_id)
            )
        seen_apic[apic] = os_id
        smt, core, socket = layout.split(apic)
        threads.append(HWThread(os_id, apic, smt, core, socket))
    return threads


_LEAF4_KIND = {1: "data", 2: "instruction", 3: "unified"}

# Legacy cache descriptor bytes implemented here; anything else that is
# not a no-op byte surfaces as a warning so the gap is visible.
_LEAF2_TABLE = {
    0x2C: (1, "data", 32 * 1024, 8, 64),
    0x30: (1, "instruction", 32 * 1024, 8, 64),
    0x7D: (2, "unified", 2 * 1024 * 1024, 8, 64),
}
_LEAF2_IGNORED = {0x00, 0x01, 0xFF}  # null, TLB-with-no-cache-info, sentinel

_AMD_L2L3_ASSOC = {
    0x1: 1, 0x2: 2, 0x4: 4, 0x6: 8,
    0x8: 16, 0xA: 32, 0xB: 48, 0xC: 64, 0xD: 96, 0xE: 128,
}


def _share_groups(threads: list[HWThread], width: int) -> list[list[int]]:
    """Group os ids whose APIC ids agree above `width` low bits."""
    buckets: dict[int, list[HWThread]] = {}
    for t in threads:
        buckets.setdefault(t.apic_id >> width, []).append(t)
    groups = []
    for key in sorted(buckets, key=lambda k: min(t.apic_id for t in buckets[k])):
        members = sorted(buckets[key], key=lambda t: t.apic_id)
        groups.append([t.os_id for t in members])
    return groups


def _groups_by(threads: list[HWThread], keyfn) -> list[list[int]]:
    buckets: dict[tuple, list[HWThread]] = {}
    for t in threads:
        buckets.setdefault(keyfn(t), []).append(t)
    groups = []
    for key in sorted(buckets, key=lambda k: min(t.apic_id for t in buckets[k])):
        members = sorted(buckets[key], key=lambda t: t.apic_id)
        groups.append([t.os_id for t in members])
    return groups


def _finish(cache: CacheDescriptor) -> CacheDescriptor:
    cache.threads_sharing = max((len(g) for g in cache.groups), default=1)
    return cache


def _caches_leaf4(
    dump: CpuidDump, threads: list[HWThread]
) -> tuple[list[CacheDescriptor], list[str]]:
    os_id = threads[0].os_id
    caches = []
    for sub in range(16):
        rec = dump.get(os_id, 4, sub)
        if rec is None:
            break
        kind_code = rec.eax & 0x1F
        if kind_code == 0:
            break
        if kind_code not in _LEAF4_KIND:
            raise TopologyError(
                "unknown cache type %d in deterministic cache subleaf %d"
                % (kind_code, sub)
            )
        level = (rec.eax >> 5) & 0x7
        line = (rec.ebx & 0xFFF) + 1
        partitions = ((rec.ebx >> 12) & 0x3FF) + 1
        ways = ((rec.ebx >> 22) & 0x3FF) + 1
        sets = rec.ecx + 1
        if line <= 1 and rec.ebx & 0xFFF == 0 and sets == 1:
            raise TopologyError(
                "degenerate cache geometry in subleaf %d (no sets or lines)" % sub
            )
        share_field = (rec.eax >> 14) & 0xFFF
        width = ceil_log2(share_field + 1)
        cache = CacheDescriptor(
            level=level,
            kind=_LEAF4_KIND[kind_code],
            size_bytes=ways * partitions * line * sets,
            associativity=ways,
            sets=sets,
            line_size=line,
            inclusive=bool(rec.edx & 0x2),
            groups=_share_groups(threads, width),
        )
        caches.append(_finish(cache))
    for t in threads[1:]:
        for sub in range(len(caches) + 1):
            base = dump.get(os_id, 4, sub)
            other = dump.get(t.os_id, 4, sub)
            if base is None and other is None:
                continue
            if (base is None or other is None
                    or (base.eax, base.ebx, base.ecx, base.edx)
                    != (other.eax, other.ebx, other.ecx, other.edx)):
                raise TopologyError(
                    "cache records differ between threads %d and %d"
                    " (subleaf %d)" % (os_id, t.os_id, sub)
                )
    return caches, []


def _caches_leaf2(
    dump: CpuidDump, threads: list[HWThread]
) -> tuple[list[CacheDescriptor], list[str]]:
    rec = dump.require(threads[0].os_id, 2)
    caches = []
    warnings = []
    per_core = _groups_by(threads, lambda t: (t.socket_id, t.core_id))
    descriptors = []
    for reg_name, value in (("a", rec.eax), ("b", rec.ebx), ("c", rec.ecx), ("d", rec.edx)):
        if value & (1 << 31):  # register does not hold descriptors
            continue
        data = value.to_bytes(4, "little")
        start = 1 if reg_name == "a" else 0  # low byte of EAX is a call count
        descriptors.extend(data[start:])
    for desc in descriptors:
        if desc in _LEAF2_IGNORED:
            continue
        entry = _LEAF2_TABLE.get(desc)
        if entry is None:
            warnings.append("unhandled cache descriptor byte %#04x" % desc)
            continue
        level, kind, size, ways, line = entry
        cache = CacheDescriptor(
            level=level,
            kind=kind,
            size_bytes=size,
            associativity=ways,
            sets=size // (ways * line),
            line_size=line,
            groups=[list(g) for g in per_core],
        )
        caches.append(_finish(cache))
    caches.sort(key=lambda c: (c.level, c.kind))
    return caches, warnings


def _caches_amd(
    dump: CpuidDump, threads: list[HWThread]
) -> tuple[list[CacheDescriptor], list[str]]:
    os_id = threads[0].os_id
    ext0 = dump.get(os_id, 0x80000000)
    max_ext = ext0.eax if ext0 is not None else 0
    caches = []
    warnings = []
    per_core = _groups_by(threads, lambda t: (t.socket_id, t.core_id))
    per_socket = _groups_by(threads, lambda t: t.socket_id)

    def add(level, kind, size, ways, line, groups):
        if size == 0 or ways == 0 or line == 0:
            return
        cache = CacheDescriptor(
            level=level,
            kind=kind,
            size_bytes=size,
            associativity=ways,
            sets=size // (ways * line),
            line_size=line,
            groups=[list(g) for g in groups],
        )
        caches.append(_finish(cache))

    if max_ext >= 0x80000005:
        rec = dump.require(os_id, 0x80000005)
        for kind, reg in (("data", rec.ecx), ("instruction", rec.edx)):
            size = ((reg >> 24) & 0xFF) * 1024
            ways = (reg >> 16) & 0xFF
            line = reg & 0xFF
            add(1, kind, size, ways, line, per_core)
    if max_ext >= 0x80000006:
        rec = dump.require(os_id, 0x80000006)
        l2_size = ((rec.ecx >> 16) & 0xFFFF) * 1024
        l2_ways = _AMD_L2L3_ASSOC.get((rec.ecx >> 12) & 0xF, 0)
        l2_line = rec.ecx & 0xFF
        add(2, "unified", l2_size, l2_ways, l2_line, per_core)
        l3_size = ((rec.edx >> 18) & 0x3FFF) * 512 * 1024
        l3_ways = _AMD_L2L3_ASSOC.get((rec.edx >> 12) & 0xF, 0)
        l3_line = rec.edx & 0xFF
        add(3, "unified", l3_size, l3_ways, l3_line, per_socket)
    if not caches:
        warnings.append("no cache information in extended leaves")
    return caches, warnings


def decode_cache_topology(
    dump: CpuidDump, threads: list[HWThread] | None = None
) -> tuple[list[CacheDescriptor], list[str]]:
    """Decode cache levels and their sharing groups.

    Returns (caches, warnings); warnings name constructs the decoder
    recognized as cache-related but does not implement.
    """
    if threads is None:
        threads = decode_thread_topology(dump)
    os_id = threads[0].os_id
    if dump.vendor == VENDOR_AMD:
        return _caches_amd(dump, threads)
    max_leaf = dump.require(os_id, 0).eax
    if max_leaf >= 4 and dump.get(os_id, 4) is not None:
        return _caches_leaf4(dump, threads)
    if max_leaf >= 2 and dump.get(os_id, 2) is not None:
        return _caches_leaf2(dump, threads)
    raise TopologyError("no cache description leaves in dump")


def build_topology(dump: CpuidDump) -> TopologyMap:
    """Assemble the full TopologyMap for one dump.

    Raises TopologyError when the machine is not homogeneous, i.e. when
    sockets * cores_per_socket * threads_per_core does not equal the
    number of hardware threads.
    """
    threads = decode_thread_topology(dump)
    caches, warnings = decode_cache_topology(dump, threads)
    family, model, stepping = signature(dump)

    sockets = len({t.socket_id for t in threads})
    cores = len({(t.socket_id, t.core_id) for t in threads})
    if cores % sockets or len(threads) % cores:
        raise TopologyError(
            "non-uniform machine: %d threads over %d cores on %d sockets"
            % (len(threads), cores, sockets)
        )
    cores_per_socket = cores // sockets
    threads_per_core = len(threads) // cores
    if sockets * cores_per_socket * threads_per_core != len(threads):
        raise TopologyError("thread count does not factor over sockets and cores")

    return TopologyMap(
        cpu_name=dump.cpu_name,
        vendor=dump.vendor,
        clock_hz=dump.clock_hz,
        family=family,
        model=model,
        stepping=stepping,
        sockets=sockets,
        cores_per_socket=cores_per_socket,
        threads_per_core=threads_per_core,
        threads=sorted(threads, key=lambda t: t.os_id),
        caches=caches,
        cache_warnings=warnings,
    )
