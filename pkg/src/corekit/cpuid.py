"""cpuid record collection and dump file handling.

A dump file captures the cpuid responses of every hardware thread of a
machine so that topology decoding can run anywhere.  Format, one record
per line, `#` starts a comment:

    hw_threads: 24
    clock_hz: 2933000000
    vendor: GenuineIntel
    cpu_name: Some Processor
    thread 0 leaf 0x0 subleaf 0x0 a 0xb b 0x756e6547 c 0x6c65746e d 0x49656e69
"""

from __future__ import annotations

import os
import re
import struct
from dataclasses import dataclass, field

from .errors import DumpFormatError

VENDOR_INTEL = "GenuineIntel"
VENDOR_AMD = "AuthenticAMD"


@dataclass(frozen=True)
class CpuidRecord:
    """One cpuid invocation result for one hardware thread."""

    os_id: int
    leaf: int
    subleaf: int
    eax: int
    ebx: int
    ecx: int
    edx: int


@dataclass
class CpuidDump:
    """All cpuid records of a machine plus identification headers."""

    hw_threads: int
    clock_hz: float = 0.0
    vendor: str = ""
    cpu_name: str = "Unknown Processor"
    records: dict[tuple[int, int, int], CpuidRecord] = field(default_factory=dict)

    def add(self, rec: CpuidRecord) -> None:
        self.records[(rec.os_id, rec.leaf, rec.subleaf)] = rec

    def get(self, os_id: int, leaf: int, subleaf: int = 0) -> CpuidRecord | None:
        return self.records.get((os_id, leaf, subleaf))

    def require(self, os_id: int, leaf: int, subleaf: int = 0) -> CpuidRecord:
        rec = self.get(os_id, leaf, subleaf)
        if rec is None:
            raise DumpFormatError(
                "missing cpuid record: thread %d leaf %#x subleaf %#x"
                % (os_id, leaf, subleaf)
            )
        return rec

    def os_ids(self) -> list[int]:
        return sorted({key[0] for key in self.records})


_HEADER_FIELDS = {"hw_threads", "clock_hz", "vendor", "cpu_name"}

_RECORD_RE = re.compile(
    r"thread\s+(\d+)\s+leaf\s+(\S+)\s+subleaf\s+(\S+)"
    r"\s+a\s+(\S+)\s+b\s+(\S+)\s+c\s+(\S+)\s+d\s+(\S+)$"
)


def _parse_int(text: str, where: str) -> int:
    try:
        return int(text, 0)
    except ValueError:
        raise DumpFormatError("bad integer %r in %s" % (text, where)) from None


def parse_dump(text: str) -> CpuidDump:
    """Parse dump file content into a CpuidDump.

    Raises DumpFormatError on malformed lines, on duplicate
    (thread, leaf, subleaf) records, or when the header thread count
    disagrees with the records present.
    """
    headers: dict[str, str] = {}
    records: list[CpuidRecord] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = "line %d" % lineno
        if line.startswith("thread "):
            m = _RECORD_RE.match(line)
            if m is None:
                raise DumpFormatError("malformed record at %s: %r" % (where, raw))
            os_id = _parse_int(m.group(1), where)
            leaf = _parse_int(m.group(2), where)
            subleaf = _parse_int(m.group(3), where)
            regs = [_parse_int(m.group(i), where) for i in range(4, 8)]
            records.append(CpuidRecord(os_id, leaf, subleaf, *regs))
            continue
        key, sep, value = line.partition(":")
        key = key.strip()
        if sep and key in _HEADER_FIELDS:
            headers[key] = value.strip()
            continue
        raise DumpFormatError("unrecognized line at %s: %r" % (where, raw))

    if "hw_threads" not in headers:
        raise DumpFormatError("missing hw_threads header")
    dump = CpuidDump(hw_threads=_parse_int(headers["hw_threads"], "hw_threads header"))
    if "clock_hz" in headers:
        try:
            dump.clock_hz = float(headers["clock_hz"])
        except ValueError:
            raise DumpFormatError(
                "bad clock_hz header: %r" % headers["clock_hz"]
            ) from None
    dump.vendor = headers.get("vendor", "")
    dump.cpu_name = headers.get("cpu_name", dump.cpu_name)

    for rec in records:
        key = (rec.os_id, rec.leaf, rec.subleaf)
        if key in dump.records:
            raise DumpFormatError(
                "duplicate record: thread %d leaf %#x subleaf %#x" % key
            )
        dump.add(rec)

    observed = dump.os_ids()
    if len(observed) != dump.hw_threads:
        raise DumpFormatError(
            "header says %d hw threads but records cover %d"
            % (dump.hw_threads, len(observed))
        )
    if not dump.vendor:
        # Fall back to the vendor string embedded in leaf 0 of thread 0.
        rec = dump.get(observed[0], 0) if observed else None
        if rec is not None:
            dump.vendor = vendor_string(rec)
    return dump


def load_dump(path: str | os.PathLike[str]) -> CpuidDump:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_dump(fh.read())


def dump_to_text(dump: CpuidDump) -> str:
    """Serialize a CpuidDump back to the dump file format."""
    lines = [
        "hw_threads: %d" % dump.hw_threads,
        "clock_hz: %s" % ("%d" % dump.clock_hz if dump.clock_hz == int(dump.clock_hz) else repr(dump.clock_hz)),
        "vendor: %s" % dump.vendor,
        "cpu_name: %s" % dump.cpu_name,
    ]
    for key in sorted(dump.records):
        r = dump.records[key]
        lines.append(
            "thread %d leaf %#x subleaf %#x a %#x b %#x c %#x d %#x"
            % (r.os_id, r.leaf, r.subleaf, r.eax, r.ebx, r.ecx, r.edx)
        )
    return "\n".join(lines) + "\n"


def vendor_string(leaf0: CpuidRecord) -> str:
    """Recover the 12-byte vendor identification string from leaf 0."""
    raw = struct.pack("<III", leaf0.ebx, leaf0.edx, leaf0.ecx)
    return raw.decode("ascii", errors="replace")


class LiveCpuidSource:
    """Reads cpuid leaves through the kernel's per-cpu cpuid device.

    The device interprets the read offset as leaf in the low 32 bits and
    subleaf in the high 32 bits, and executes the instruction on the cpu
    the device node belongs to, so no thread migration is needed.
    """

    def __init__(self, devfmt: str = "/dev/cpu/%d/cpuid"):
        self.devfmt = devfmt

    def available(self) -> bool:
        return os.access(self.devfmt % 0, os.R_OK)

    def read(self, os_id: int, leaf: int, subleaf: int = 0) -> CpuidRecord:
        fd = os.open(self.devfmt % os_id, os.O_RDONLY)
        try:
            data = os.pread(fd, 16, (subleaf << 32) | leaf)
        finally:
            os.close(fd)
        eax, ebx, ecx, edx = struct.unpack("<IIII", data)
        return CpuidRecord(os_id, leaf, subleaf, eax, ebx, ecx, edx)

    def collect(self) -> CpuidDump:
        """Snapshot every leaf needed for topology decode on all cpus."""
        cpus = sorted(
            int(name) for name in os.listdir("/dev/cpu") if name.isdigit()
        )
        if not cpus:
            cpus = sorted(os.sched_getaffinity(0))
        dump = CpuidDump(hw_threads=len(cpus))
        dump.cpu_name, dump.clock_hz = _proc_cpuinfo_identity()
        for cpu in cpus:
            leaf0 = self.read(cpu, 0)
            dump.add(leaf0)
            if cpu == cpus[0]:
                dump.vendor = vendor_string(leaf0)
            max_leaf = leaf0.eax
            for leaf in range(1, min(max_leaf, 0xB) + 1):
                if leaf == 4:
                    for sub in range(16):
                        rec = self.read(cpu, leaf, sub)
                        dump.add(rec)
                        if rec.eax & 0x1F == 0:
                            break
                elif leaf == 0xB:
                    for sub in range(8):
                        rec = self.read(cpu, leaf, sub)
                        dump.add(rec)
                        if (rec.ecx >> 8) & 0xFF == 0:
                            break
                else:
                    dump.add(self.read(cpu, leaf))
            ext0 = self.read(cpu, 0x80000000)
            dump.add(ext0)
            if ext0.eax >= 0x80000000:
                top = min(ext0.eax, 0x80000008)
                for leaf in range(0x80000001, top + 1):
                    dump.add(self.read(cpu, leaf))
        return dump


def _proc_cpuinfo_identity() -> tuple[str, float]:
    """Best-effort (model name, clock Hz) from /proc/cpuinfo."""
    name = "Unknown Processor"
    clock = 0.0
    try:
        with open("/proc/cpuinfo", "r", encoding="utf-8") as fh:
            for line in fh:
                key, _, value = line.partition(":")
                key = key.strip()
                value = value.strip()
                if key == "model name" and name == "Unknown Processor":
                    name = value
                    m = re.search(r"@\s*([\d.]+)\s*GHz", value)
                    if m:
                        clock = float(m.group(1)) * 1e9
                elif key == "cpu MHz" and clock == 0.0:
                    try:
                        clock = float(value) * 1e6
                    except ValueError:
                        pass
    except OSError:
        pass
    return name, clock
