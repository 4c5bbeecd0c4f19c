"""Model-specific register access.

Two interchangeable backends: DevMsrBackend goes through the kernel's
per-cpu msr device, FixtureMsrBackend replays a recorded register file
so every consumer runs unmodified without hardware privileges.

Fixture file format, one register per line, `#` starts a comment:

    msr <os_id|socket:N> <addr> <value>
    msr <os_id|socket:N> <addr> <value> rate <per-second>
    msr <os_id|socket:N> <addr> seq <v0,v1,...>

socket:N cells are shared by every core of that socket (uncore state).
`rate` registers free-run against the backend clock; `seq` registers
return the scripted values one read at a time.
"""

from __future__ import annotations

import os
import struct
import time
from dataclasses import dataclass, field

from .errors import FixtureError, MsrError

MsrAddress = int

_NS = 10**9


class WallClock:
    """Monotonic wall time in integer nanoseconds."""

    def now_ns(self) -> int:
        return time.monotonic_ns()

    def sleep(self, seconds: float) -> None:
        time.sleep(seconds)


class SimClock:
    """Deterministic clock: only sleep() moves time forward."""

    def __init__(self) -> None:
        self._now_ns = 0

    def now_ns(self) -> int:
        return self._now_ns

    def sleep(self, seconds: float) -> None:
        self._now_ns += int(round(seconds * _NS))


@dataclass
class WriteRecord:
    """One journaled register write."""

    os_id: int
    addr: int
    value: int
    scope: tuple


class _Cell:
    """One fixture register: static, free-running, or scripted."""

    def __init__(self, value: int = 0, rate: float = 0.0,
                 script: list[int] | None = None, t0_ns: int = 0):
        self.base = value
        self.rate = rate
        self.script = script
        self.cursor = 0
        self.t0_ns = t0_ns

    def read(self, now_ns: int, where: str) -> int:
        if self.script is not None:
            if self.cursor >= len(self.script):
                raise FixtureError(
                    "scripted register %s exhausted after %d reads"
                    % (where, len(self.script))
                )
            value = self.script[self.cursor]
            self.cursor += 1
            return value
        if self.rate:
            elapsed = now_ns - self.t0_ns
            if float(self.rate).is_integer():
                return self.base + (int(self.rate) * elapsed) // _NS
            return self.base + int(self.rate * elapsed / _NS)
        return self.base

    def write(self, value: int, now_ns: int) -> None:
        if self.script is not None:
            return  # the script is the recorded truth; writes are absorbed
        self.base = value
        self.t0_ns = now_ns


@dataclass
class MsrFixture:
    """Parsed register fixture, keyed by (scope, addr)."""

    cells: dict[tuple[tuple, int], _Cell] = field(default_factory=dict)


def parse_fixture(text: str, t0_ns: int = 0) -> MsrFixture:
    fixture = MsrFixture()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] != "msr" or len(parts) < 4:
            raise FixtureError("malformed fixture line %d: %r" % (lineno, raw))
        scope_text, addr_text = parts[1], parts[2]
        if scope_text.startswith("socket:"):
            scope = ("socket", int(scope_text.split(":", 1)[1]))
        else:
            scope = ("cpu", int(scope_text, 0))
        try:
            addr = int(addr_text, 0)
        except ValueError:
            raise FixtureError("bad address on line %d: %r" % (lineno, addr_text))
        key = (scope, addr)
        if key in fixture.cells:
            raise FixtureError("duplicate register on line %d: %r" % (lineno, raw))
        if parts[3] == "seq":
            if len(parts) != 5:
                raise FixtureError("malformed seq on line %d: %r" % (lineno, raw))
            script = [int(v, 0) for v in parts[4].split(",") if v]
            if not script:
                raise FixtureError("empty seq on line %d" % lineno)
            fixture.cells[key] = _Cell(script=script)
        elif len(parts) == 4:
            fixture.cells[key] = _Cell(value=int(parts[3], 0), t0_ns=t0_ns)
        elif len(parts) == 6 and parts[4] == "rate":
            rate = float(parts[5])
            fixture.cells[key] = _Cell(value=int(parts[3], 0), rate=rate, t0_ns=t0_ns)
        else:
            raise FixtureError("malformed fixture line %d: %r" % (lineno, raw))
    return fixture


def load_fixture(path: str | os.PathLike[str], t0_ns: int = 0) -> MsrFixture:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_fixture(fh.read(), t0_ns=t0_ns)


class FixtureMsrBackend:
    """Replays an MsrFixture.

    socket_of maps os_id -> socket_id so socket-scoped cells alias
    across the cores of one package.  Writes must be whitelisted via
    allow_writes(); all writes are journaled; reads of registers the
    fixture does not define return zero and leave a note.
    """

    def __init__(self, fixture: MsrFixture, clock=None,
                 socket_of: dict[int, int] | None = None):
        self.fixture = fixture
        self.clock = clock if clock is not None else SimClock()
        self.socket_of = socket_of or {}
        self.journal: list[WriteRecord] = []
        self.notes: list[str] = []
        self._whitelist: set[int] | None = None

    def allow_writes(self, addrs) -> None:
        if self._whitelist is None:
            self._whitelist = set()
        self._whitelist.update(addrs)

    def _resolve(self, os_id: int, addr: int) -> tuple[tuple, _Cell | None]:
        cpu_key = (("cpu", os_id), addr)
        if cpu_key in self.fixture.cells:
            return cpu_key[0], self.fixture.cells[cpu_key]
        socket = self.socket_of.get(os_id)
        if socket is not None:
            sock_key = (("socket", socket), addr)
            if sock_key in self.fixture.cells:
                return sock_key[0], self.fixture.cells[sock_key]
        return cpu_key[0], None

    def read(self, os_id: int, addr: int) -> int:
        scope, cell = self._resolve(os_id, addr)
        if cell is None:
            self.notes.append(
                "cold read: register %#x on cpu %d not in fixture" % (addr, os_id)
            )
            return 0
        return cell.read(self.clock.now_ns(), "%#x@%r" % (addr, scope))

    def write(self, os_id: int, addr: int, value: int) -> None:
        if self._whitelist is None or addr not in self._whitelist:
            raise MsrError(
                "write to register %#x on cpu %d is not permitted" % (addr, os_id)
            )
        scope, cell = self._resolve(os_id, addr)
        if cell is None:
            cell = _Cell(value=0)
            self.fixture.cells[(scope, addr)] = cell
        cell.write(value, self.clock.now_ns())
        self.journal.append(WriteRecord(os_id, addr, value, scope))


class DevMsrBackend:
    """Register access through /dev/cpu/N/msr (needs privileges)."""

    def __init__(self, devfmt: str = "/dev/cpu/%d/msr", clock=None):
        self.devfmt = devfmt
        self.clock = clock if clock is not None else WallClock()
        self.journal: list[WriteRecord] = []
        self.notes: list[str] = []
        self._whitelist: set[int] | None = None
        self._read_fds: dict[int, int] = {}
        self._write_fds: dict[int, int] = {}

    def available(self, os_id: int = 0) -> bool:
        return os.access(self.devfmt % os_id, os.R_OK)

    def allow_writes(self, addrs) -> None:
        if self._whitelist is None:
            self._whitelist = set()
        self._whitelist.update(addrs)

    def _fd(self, os_id: int, writable: bool) -> int:
        table = self._write_fds if writable else self._read_fds
        fd = table.get(os_id)
        if fd is None:
            flags = os.O_WRONLY if writable else os.O_RDONLY
            try:
                fd = os.open(self.devfmt % os_id, flags)
            except OSError as exc:
                raise MsrError(
                    "cannot open msr device for cpu %d: %s" % (os_id, exc)
                ) from exc
            table[os_id] = fd
        return fd

    def read(self, os_id: int, addr: int) -> int:
        try:
            data = os.pread(self._fd(os_id, False), 8, addr)
        except OSError as exc:
            raise MsrError(
                "read of register %#x on cpu %d failed: %s" % (addr, os_id, exc)
            ) from exc
        return struct.unpack("<Q", data)[0]

    def write(self, os_id: int, addr: int, value: int) -> None:
        if self._whitelist is None or addr not in self._whitelist:
            raise MsrError(
                "write to register %#x on cpu %d is not permitted" % (addr, os_id)
            )
        try:
            os.pwrite(self._fd(os_id, True), struct.pack("<Q", value), addr)
        except OSError as exc:
            raise MsrError(
                "write of register %#x on cpu %d failed: %s" % (addr, os_id, exc)
            ) from exc
        self.journal.append(WriteRecord(os_id, addr, value, ("cpu", os_id)))

    def close(self) -> None:
        for table in (self._read_fds, self._write_fds):
            for fd in table.values():
                os.close(fd)
            table.clear()
