"""Plain-text rendering of a TopologyMap.

The line formats here are load-bearing: downstream tooling diffs this
output against recorded reports, so padding and wrapping are exact.
"""

from __future__ import annotations

from .topology import CacheDescriptor, TopologyMap

SEPARATOR = "-" * 61
STARS = "*" * 61
WRAP_WIDTH = 64

_KIND_LABEL = {
    "data": "Data cache",
    "instruction": "Instruction cache",
    "unified": "Unified cache",
}


def format_size(size_bytes: int) -> str:
    if size_bytes % (1024 * 1024) == 0:
        return "%d MB" % (size_bytes // (1024 * 1024))
    if size_bytes % 1024 == 0:
        return "%d kB" % (size_bytes // 1024)
    return "%d B" % size_bytes


def format_clock(clock_hz: float) -> str:
    return "%.2f GHz" % (clock_hz / 1e9)


def group_string(group: list[int]) -> str:
    return "( %s )" % " ".join(str(os_id) for os_id in group)


def _wrap_groups(prefix: str, tokens: list[str]) -> list[str]:
    """Greedy-pack tokens after a fixed-width prefix; continuation lines
    start at column zero."""
    if not tokens:
        return [prefix.rstrip()]
    lines = []
    current = prefix + tokens[0]
    for token in tokens[1:]:
        if len(current) + 1 + len(token) <= WRAP_WIDTH:
            current += " " + token
        else:
            lines.append(current)
            current = token
    lines.append(current)
    return lines


def _render_cache(cache: CacheDescriptor, extended: bool) -> list[str]:
    lines = [
        "%-9s%d" % ("Level:", cache.level),
        "%-9s%s" % ("Size:", format_size(cache.size_bytes)),
        "%-9s%s" % ("Type:", _KIND_LABEL[cache.kind]),
    ]
    if extended:
        lines.append("%-17s%d" % ("Associativity:", cache.associativity))
        lines.append("%-17s%d" % ("Number of sets:", cache.sets))
        lines.append("%-17s%d" % ("Cache line size:", cache.line_size))
        lines.append("Inclusive cache" if cache.inclusive else "Non Inclusive cache")
    lines.append("Shared among %d threads" % cache.threads_sharing)
    tokens = [group_string(g) for g in cache.groups]
    lines.extend(_wrap_groups("%-16s" % "Cache groups:", tokens))
    return lines


def render_text(topo: TopologyMap, extended: bool = False) -> str:
    """The sectioned topology report; extended adds cache geometry details."""
    out = [
        SEPARATOR,
        "%-16s%s " % ("CPU name:", topo.cpu_name),
        "%-16s%s " % ("CPU clock:", format_clock(topo.clock_hz)),
        "",
        STARS,
        "Hardware Thread Topology",
        STARS,
        "%-24s%d " % ("Sockets:", topo.sockets),
        "%-24s%d " % ("Cores per socket:", topo.cores_per_socket),
        "%-24s%d " % ("Threads per core:", topo.threads_per_core),
        SEPARATOR,
        "%-16s%-16s%-16s%s" % ("HWThread", "Thread", "Core", "Socket"),
    ]
    for t in topo.threads:
        out.append("%-16d%-16d%-16d%d" % (t.os_id, t.smt_id, t.core_id, t.socket_id))
    out.append(SEPARATOR)
    for socket_id in topo.socket_ids():
        members = topo.socket_members(socket_id)
        out.append("Socket %d: %s" % (socket_id, group_string(members)))
    out.append(SEPARATOR)
    out.append("")
    out.append(STARS)
    out.append("Cache Topology")
    out.append(STARS)
    reported = [c for c in topo.caches if c.kind != "instruction"]
    reported.sort(key=lambda c: c.level)
    for cache in reported:
        out.extend(_render_cache(cache, extended))
        out.append(SEPARATOR)
    for warning in topo.cache_warnings:
        out.append("WARNING: %s" % warning)
    return "\n".join(out) + "\n"


def _center_heavy_left(text: str, width: int) -> str:
    """Center with the extra space (odd padding) on the left."""
    pad = width - len(text)
    if pad <= 0:
        return text
    left = (pad + 1) // 2
    return " " * left + text + " " * (pad - left)


def _box_lines(contents: list[tuple[str, int]], width: int) -> tuple[str, str]:
    """One row of boxes: (border line, content line).

    contents holds (label, span) pairs; a span-1 box is width+4 chars
    overall (label width, one space padding and a border char per side)
    and column slots are separated by one space.
    """
    borders = []
    cells = []
    for label, span in contents:
        interior = span * (width + 4) + (span - 1) - 2
        borders.append("+" + "-" * interior + "+")
        cells.append("|" + _center_heavy_left(label, interior) + "|")
    return " ".join(borders), " ".join(cells)


def render_ascii_art(topo: TopologyMap) -> str:
    """Per-socket box drawing of cores and shared data/unified caches."""
    reported = [c for c in topo.caches if c.kind != "instruction"]
    reported.sort(key=lambda c: c.level)
    blocks = []
    for socket_id in topo.socket_ids():
        threads = [t for t in topo.threads if t.socket_id == socket_id]
        cores: dict[int, list] = {}
        for t in threads:
            cores.setdefault(t.core_id, []).append(t)
        ordered = sorted(cores.values(), key=lambda ts: min(t.apic_id for t in ts))
        col_of_os = {}
        col_labels = []
        for col, ts in enumerate(ordered):
            ts.sort(key=lambda t: t.apic_id)
            col_labels.append("  ".join(str(t.os_id) for t in ts))
            for t in ts:
                col_of_os[t.os_id] = col

        rows = [[(label, 1) for label in col_labels]]
        for cache in reported:
            label = format_size(cache.size_bytes).replace(" ", "")
            row = []
            for group in cache.groups:
                cols = sorted({col_of_os[m] for m in group if m in col_of_os})
                if not cols:
                    continue
                row.append((label, cols[-1] - cols[0] + 1))
            rows.append(row)

        width = 0
        for row in rows:
            for label, span in row:
                if span == 1:
                    width = max(width, len(label))
        width = max(width, 1)

        inner = []
        for row in rows:
            border, cells = _box_lines(row, width)
            inner.extend([border, cells, border])
        frame = len(ordered) * (width + 4) + (len(ordered) - 1)
        top = "+" + "-" * (frame + 2) + "+"
        block = [top]
        for line in inner:
            block.append("| " + line.ljust(frame) + " |")
        block.append(top)
        blocks.append("\n".join(block))
    return "\n\n".join(blocks) + "\n"
