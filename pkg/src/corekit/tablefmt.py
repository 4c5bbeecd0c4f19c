"""Bordered text tables for measurement reports."""

from __future__ import annotations

from .errors import CorekitError


def format_value(value: float | None) -> str:
    """Six significant digits; undefined values render as a dash."""
    if value is None:
        return "-"
    return "%.6g" % value


def render_table(header: list[str], rows: list[list[str]]) -> str:
    """Render rows between +---+ borders with centered cells.

    Column widths come from the longest cell per column plus one space
    of padding on each side.  Ragged rows are a caller bug.
    """
    for row in rows:
        if len(row) != len(header):
            raise CorekitError(
                "table row has %d cells, header has %d" % (len(row), len(header))
            )
    columns = len(header)
    widths = [
        max(len(str(cell)) for cell in [header[i]] + [row[i] for row in rows]) + 2
        for i in range(columns)
    ]
    border = "+" + "+".join("-" * w for w in widths) + "+"
    def center(text, width):
        # not str.center: the odd space always goes right
        pad = width - len(text)
        left = pad // 2
        return " " * left + text + " " * (pad - left)
    def line(cells):
        return "|" + "|".join(center(str(c), w) for c, w in zip(cells, widths)) + "|"
    out = [border, line(header), border]
    out.extend(line(row) for row in rows)
    out.append(border)
    return "\n".join(out) + "\n"
