"""Plain-text table rendering driven by column definitions."""

from __future__ import annotations

from typing import Any, Iterable

from .column_config import get_headers


def format_cell(column: dict[str, Any], value: Any) -> str:
    if value is None:
        return "-"
    try:
        return column["format"].format(value)
    except (ValueError, TypeError):
        return str(value)


def render_table(columns: list[dict[str, Any]], rows: Iterable[dict[str, Any]]) -> str:
    """Render rows as an aligned table with a header and separator line.

    Column widths grow to fit the widest cell.
    """
    cells = [[format_cell(c, row.get(c["key"])) for c in columns] for row in rows]
    headers = get_headers(columns)
    widths = [
        max([c["width"], len(headers[i])] + [len(r[i]) for r in cells])
        for i, c in enumerate(columns)
    ]

    def line(values: list[str]) -> str:
        parts = []
        for column, width, value in zip(columns, widths, values):
            parts.append(value.rjust(width) if column["align"] == "right" else value.ljust(width))
        return "  ".join(parts).rstrip()

    out = [line(headers), "  ".join("-" * w for w in widths)]
    out.extend(line(r) for r in cells)
    return "\n".join(out)
