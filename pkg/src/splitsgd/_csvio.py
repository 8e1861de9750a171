"""Deterministic CSV / sidecar writing shared by traces and the CLI.

Floats are serialized with repr (shortest round-trip form), +inf as the
bare token ``inf``; rows are written with a fixed "\n" terminator so equal
inputs produce byte-identical files on every platform.
"""

from __future__ import annotations

import math
from typing import Iterable, Mapping

__all__ = ["fmt_value", "write_csv", "write_sidecar"]


def fmt_value(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (int,)):
        return str(value)
    if isinstance(value, float) or hasattr(value, "dtype"):
        value = float(value)
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        if math.isnan(value):
            return "nan"
        return repr(value)
    return str(value)


def write_csv(path, header: list[str], rows: Iterable[tuple]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt_value(v) for v in row) + "\n")


def write_sidecar(out_path, entries: Mapping[str, object]) -> str:
    """Write ``<out_path>.meta`` with sorted key=value lines; returns the
    sidecar path.  No timestamps: reruns must be byte-identical."""
    side = f"{out_path}.meta"
    with open(side, "w", encoding="utf-8", newline="\n") as fh:
        for key in sorted(entries):
            fh.write(f"{key}={fmt_value(entries[key])}\n")
    return side
