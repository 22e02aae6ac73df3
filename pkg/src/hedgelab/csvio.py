"""Deterministic CSV tables: 17 significant digits, LF endings, atomic writes."""

from __future__ import annotations

import csv
import io
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from hedgelab.errors import HedgeLabError


class CsvFileError(HedgeLabError, OSError):
    """I/O failure while writing a table; the message carries the path."""


@dataclass
class CsvTable:
    header: tuple
    rows: list = field(default_factory=list)

    def __post_init__(self):
        self.header = tuple(self.header)
        width = len(self.header)
        for i, row in enumerate(self.rows):
            if len(row) != width:
                raise ValueError(f"row {i} has {len(row)} cells, header has {width}")

    def append(self, *cells):
        if len(cells) != len(self.header):
            raise ValueError(f"row has {len(cells)} cells, header has {len(self.header)}")
        self.rows.append(tuple(cells))


def format_cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float) or hasattr(value, "dtype"):
        x = float(value)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return format(x, ".17g")
    if value is None:
        return ""
    return str(value)


def render(table: CsvTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(table.header)
    for row in table.rows:
        writer.writerow([format_cell(c) for c in row])
    return buf.getvalue()


def write_csv(table: CsvTable, path) -> Path:
    path = Path(path)
    data = render(table).encode("utf-8")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise CsvFileError(f"cannot write {path}: {exc.strerror or exc}") from None
    return path
