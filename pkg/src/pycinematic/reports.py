"""Atomic emission of run bundles: `report.json` plus `tables/*.csv`."""

from __future__ import annotations

import csv
import io
import os
import tempfile
from pathlib import Path
from typing import TYPE_CHECKING, Any

import msgspec
import numpy as np

from pycinematic.dyadic import DyadicSet
from pycinematic.grids import Box

if TYPE_CHECKING:
    from collections.abc import Iterable, Sequence

FLOAT_FORMAT: str = "%.12g"
"""Formatting of floats in CSV tables."""


def _enc_hook(obj: Any) -> Any:
    """Convert numpy values and domain objects msgspec does not know."""
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, DyadicSet):
        return obj.to_record()
    if isinstance(obj, Box):
        return {"lo": list(obj.lo), "hi": list(obj.hi)}
    if isinstance(obj, Path):
        return str(obj)
    raise NotImplementedError(f"Cannot encode objects of type {type(obj).__name__}")


def encode_json(obj: object) -> bytes:
    """Encode a report as indented JSON with sorted keys."""
    data = msgspec.json.encode(obj, enc_hook=_enc_hook, order="sorted")
    return msgspec.json.format(data, indent=2) + b"\n"


def write_bytes_atomic(path: Path, data: bytes) -> None:
    """Write `data` through a temporary file in the same directory."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp_name, path)
    except OSError:
        Path(tmp_name).unlink(missing_ok=True)
        raise


def write_json(path: Path, obj: object) -> Path:
    """Write `obj` as JSON atomically and return the path."""
    write_bytes_atomic(path, encode_json(obj))
    return path


def _cell(value: object) -> object:
    if isinstance(value, (float, np.floating)):
        return FLOAT_FORMAT % value
    if isinstance(value, np.integer):
        return int(value)
    return value


def format_csv(header: Sequence[str], rows: Iterable[Sequence[object]]) -> str:
    """Render rows as CSV text with fixed float formatting."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows([_cell(v) for v in row] for row in rows)
    return buffer.getvalue()


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[object]]) -> Path:
    """Write a CSV table atomically and return the path."""
    write_bytes_atomic(path, format_csv(header, rows).encode("utf-8"))
    return path


class RunBundle:
    """Output directory of one command: `report.json` and a `tables/` folder."""

    def __init__(self, root: Path, command: str) -> None:
        """Place the bundle at `root/command`."""
        self.path: Path = root / command

    @property
    def report_path(self) -> Path:
        """Return the path of `report.json`."""
        return self.path / "report.json"

    def write_report(self, report: object) -> Path:
        """Write the machine-readable report."""
        return write_json(self.report_path, report)

    def write_table(self, name: str, header: Sequence[str], rows: Iterable[Sequence[object]]) -> Path:
        """Write `tables/<name>.csv`."""
        return write_csv(self.path / "tables" / f"{name}.csv", header, rows)

    def tables(self) -> list[Path]:
        """Return the bundle's CSV tables in name order."""
        return sorted((self.path / "tables").glob("*.csv"))
