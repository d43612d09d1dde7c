from __future__ import annotations

import csv
from typing import TYPE_CHECKING, Any

import msgspec

from pycinematic.cli import COMMANDS
from pycinematic.errors import InvalidParameterError

if TYPE_CHECKING:
    from pathlib import Path


def list_bundles(root: Path) -> list[Path]:
    """Return the run bundles directly under `root`, known commands first."""
    if not root.is_dir():
        return []
    found = [p for p in root.iterdir() if (p / "report.json").is_file()]
    order = {name: i for i, name in enumerate(COMMANDS)}
    return sorted(found, key=lambda p: (order.get(p.name, order.get(p.name.split("-", 1)[0], len(order))), p.name))


class RunBundleService:
    """Read-only view of one run bundle on disk."""

    def __init__(self, path: Path) -> None:  # noqa: D107 (trivial attribute assignment)
        self.path: Path = path

    @property
    def command(self) -> str:
        """The command that wrote this bundle."""
        return self.path.name

    @property
    def report(self) -> Any:
        """Decoded `report.json`.

        Raises:
            InvalidParameterError: if the report is missing or not JSON.
        """
        try:
            return msgspec.json.decode((self.path / "report.json").read_bytes())
        except (OSError, msgspec.DecodeError) as e:
            raise InvalidParameterError(f"Couldn't read report of '{self.command}': {e}") from e

    @property
    def tables(self) -> list[Path]:
        """CSV tables of the bundle in name order."""
        return sorted((self.path / "tables").glob("*.csv"))

    @staticmethod
    def read_table(path: Path) -> tuple[list[str], list[list[str]]]:
        """Return the header and rows of a CSV table."""
        with path.open(newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
        return (rows[0], rows[1:]) if rows else ([], [])
