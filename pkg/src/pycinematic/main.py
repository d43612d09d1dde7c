from __future__ import annotations

import sys
from pathlib import Path
from typing import TYPE_CHECKING, ClassVar

from textual import work
from textual.app import App, SystemCommand
from typing_extensions import override

from pycinematic.cli import run_cli
from pycinematic.dialogs import RunsFolderScreen
from pycinematic.screen import BundlesScreen
from pycinematic.settings import Settings

if TYPE_CHECKING:
    from collections.abc import Iterable

    from textual.screen import Screen
    from textual.types import CSSPathType


class ReportViewer(App[None]):
    """Terminal browser for run bundles: reports as trees, tables as data tables."""

    CSS_PATH: ClassVar[CSSPathType | None] = "style.tcss"
    TITLE: str | None = "cinematic"

    settings: Settings  # pyright: ignore[reportUninitializedInstanceVariable]

    def __init__(self, folder: Path | None = None) -> None:
        """Initialize the viewer on `folder`, or on the last folder opened."""
        super().__init__()
        self._folder: Path | None = folder

    @property
    def folder(self) -> Path:
        """Folder whose bundles are listed."""
        return self._folder or Path()

    @folder.setter
    def folder(self, value: Path) -> None:
        """Switch folders and remember the choice."""
        self._folder = value
        self.settings.last_folder = str(value)

    def on_mount(self) -> None:
        """Show the bundle list."""
        self.push_screen(BundlesScreen())

    @work(exclusive=True)
    async def action_output_folder(self) -> None:
        """Pick the default output folder of the CLI."""
        dialog = RunsFolderScreen(self.settings.output_dir, "Output Folder", must_exist=False)
        if path := await self.push_screen_wait(dialog):
            self.settings.output_dir = str(path)
            self.notify(f"Runs will be written to {path}", title="Output Folder")

    @override
    def get_system_commands(self, screen: Screen[object]) -> Iterable[SystemCommand]:
        yield SystemCommand("Output Folder", "Pick where runs are written", self.action_output_folder)
        yield from super().get_system_commands(screen)

    def on_load(self) -> None:
        """Load the settings and resolve the starting folder."""
        self.settings = Settings.load()
        self.theme = self.settings.theme
        if self._folder is None:
            self._folder = self.settings.last_folder_path or self.settings.output_path

    def on_exit_app(self) -> None:
        """Persist the theme and the last folder."""
        if hasattr(self, "settings"):
            self.settings.theme = self.theme
            self.settings.save()


def main() -> None:
    """Run the command line."""
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
