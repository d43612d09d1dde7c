from __future__ import annotations

from pathlib import Path
from typing import TYPE_CHECKING

from textual import on, work
from textual.app import ComposeResult
from textual.binding import Binding
from textual.containers import Center, Container, Horizontal, Middle
from textual.screen import ModalScreen
from textual.widgets import Button, DataTable, Footer, Header, Input, Static
from textual_fspicker import SelectDirectory
from typing_extensions import override

from pycinematic.services import list_bundles

if TYPE_CHECKING:
    from typing import ClassVar

    from textual.binding import BindingType


class TableScreen(ModalScreen[None]):
    """A modal screen showing one CSV table of a run bundle."""

    BINDINGS: ClassVar[list[BindingType]] = [Binding("escape,q", "close", "Close")]

    MAX_ROWS: ClassVar[int] = 5000
    """Rows shown before the table is truncated."""

    def __init__(
        self,
        header: list[str],
        rows: list[list[str]],
        title: str = "Table",
        name: str | None = None,
        id: str | None = None,
        classes: str | None = None,
    ) -> None:
        """Initialize the TableScreen with the table's header and rows."""
        super().__init__(name=name, id=id, classes=classes)
        self._header: list[str] = header
        self._rows: list[list[str]] = rows
        self._title: str = title

    @override
    def compose(self) -> ComposeResult:  # noqa: D102 (pure yield chain, no non-obvious behavior)
        yield Header()
        with Container(id="table-container") as container:
            container.border_title = self._title
            shown = min(len(self._rows), self.MAX_ROWS)
            container.border_subtitle = f"{shown} of {len(self._rows)} row(s)"
            if self._rows:
                yield DataTable(id="csv-table", cursor_type="row", zebra_stripes=True)
            else:
                with Center():
                    with Middle():
                        yield Static("This table is empty.")
        yield Footer()

    def on_mount(self) -> None:
        """Populate the table once mounted."""
        if self._rows:
            table = self.query_one("#csv-table", DataTable)
            table.add_columns(*self._header)
            for row in self._rows[: self.MAX_ROWS]:
                table.add_row(*row)

    def action_close(self) -> None:
        """Close the screen."""
        self.dismiss(None)


class RunsFolderScreen(ModalScreen[Path | None]):
    """A modal screen for choosing a folder of run bundles.

    The status line counts the bundles under the typed path as it changes. With `must_exist` off the
    folder may be missing, since runs create it on first write.
    """

    BINDINGS: ClassVar[list[BindingType]] = [
        Binding("escape", "cancel", "Cancel"),
        Binding("ctrl+s", "accept", "Open"),
        Binding("ctrl+b", "browse", "Browse"),
    ]

    def __init__(
        self,
        value: str | None = None,
        title: str | None = None,
        *,
        must_exist: bool = True,
        name: str | None = None,
        id: str | None = None,
        classes: str | None = None,
    ) -> None:
        """Initialize the dialog on `value`."""
        super().__init__(name=name, id=id, classes=classes)
        self._value: str = value or ""
        self._title: str | None = title
        self._must_exist: bool = must_exist

    @override
    def compose(self) -> ComposeResult:  # noqa: D102 (pure yield chain, no non-obvious behavior)
        yield Header()
        with Container() as container:
            container.border_title = self._title
            with Horizontal(id="folder-row"):
                yield Input(value=self._value, placeholder="Folder holding run bundles...", id="folder-input")
                yield Button("Browse", id="browse-btn")
            yield Static(self.describe(self._value), id="folder-status")
            with Horizontal(id="action-row"):
                yield Button("Open", variant="primary", id="open-btn")
                yield Button("Cancel", id="cancel-btn")
        yield Footer()

    @staticmethod
    def describe(value: str) -> str:
        """Summarize what `value` points at."""
        path = Path(value.strip() or ".")
        if path.is_file():
            return "Not a folder"
        if not path.exists():
            return "Folder does not exist yet"
        count = len(list_bundles(path))
        return f"{count} run bundle(s)" if count else "No run bundles here"

    @on(Input.Changed, "#folder-input")
    def refresh_status(self, event: Input.Changed) -> None:
        """Recount bundles for the typed path."""
        event.input.remove_class("-invalid")
        self.query_one("#folder-status", Static).update(self.describe(event.value))

    @on(Button.Pressed, "#browse-btn")
    @work(exclusive=True)
    async def action_browse(self) -> None:
        """Pick the folder with the directory browser."""
        folder_input = self.query_one("#folder-input", Input)
        start = Path(folder_input.value.strip() or ".").absolute()
        while not start.is_dir() and start != start.parent:
            start = start.parent
        if path := await self.app.push_screen_wait(SelectDirectory(location=start)):
            folder_input.value = str(path)

    @on(Button.Pressed, "#open-btn")
    @on(Input.Submitted, "#folder-input")
    def action_accept(self) -> None:
        """Dismiss with the folder if it is usable."""
        folder_input = self.query_one("#folder-input", Input)
        value = folder_input.value.strip()
        path = Path(value) if value else None
        usable = path is not None and (path.is_dir() or not (self._must_exist or path.exists()))
        if not usable:
            folder_input.add_class("-invalid")
            self.notify(f"{value or 'Empty path'}: {self.describe(value).lower()}", severity="error")
            return
        self.dismiss(path)

    @on(Button.Pressed, "#cancel-btn")
    def action_cancel(self) -> None:
        """Dismiss without a folder."""
        self.dismiss(None)
