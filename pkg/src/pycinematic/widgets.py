from __future__ import annotations

from typing import TYPE_CHECKING

from rich.text import Text
from textual import work
from textual.binding import Binding
from textual.reactive import reactive
from textual.widget import Widget
from textual.widgets import Label, ListItem, ListView, Tree
from typing_extensions import override

from pycinematic.decorators import catch_errors
from pycinematic.dialogs import TableScreen

if TYPE_CHECKING:
    from pathlib import Path
    from typing import Any, ClassVar

    from rich.console import RenderableType
    from textual.binding import BindingType

    from pycinematic.main import ReportViewer
    from pycinematic.services import RunBundleService


class BundleList(ListView):
    """List of run bundles under the viewer's folder."""

    def __init__(self, bundles: list[Path], *, id: str | None = None) -> None:
        """Initialize the list with the bundle directories to show."""
        super().__init__(*(ListItem(Label(self.formatted_text(p))) for p in bundles), id=id)
        self.bundles: list[Path] = bundles

    @staticmethod
    def formatted_text(path: Path) -> Text:
        """Return the bundle's name with its table count."""
        count = len(list((path / "tables").glob("*.csv")))
        text = Text(path.name, style="bold")
        text += Text(f"  [{count} table(s)]", style="dim")
        return text

    @property
    def selected(self) -> Path | None:
        """Return the highlighted bundle, if any."""
        return None if self.index is None or not self.bundles else self.bundles[self.index]


class TableList(ListView):
    """List of CSV tables of the open bundle."""

    app: ReportViewer

    def __init__(self, bundle: RunBundleService, *, id: str | None = None) -> None:
        """Initialize the list with the tables of `bundle`."""
        self.bundle: RunBundleService = bundle
        super().__init__(*(ListItem(Label(Text(p.stem, style="bold"))) for p in bundle.tables), id=id)

    @work(exclusive=True)
    @catch_errors()
    async def action_show_table(self) -> None:
        """Open the highlighted table in a modal."""
        tables = self.bundle.tables
        if self.index is None or not tables:
            return
        path = tables[self.index]
        header, rows = self.bundle.read_table(path)
        await self.app.push_screen_wait(TableScreen(header, rows, title=f"{self.bundle.command} / {path.stem}"))


class ReportTree(Tree[None]):
    """A tree showing the decoded `report.json` of a bundle."""

    BINDINGS: ClassVar[list[BindingType]] = [
        Binding("j", "cursor_down", show=False),
        Binding("k", "cursor_up", show=False),
        Binding("h", "scroll_left", show=False),
        Binding("l", "scroll_right", show=False),
    ]

    report: reactive[Any] = reactive(None)

    def watch_report(self, report: Any) -> None:
        """Rebuild the tree when the report changes."""
        self.clear()
        if report is not None:
            self.root.expand()
            self.add_json(report)


class NoticeWidget(Widget):
    """A widget that tells the user how to start."""

    can_focus: bool = True
    """Widget may receive focus."""
    can_focus_children: bool = False
    """Widget's children may receive focus."""

    @override
    def render(self) -> RenderableType:  # noqa: D102 (pure yield/return, no non-obvious behavior)
        return "No run bundles here. Press [bold green]o[/] to open a runs folder"
