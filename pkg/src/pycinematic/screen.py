from __future__ import annotations

from typing import TYPE_CHECKING, ClassVar

from textual import on, work
from textual.app import ComposeResult
from textual.binding import Binding
from textual.screen import Screen
from textual.widgets import Footer, Header, ListView, TabbedContent, TabPane
from typing_extensions import override

from pycinematic.dialogs import RunsFolderScreen
from pycinematic.services import RunBundleService, list_bundles
from pycinematic.widgets import BundleList, NoticeWidget, ReportTree, TableList

if TYPE_CHECKING:
    from textual.binding import BindingType

    from pycinematic.main import ReportViewer


class BundlesScreen(Screen[None]):
    """Screen listing the run bundles of the current folder."""

    BINDINGS: ClassVar[list[BindingType]] = [
        Binding("o", "open", "Open Folder"),
        Binding("r", "reload", "Reload"),
    ]

    app: ReportViewer

    @override
    def compose(self) -> ComposeResult:  # noqa: D102 (pure yield chain, no non-obvious behavior)
        yield Header()
        if bundles := list_bundles(self.app.folder):
            yield BundleList(bundles, id="bundles")
        else:
            yield NoticeWidget()
        yield Footer()

    def on_mount(self) -> None:
        """Show the folder as the subtitle."""
        self.sub_title = str(self.app.folder)

    @on(ListView.Selected, "#bundles")
    def open_bundle(self) -> None:
        """Open the selected bundle."""
        if path := self.query_one(BundleList).selected:
            self.app.push_screen(BundleScreen(RunBundleService(path)))

    @work(exclusive=True)
    async def action_open(self) -> None:
        """Prompt for another runs folder."""
        if path := await self.app.push_screen_wait(RunsFolderScreen(str(self.app.folder), "Runs Folder")):
            self.app.folder = path
            await self.action_reload()

    async def action_reload(self) -> None:
        """Rescan the folder."""
        await self.recompose()
        self.sub_title = str(self.app.folder)


class BundleScreen(Screen[None]):
    """Screen showing one bundle's report and tables."""

    BINDINGS: ClassVar[list[BindingType]] = [
        Binding("escape", "app.pop_screen", "Back"),
    ]

    def __init__(self, bundle: RunBundleService) -> None:
        """Initialize the screen for `bundle`."""
        super().__init__()
        self.bundle: RunBundleService = bundle

    @override
    def compose(self) -> ComposeResult:  # noqa: D102 (pure yield chain, no non-obvious behavior)
        yield Header()
        with TabbedContent(initial="report-tab", id="tabs"):
            with TabPane("Report", id="report-tab"):
                yield ReportTree("REPORT", id="report")
            with TabPane("Tables", id="tables-tab"):
                yield TableList(self.bundle, id="tables")
        yield Footer()

    def on_mount(self) -> None:
        """Load the report when mounted."""
        self.sub_title = self.bundle.command
        try:
            self.query_one(ReportTree).report = self.bundle.report
        except ValueError as e:
            self.log(f"Unreadable report in {self.bundle.path}: {e}")
            self.notify(str(e), title="Report Unreadable", severity="error")

    @on(ListView.Selected, "#tables")
    def show_table(self) -> None:
        """Open the selected table."""
        self.query_one(TableList).action_show_table()
