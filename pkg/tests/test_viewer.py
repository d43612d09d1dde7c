from __future__ import annotations

import asyncio
from pathlib import Path

import pytest
from textual.widgets import DataTable, Input

from pycinematic.dialogs import RunsFolderScreen, TableScreen
from pycinematic.errors import InvalidParameterError
from pycinematic.main import ReportViewer
from pycinematic.reports import RunBundle
from pycinematic.screen import BundleScreen, BundlesScreen
from pycinematic.services import RunBundleService, list_bundles
from pycinematic.settings import Settings
from pycinematic.widgets import BundleList, NoticeWidget, ReportTree, TableList


@pytest.fixture
def runs(out_dir: Path) -> Path:
    intersect = RunBundle(out_dir, "intersect")
    intersect.write_report({"trend_bounded": True, "max_ratio": {"0.03125": 4.2}})
    intersect.write_table("ratios", ("pair_id", "ratio"), [["0-1", 4.25], ["0-2", 4.1]])
    curvature = RunBundle(out_dir, "curvature")
    curvature.write_report({"passed": True})
    (out_dir / "scratch").mkdir()
    return out_dir


class TestServices:
    def test_bundles_follow_command_order(self, runs: Path):
        assert [p.name for p in list_bundles(runs)] == ["curvature", "intersect"]

    def test_missing_folder_has_no_bundles(self, tmp_path: Path):
        assert list_bundles(tmp_path / "absent") == []

    def test_furstenberg_actions_sort_with_their_command(self, out_dir: Path):
        for name in ("sweep", "furstenberg-check", "zzz"):
            RunBundle(out_dir, name).write_report({})
        assert [p.name for p in list_bundles(out_dir)] == ["furstenberg-check", "sweep", "zzz"]

    def test_report_and_tables(self, runs: Path):
        service = RunBundleService(runs / "intersect")
        assert service.command == "intersect"
        assert service.report["trend_bounded"] is True
        [table] = service.tables
        header, rows = service.read_table(table)
        assert header == ["pair_id", "ratio"]
        assert rows == [["0-1", "4.25"], ["0-2", "4.1"]]

    def test_unreadable_report(self, out_dir: Path):
        (out_dir / "broken").mkdir()
        (out_dir / "broken" / "report.json").write_text("{oops")
        with pytest.raises(InvalidParameterError):
            _ = RunBundleService(out_dir / "broken").report

    def test_empty_table(self, tmp_path: Path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        assert RunBundleService.read_table(path) == ([], [])


def test_browse_report_and_table(runs: Path):
    async def scenario() -> None:
        app = ReportViewer(runs)
        async with app.run_test() as pilot:
            await pilot.pause()
            assert isinstance(app.screen, BundlesScreen)
            assert app.screen.sub_title == str(runs)
            assert [p.name for p in app.screen.query_one(BundleList).bundles] == ["curvature", "intersect"]

            app.screen.query_one(BundleList).index = 1
            await pilot.press("enter")
            await pilot.pause()
            assert isinstance(app.screen, BundleScreen)
            assert app.screen.query_one(ReportTree).report["trend_bounded"] is True

            app.screen.query_one(TableList).action_show_table()
            await pilot.pause()
            await pilot.pause()
            assert isinstance(app.screen, TableScreen)
            assert app.screen.query_one(DataTable).row_count == 2

            await pilot.press("escape")
            await pilot.pause()
            assert isinstance(app.screen, BundleScreen)
            await pilot.press("escape")
            await pilot.pause()
            assert isinstance(app.screen, BundlesScreen)

    asyncio.run(scenario())


def test_empty_folder_shows_notice(tmp_path: Path):
    async def scenario() -> None:
        app = ReportViewer(tmp_path)
        async with app.run_test() as pilot:
            await pilot.pause()
            assert app.screen.query(NoticeWidget)
            assert not app.screen.query(BundleList)

    asyncio.run(scenario())


def test_folder_falls_back_to_output_dir(runs: Path):
    Settings(output_dir=str(runs)).save()

    async def scenario() -> None:
        app = ReportViewer()
        async with app.run_test() as pilot:
            await pilot.pause()
            assert app.folder == runs
            assert app.screen.query(BundleList)

    asyncio.run(scenario())


def test_open_folder_is_remembered(runs: Path, tmp_path: Path):
    async def scenario() -> None:
        app = ReportViewer(tmp_path / "elsewhere")
        async with app.run_test() as pilot:
            await pilot.pause()
            assert app.screen.query(NoticeWidget)
            await pilot.press("o")
            await pilot.pause()
            assert isinstance(app.screen, RunsFolderScreen)
            app.screen.query_one("#folder-input", Input).value = str(runs)
            await pilot.press("ctrl+s")
            await pilot.pause()
            await pilot.pause()
            assert isinstance(app.screen, BundlesScreen)
            assert app.screen.query(BundleList)
            assert app.settings.last_folder == str(runs)

    asyncio.run(scenario())


class TestRunsFolderStatus:
    def test_counts_bundles(self, runs: Path):
        assert RunsFolderScreen.describe(str(runs)) == "2 run bundle(s)"
        assert RunsFolderScreen.describe(str(runs / "scratch")) == "No run bundles here"

    def test_missing_and_file(self, runs: Path):
        assert RunsFolderScreen.describe(str(runs / "absent")) == "Folder does not exist yet"
        assert RunsFolderScreen.describe(str(runs / "intersect" / "report.json")) == "Not a folder"


@pytest.mark.parametrize(("must_exist", "expected"), [(False, True), (True, False)])
def test_output_folder_may_not_exist_yet(tmp_path: Path, must_exist: bool, expected: bool):
    target = tmp_path / "fresh"
    chosen: list[Path | None] = []

    async def scenario() -> None:
        app = ReportViewer(tmp_path)
        async with app.run_test() as pilot:
            await pilot.pause()
            dialog = RunsFolderScreen("", "Output Folder", must_exist=must_exist)
            app.push_screen(dialog, chosen.append)
            await pilot.pause()
            dialog.query_one("#folder-input", Input).value = str(target)
            await pilot.press("ctrl+s")
            await pilot.pause()
            assert (app.screen is dialog) is not expected

    asyncio.run(scenario())
    assert (chosen == [target]) is expected


def test_undecodable_table_stays_on_bundle(out_dir: Path):
    bundle = RunBundle(out_dir, "sweep")
    bundle.write_report({"rows": 0})
    (bundle.path / "tables").mkdir(exist_ok=True)
    (bundle.path / "tables" / "sweep.csv").write_bytes(b"s,fraction\n\xff\xfe,1\n")

    async def scenario() -> None:
        app = ReportViewer(out_dir)
        async with app.run_test() as pilot:
            await pilot.pause()
            app.push_screen(BundleScreen(RunBundleService(bundle.path)))
            await pilot.pause()
            app.screen.query_one(TableList).action_show_table()
            await pilot.pause()
            await pilot.pause()
            assert isinstance(app.screen, BundleScreen)

    asyncio.run(scenario())
