from __future__ import annotations

import argparse
from pathlib import Path

import msgspec
import pytest

from pycinematic.cli import COMMANDS, HANDLERS, parse_pairs, parse_scale, parse_scales, run_cli
from pycinematic.dyadic import DyadicSet, DyadicSetRecord
from pycinematic.experiments import CantorLineSpec, ExperimentSpec
from pycinematic.fields import FunctionFamily, PolynomialField, family_to_spec
from pycinematic.geometry import SphereSliceSpec
from pycinematic.reports import write_json
from pycinematic.settings import Settings


def write_family(path: Path, *members: PolynomialField) -> Path:
    return write_json(path, family_to_spec(FunctionFamily(list(members))))


@pytest.fixture
def lines(tmp_path: Path) -> Path:
    return write_family(tmp_path / "lines.json", *(PolynomialField([0.0, a]) for a in (0.0, 0.5, 1.0)))


@pytest.fixture
def constants(tmp_path: Path) -> Path:
    members = (PolynomialField.constant(0.25, 1), PolynomialField.constant(0.75, 1))
    return write_family(tmp_path / "constants.json", *members)


@pytest.fixture
def experiment(tmp_path: Path) -> Path:
    spec = ExperimentSpec(
        chart=SphereSliceSpec(c=0.5),
        points=CantorLineSpec(ratio=0.25, depth=6, direction=[0.0, 0.0, 0.0, 1.0]),
        directions=6,
    )
    path = tmp_path / "experiment.json"
    path.write_bytes(msgspec.json.encode(spec))
    return path


def run(out_dir: Path, *argv: str) -> int:
    return run_cli(["--output-dir", str(out_dir), *argv])


class TestParsing:
    def test_scale(self):
        assert parse_scale("2^-6") == 2.0**-6
        assert parse_scale(" 2**-3 ") == 0.125
        assert parse_scale("0.25") == 0.25
        with pytest.raises(argparse.ArgumentTypeError):
            parse_scale("tiny")

    def test_scale_range(self):
        assert parse_scales("2^-6..2^-8") == [2.0**-6, 2.0**-7, 2.0**-8]
        assert parse_scales("2^-8..2^-6") == [2.0**-8, 2.0**-7, 2.0**-6]
        assert parse_scales("0.5,2^-2") == [0.5, 0.25]

    def test_pairs(self):
        assert parse_pairs("all") == "all"
        assert parse_pairs("0-1, 2-3") == [(0, 1), (2, 3)]
        with pytest.raises(argparse.ArgumentTypeError):
            parse_pairs("0-x")

    def test_every_command_has_a_handler(self):
        assert set(COMMANDS) == set(HANDLERS)


class TestUsage:
    def test_missing_command(self):
        assert run_cli([]) == 2

    def test_non_dyadic_range(self, out_dir: Path, lines: Path):
        assert run(out_dir, "intersect", "--family", str(lines), "--delta", "0.3..2^-6") == 2

    def test_unknown_option(self):
        assert run_cli(["curvature", "--chart", "{}", "--bogus"]) == 2


class TestCurvature:
    def test_sphere_slice_passes(self, out_dir: Path, capsys: pytest.CaptureFixture[str]):
        assert run(out_dir, "curvature", "--chart", '{"kind": "sphere_slice", "c": 0.6}') == 0
        bundle = out_dir / "curvature"
        report = msgspec.json.decode((bundle / "report.json").read_bytes())
        assert report["passed"] is True
        assert (bundle / "tables" / "curvature.csv").is_file()
        assert str(bundle) in capsys.readouterr().out

    def test_flat_graph_fails(self, out_dir: Path):
        assert run(out_dir, "curvature", "--chart", '{"kind": "flat_graph"}') == 1
        assert (out_dir / "curvature" / "report.json").is_file()

    def test_bad_chart_is_a_validation_failure(self, out_dir: Path):
        assert run(out_dir, "curvature", "--chart", '{"kind": "sphere_slice", "c": 0}') == 1
        assert run(out_dir, "curvature", "--chart", "not json") == 1
        assert not (out_dir / "curvature").exists()

    def test_environment_output_dir(self, monkeypatch: pytest.MonkeyPatch, tmp_path: Path):
        monkeypatch.setenv(Settings.OUTPUT_ENV, str(tmp_path / "env"))
        assert run_cli(["curvature", "--chart", '{"kind": "unit_sphere"}']) == 0
        assert (tmp_path / "env" / "curvature" / "report.json").is_file()


class TestFamilies:
    def test_cinematic_check(self, out_dir: Path, lines: Path):
        assert run(out_dir, "cinematic-check", "--family", str(lines), "--nodes", "17") == 0
        report = msgspec.json.decode((out_dir / "cinematic-check" / "report.json").read_bytes())
        assert report["witness"] is None
        rows = (out_dir / "cinematic-check" / "tables" / "pairs.csv").read_text().splitlines()
        assert rows[0] == "i,j,distance,infimum,ratio"
        assert len(rows) == 4

    def test_intersect(self, out_dir: Path, lines: Path):
        assert run(out_dir, "intersect", "--family", str(lines), "--delta", "2^-5..2^-6") == 0
        rows = (out_dir / "intersect" / "tables" / "ratios.csv").read_text().splitlines()
        assert rows[0] == "pair_id,delta,t,tangency,class,measure,ratio"
        assert len(rows) == 7

    def test_intersect_selected_pairs(self, out_dir: Path, lines: Path):
        assert run(out_dir, "intersect", "--family", str(lines), "--pairs", "0-2", "--delta", "2^-5") == 0
        rows = (out_dir / "intersect" / "tables" / "ratios.csv").read_text().splitlines()
        assert len(rows) == 2
        assert rows[1].startswith("0-2,")

    def test_l2_energy_within_budget(self, out_dir: Path, constants: Path):
        assert run(out_dir, "l2-energy", "--family", str(constants), "--delta", "2^-5", "--t", "0.01") == 0
        report = msgspec.json.decode((out_dir / "l2-energy" / "report.json").read_bytes())
        assert report["off_diagonal"] == 0.0
        assert (out_dir / "l2-energy" / "tables" / "annuli.csv").is_file()

    def test_zero_epsilon_is_honored(self, out_dir: Path, constants: Path):
        argv = ("l2-energy", "--family", str(constants), "--delta", "2^-5", "--t", "0.01", "--epsilon", "0")
        assert run(out_dir, *argv) == 1
        report = msgspec.json.decode((out_dir / "l2-energy" / "report.json").read_bytes())
        assert report["epsilon"] == 0.0
        assert report["budget"] == pytest.approx(4 * 2.0 ** (-5 * 1.01))

    def test_missing_family_file(self, out_dir: Path, tmp_path: Path):
        assert run(out_dir, "intersect", "--family", str(tmp_path / "absent.json"), "--delta", "2^-5") == 1

    def test_malformed_family_file(self, out_dir: Path, tmp_path: Path):
        path = tmp_path / "broken.json"
        path.write_text('{"kind": "polynomial"}')
        assert run(out_dir, "cinematic-check", "--family", str(path)) == 1


class TestFurstenberg:
    def test_sharp_then_check(self, out_dir: Path):
        argv = ("--seed", "3", "--output-dir", str(out_dir), "furstenberg", "sharp")
        assert run_cli([*argv, "--s", "0.5", "--t", "0.5", "--scale", "6", "--n", "2"]) == 0
        config = out_dir / "furstenberg-sharp" / "config"
        assert (config / "params.json").is_file()
        assert run(out_dir, "furstenberg", "check", "--config", str(config)) == 0
        report = msgspec.json.decode((out_dir / "furstenberg-check" / "report.json").read_bytes())
        assert report["passed"] is True
        assert report["union"] >= report["bound"]

    def test_plant(self, out_dir: Path, constants: Path):
        base = '{"kind": "uniform", "scale": 3, "dim": 1}'
        argv = ["furstenberg", "plant", "--family", str(constants), "--set", base, "--s", "1", "--t", "1"]
        assert run(out_dir, *argv, "--constant", "10") == 0
        rows = (out_dir / "furstenberg-plant" / "tables" / "sets.csv").read_text().splitlines()
        assert rows[0] == "member,cells,spread"
        assert [r.split(",")[1] for r in rows[1:]] == ["8", "8"]

    def test_plant_rejects_bad_set(self, out_dir: Path, constants: Path):
        argv = ["furstenberg", "plant", "--family", str(constants), "--set", '{"kind": "blob"}', "--s", "1", "--t", "1"]
        assert run(out_dir, *argv) == 1

    def test_out_of_regime(self, out_dir: Path):
        assert run(out_dir, "furstenberg", "sharp", "--s", "0.3", "--t", "0.6", "--scale", "5", "--n", "2") == 1


class TestSets:
    def test_cantor_json(self, out_dir: Path, capsys: pytest.CaptureFixture[str]):
        assert run(out_dir, "generate-set", "--kind", "cantor", "--depth", "3", "--format", "json") == 0
        bundle = out_dir / "generate-set"
        record = msgspec.json.decode((bundle / "set.json").read_bytes(), type=DyadicSetRecord)
        E = DyadicSet.from_record(record)
        assert len(E) == 8
        assert "8 cells" in capsys.readouterr().out
        rows = (bundle / "tables" / "counts.csv").read_text().splitlines()
        assert len(rows) == E.scale + 2

    def test_random_spread_follows_seed(self, tmp_path: Path):
        argv = ["generate-set", "--kind", "random_spread", "--scale", "8", "--s", "0.5"]
        for name in ("a", "b"):
            assert run_cli(["--seed", "9", "--output-dir", str(tmp_path / name), *argv]) == 0
        first = (tmp_path / "a" / "generate-set" / "set.bin").read_bytes()
        assert first == (tmp_path / "b" / "generate-set" / "set.bin").read_bytes()
        assert DyadicSet.from_bytes(first).scale == 8

    def test_spec_overrides_kind(self, out_dir: Path):
        spec = '{"kind": "uniform", "scale": 2, "dim": 2}'
        assert run(out_dir, "generate-set", "--kind", "cantor", "--spec", spec) == 0
        report = msgspec.json.decode((out_dir / "generate-set" / "report.json").read_bytes())
        assert report["count"] == 16

    def test_needs_kind_or_spec(self, out_dir: Path):
        assert run(out_dir, "generate-set") == 1


class TestExperiments:
    def test_project_dim(self, out_dir: Path, experiment: Path):
        assert run(out_dir, "project-dim", "--spec", str(experiment)) == 0
        rows = (out_dir / "project-dim" / "tables" / "slopes.csv").read_text().splitlines()
        assert rows[0] == "index,slope,band_lo,band_hi,residual"
        assert len(rows) == 7

    def test_sweep(self, out_dir: Path, experiment: Path):
        assert run(out_dir, "--seed", "2", "sweep", "--spec", str(experiment), "--s-grid", "0.1,1") == 0
        rows = (out_dir / "sweep" / "tables" / "sweep.csv").read_text().splitlines()
        assert rows[0] == "s,fraction,count,dimension,bound"
        assert rows[1].startswith("0.1,0,0,,")
        assert rows[2].startswith("1,1,6,")


def snapshot(root: Path) -> dict[Path, bytes]:
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.mark.slow
@pytest.mark.parametrize(
    "command", ["curvature", "cinematic-check", "intersect", "l2-energy", "furstenberg", "project-dim", "sweep"]
)
def test_reruns_are_byte_identical(command: str, out_dir: Path, lines: Path, constants: Path, experiment: Path):
    argv = {
        "curvature": ["curvature", "--chart", '{"kind": "sphere_slice", "c": 0.6}'],
        "cinematic-check": ["cinematic-check", "--family", str(lines), "--nodes", "17"],
        "intersect": ["intersect", "--family", str(lines), "--delta", "2^-5..2^-6"],
        "l2-energy": ["l2-energy", "--family", str(constants), "--delta", "2^-5", "--t", "0.01"],
        "furstenberg": ["furstenberg", "sharp", "--s", "0.5", "--t", "0.5", "--scale", "6", "--n", "2"],
        "project-dim": ["project-dim", "--spec", str(experiment)],
        "sweep": ["sweep", "--spec", str(experiment), "--s-grid", "0.1,1"],
    }[command]
    codes, outputs = [], []
    for _ in range(2):
        codes.append(run_cli(["--seed", "4", "--threads", "2", "--output-dir", str(out_dir), *argv]))
        outputs.append(snapshot(out_dir))
    assert codes == [0, 0]
    assert outputs[0]
    assert outputs[0] == outputs[1]
