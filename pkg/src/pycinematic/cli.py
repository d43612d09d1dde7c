"""Command-line pipelines writing `report.json` and CSV tables into a run bundle."""

from __future__ import annotations

import argparse
import logging
import re
from pathlib import Path
from typing import TYPE_CHECKING

import msgspec
import numpy as np
from rich.console import Console
from rich.logging import RichHandler

from pycinematic.decorators import exit_on_error
from pycinematic.dyadic import (
    CantorSetSpec,
    RandomSpreadSpec,
    SetSpec,
    UniformSetSpec,
    covering_number,
    generate_set,
)
from pycinematic.errors import InvalidParameterError
from pycinematic.experiments import (
    ExperimentSpec,
    SweepRow,
    exceptional_sweep,
    load_experiment,
    project_dim_experiment,
)
from pycinematic.fields import estimate_cinematic_constant, load_family
from pycinematic.furstenberg import (
    ConfigParams,
    build_configuration,
    incidence_lower_bound_check,
    l2_energy,
    load_configuration,
    parallel_hyperplane_configuration,
    plant_sets,
    save_configuration,
)
from pycinematic.geometry import parse_chart, verify_nondegenerate
from pycinematic.grids import dyadic_exponents
from pycinematic.intersect import verify_intersection_bound
from pycinematic.reports import RunBundle, write_bytes_atomic, write_json
from pycinematic.settings import Settings

if TYPE_CHECKING:
    from collections.abc import Sequence

logger = logging.getLogger(__name__)

COMMANDS: tuple[str, ...] = (
    "curvature",
    "cinematic-check",
    "intersect",
    "l2-energy",
    "furstenberg",
    "project-dim",
    "sweep",
    "generate-set",
    "view",
)


def parse_scale(text: str) -> float:
    """Parse `2^-6`, `2**-6` or a plain float."""
    if match := re.fullmatch(r"\s*2\s*(?:\^|\*\*)\s*(-?\d+)\s*", text):
        return 2.0 ** int(match.group(1))
    try:
        return float(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"Not a scale: {text!r}") from e


def parse_scales(text: str) -> list[float]:
    """Parse a comma list of scales, or a dyadic range `2^-6..2^-10`."""
    if ".." in text and "," not in text:
        first, last = (dyadic_exponents([parse_scale(p)])[0] for p in text.split("..", 1))
        step = 1 if last >= first else -1
        return [2.0**-m for m in range(first, last + step, step)]
    return [parse_scale(p) for p in text.split(",") if p.strip()]


def parse_pairs(text: str) -> list[tuple[int, int]] | str:
    """Parse `all` or a comma list of `i-j` pairs."""
    if text == "all":
        return text
    pairs = []
    for item in text.split(","):
        i, _, j = item.partition("-")
        if not (i.strip().isdigit() and j.strip().isdigit()):
            raise argparse.ArgumentTypeError(f"Not a pair: {item!r}")
        pairs.append((int(i), int(j)))
    return pairs


def parse_floats(text: str) -> list[float]:
    """Parse a comma list of floats."""
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"Not a list of numbers: {text!r}") from e


def _configure_logging(verbosity: int) -> None:
    package = logging.getLogger("pycinematic")
    if not any(isinstance(h, RichHandler) for h in package.handlers):
        package.addHandler(RichHandler(console=Console(stderr=True), show_path=False))
    package.setLevel({0: logging.WARNING, 1: logging.INFO}.get(verbosity, logging.DEBUG))


def build_parser() -> argparse.ArgumentParser:
    """Return the argument parser for every subcommand."""
    parser = argparse.ArgumentParser(prog="cinematic", description="Numerical lab for restricted projections.")
    parser.add_argument("--seed", type=int, default=None, help="Seed for every random choice")
    parser.add_argument("--threads", type=int, default=None, help="Worker threads")
    parser.add_argument("--output-dir", type=Path, default=None, help="Root directory of run bundles")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("curvature", help="Sweep principal curvatures of a chart")
    p.add_argument("--chart", required=True, help="Chart spec as JSON")
    p.add_argument("--grid", type=int, default=33)
    p.add_argument("--method", choices=("closed_form", "finite_difference"), default="closed_form")

    p = sub.add_parser("cinematic-check", help="Estimate the cinematic constants of a family")
    p.add_argument("--family", type=Path, required=True)
    p.add_argument("--pairs", type=int, default=400, help="Pair budget")
    p.add_argument("--nodes", type=int, default=None)

    p = sub.add_parser("intersect", help="Tabulate intersection ratios over pairs and scales")
    p.add_argument("--family", type=Path, required=True)
    p.add_argument("--pairs", type=parse_pairs, default="all")
    p.add_argument("--delta", type=parse_scales, required=True)
    p.add_argument("--divisor", type=int, default=None)

    p = sub.add_parser("l2-energy", help="Compare both sides of the L² identity")
    p.add_argument("--family", type=Path, required=True)
    p.add_argument("--delta", type=parse_scale, required=True)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--divisor", type=int, default=None)

    p = sub.add_parser("furstenberg", help="Build and check configurations")
    fsub = p.add_subparsers(dest="action", required=True)
    q = fsub.add_parser("check", help="Check the incidence bound for a configuration bundle")
    q.add_argument("--config", type=Path, required=True)
    q.add_argument("--epsilon", type=float, default=None)
    q = fsub.add_parser("plant", help="Plant a base set on every graph of a family")
    q.add_argument("--family", type=Path, required=True)
    q.add_argument("--set", dest="base", required=True, help="Base set spec as JSON")
    q.add_argument("--s", type=float, required=True)
    q.add_argument("--t", type=float, required=True)
    q.add_argument("--constant", type=float, default=None, help="Spread constant C")
    q.add_argument("--epsilon", type=float, default=None)
    q = fsub.add_parser("sharp", help="Build the parallel-hyperplane configuration")
    q.add_argument("--s", type=float, required=True)
    q.add_argument("--t", type=float, required=True)
    q.add_argument("--scale", type=int, required=True)
    q.add_argument("--n", type=int, default=3)
    q.add_argument("--epsilon", type=float, default=None)

    p = sub.add_parser("project-dim", help="Estimate projection dimensions along sampled directions")
    p.add_argument("--spec", type=Path, required=True)

    p = sub.add_parser("sweep", help="Tabulate exceptional directions")
    p.add_argument("--spec", type=Path, required=True)
    p.add_argument("--s-grid", type=parse_floats, default=[0.1, 0.2, 0.3, 0.4, 0.45, 0.5, 0.6, 0.8, 1.0])

    p = sub.add_parser("generate-set", help="Generate a dyadic test set")
    p.add_argument("--kind", choices=("cantor", "uniform", "random_spread"), default=None)
    p.add_argument("--spec", default=None, help="Set spec as JSON, overriding --kind")
    p.add_argument("--ratio", type=float, default=0.25)
    p.add_argument("--depth", type=int, default=6)
    p.add_argument("--dim", type=int, default=1)
    p.add_argument("--scale", type=int, default=8)
    p.add_argument("--s", type=float, default=0.5)
    p.add_argument("--format", choices=("bin", "json"), default="bin")

    p = sub.add_parser("view", help="Browse run bundles in a terminal viewer")
    p.add_argument("folder", type=Path, nargs="?", default=None)
    return parser


class Context:
    """Resolved global options: flag, then environment, then settings file."""

    def __init__(self, args: argparse.Namespace, settings: Settings) -> None:
        """Merge the global flags with the persisted settings."""
        self.settings = settings
        self.seed: int = args.seed if args.seed is not None else settings.seed
        self.threads: int = args.threads or settings.threads
        self.root: Path = args.output_dir or settings.output_path
        epsilon = getattr(args, "epsilon", None)
        self.epsilon: float = epsilon if epsilon is not None else settings.epsilon
        self.divisor: int = getattr(args, "divisor", None) or settings.resolution_divisor

    def bundle(self, command: str) -> RunBundle:
        """Return the bundle of `command` under the output root."""
        return RunBundle(self.root, command)


def _curvature(args: argparse.Namespace, ctx: Context) -> int:
    report = verify_nondegenerate(parse_chart(args.chart), args.grid, seed=ctx.seed, method=args.method)
    bundle = ctx.bundle("curvature")
    bundle.write_report(report)
    bundle.write_table("curvature", report.header(), report.rows())
    print(bundle.path)
    return 0 if report.passed else 1


def _cinematic_check(args: argparse.Namespace, ctx: Context) -> int:
    family = load_family(args.family)
    nodes = args.nodes or ctx.settings.grid_nodes
    report = estimate_cinematic_constant(family, args.pairs, nodes=nodes, seed=ctx.seed, threads=ctx.threads)
    bundle = ctx.bundle("cinematic-check")
    bundle.write_report(report)
    rows = [[r.i, r.j, r.distance, r.infimum, r.ratio] for r in report.pairs]
    bundle.write_table("pairs", ("i", "j", "distance", "infimum", "ratio"), rows)
    print(bundle.path)
    return 0 if report.passed else 1


def _intersect(args: argparse.Namespace, ctx: Context) -> int:
    family = load_family(args.family)
    table = verify_intersection_bound(family, args.pairs, args.delta, divisor=ctx.divisor, threads=ctx.threads)
    bundle = ctx.bundle("intersect")
    bundle.write_report(table)
    bundle.write_table("ratios", table.HEADER, table.table())
    print(bundle.path)
    return 0 if table.trend_bounded else 1


def _l2_energy(args: argparse.Namespace, ctx: Context) -> int:
    family = load_family(args.family)
    resolution = args.delta / ctx.divisor
    report = l2_energy(family, args.delta, resolution, t=args.t, epsilon=ctx.epsilon, threads=ctx.threads)
    bundle = ctx.bundle("l2-energy")
    bundle.write_report(report)
    rows = [[i, report.annuli.get(i, 0), r] for i, r in sorted(report.annulus_ratios.items())]
    bundle.write_table("annuli", ("annulus", "pairs", "ratio"), rows)
    print(bundle.path)
    return 0 if report.within_budget else 1


def _furstenberg(args: argparse.Namespace, ctx: Context) -> int:
    bundle = ctx.bundle(f"furstenberg-{args.action}")
    if args.action == "check":
        config = load_configuration(args.config, threads=ctx.threads)
    elif args.action == "plant":
        family = load_family(args.family)
        base = generate_set(_set_spec(args.base))
        params = ConfigParams(base.scale, args.s, args.t, ctx.epsilon, C=args.constant)
        config = build_configuration(family, plant_sets(family, base), params, threads=ctx.threads)
        save_configuration(config, bundle.path / "config")
    else:
        config = parallel_hyperplane_configuration(args.s, args.t, args.scale, args.n, ctx.seed, epsilon=ctx.epsilon)
        save_configuration(config, bundle.path / "config")
    report = incidence_lower_bound_check(config, args.epsilon)
    bundle.write_report(report)
    rows = [[i, len(E), r.constant] for i, (E, r) in enumerate(zip(config.sets, config.set_spreads))]
    bundle.write_table("sets", ("member", "cells", "spread"), rows)
    print(bundle.path)
    return 0 if report.passed else 1


def _set_spec(text: str) -> SetSpec:
    try:
        return msgspec.json.decode(text, type=SetSpec)
    except msgspec.DecodeError as e:
        raise InvalidParameterError(f"Invalid set spec: {e}") from e


def _with_seed(spec_path: Path, seed: int | None) -> ExperimentSpec:
    spec = load_experiment(spec_path.read_bytes())
    return spec if seed is None else msgspec.structs.replace(spec, seed=seed)


def _project_dim(args: argparse.Namespace, ctx: Context) -> int:
    spec = _with_seed(args.spec, args.seed)
    report = project_dim_experiment(spec, threads=ctx.threads)
    bundle = ctx.bundle("project-dim")
    bundle.write_report(report)
    bundle.write_table("slopes", report.HEADER, report.table())
    print(bundle.path)
    return 0


def _sweep(args: argparse.Namespace, ctx: Context) -> int:
    spec = _with_seed(args.spec, args.seed)
    rows = exceptional_sweep(spec, args.s_grid, threads=ctx.threads)
    bundle = ctx.bundle("sweep")
    bundle.write_report(rows)
    bundle.write_table("sweep", SweepRow.HEADER, [[r.s, r.fraction, r.count, r.dimension, r.bound] for r in rows])
    print(bundle.path)
    return 0


def _generate_set(args: argparse.Namespace, ctx: Context) -> int:
    if args.spec:
        spec = _set_spec(args.spec)
    elif args.kind == "cantor":
        spec = CantorSetSpec(args.ratio, args.depth, args.dim)
    elif args.kind == "uniform":
        spec = UniformSetSpec(args.scale, args.dim)
    elif args.kind == "random_spread":
        spec = RandomSpreadSpec(args.s, args.scale, args.dim, ctx.seed)
    else:
        raise InvalidParameterError("Pass --kind or --spec")
    E = generate_set(spec)
    bundle = ctx.bundle("generate-set")
    if args.format == "bin":
        write_bytes_atomic(bundle.path / "set.bin", E.to_bytes())
    else:
        write_json(bundle.path / "set.json", E.to_record())
    counts = [[m, covering_number(E, m)] for m in range(E.scale + 1)]
    bundle.write_report({"spec": spec, "dim": E.dim, "scale": E.scale, "count": len(E)})
    bundle.write_table("counts", ("scale", "count"), counts)
    print(f"{bundle.path}: {len(E)} cells at scale 2^-{E.scale}")
    return 0


def _view(args: argparse.Namespace, ctx: Context) -> int:
    from pycinematic.main import ReportViewer

    ReportViewer(args.folder or ctx.root).run()
    return 0


HANDLERS = {
    "curvature": _curvature,
    "cinematic-check": _cinematic_check,
    "intersect": _intersect,
    "l2-energy": _l2_energy,
    "furstenberg": _furstenberg,
    "project-dim": _project_dim,
    "sweep": _sweep,
    "generate-set": _generate_set,
    "view": _view,
}


@exit_on_error
def _dispatch(args: argparse.Namespace, ctx: Context) -> int:
    return HANDLERS[args.command](args, ctx)


def run_cli(argv: Sequence[str] | None = None) -> int:
    """Run one subcommand and return its exit status: 0 success, 1 validation failure, 2 usage error."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    _configure_logging(args.verbose)
    np.seterr(all="ignore")
    return _dispatch(args, Context(args, Settings.load()))
