"""Box-counting estimates for projections `Z·z` of point sets along directions `z` on a chart."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import TYPE_CHECKING, ClassVar

import msgspec
import numpy as np

from pycinematic.dyadic import MAX_SCALE, DyadicSet, covering_number
from pycinematic.errors import ChartGateError, InsufficientScalesError, InvalidParameterError
from pycinematic.geometry import ChartSpec, chart_from_spec, verify_nondegenerate

if TYPE_CHECKING:
    from collections.abc import Sequence

    from pycinematic.geometry import CurvatureReport
    from pycinematic.grids import FloatArray

logger = logging.getLogger(__name__)

MIN_SCALES: int = 4


@dataclass(frozen=True, slots=True)
class DimensionEstimate:
    """Least-squares slope of `log₂ |E|_δ` against `m` for `δ = 2^-m`."""

    scales: list[int]
    counts: list[int]
    slope: float
    residual: float
    band: tuple[float, float]


def _fit(scales: Sequence[int], counts: Sequence[int]) -> tuple[float, float]:
    m = np.asarray(scales, dtype=np.float64)
    y = np.log2(np.maximum(np.asarray(counts, dtype=np.float64), 1.0))
    (slope, _), residuals, *_ = np.polyfit(m, y, 1, full=True)
    residual = float(np.sqrt(residuals[0] / len(m))) if len(residuals) else 0.0
    return float(slope), residual


def dimension_from_counts(scales: Sequence[int], counts: Sequence[int], *, max_dim: float) -> DimensionEstimate:
    """Fit a box-counting slope to exact counts.

    The band spans the slopes over the first half, the second half and the full range.

    Raises:
        InsufficientScalesError: if fewer than four scales are given.
    """
    if len(scales) < MIN_SCALES:
        raise InsufficientScalesError(f"Box counting needs at least {MIN_SCALES} scales, got {len(scales)}")
    slope, residual = _fit(scales, counts)
    half = len(scales) // 2
    parts = [slope, _fit(scales[: half + 1], counts[: half + 1])[0], _fit(scales[half:], counts[half:])[0]]

    def clip(v: float) -> float:
        return float(np.clip(v, 0.0, max_dim))

    return DimensionEstimate(list(scales), list(counts), clip(slope), residual, (clip(min(parts)), clip(max(parts))))


def box_dimension(E: DyadicSet, scales: Sequence[int] | None = None) -> DimensionEstimate:
    """Estimate the box dimension of a set from its exact covering numbers.

    Scales default to every level from 1 to the set's own.
    """
    levels = list(range(1, E.scale + 1)) if scales is None else sorted(scales)
    return dimension_from_counts(levels, [covering_number(E, m) for m in levels], max_dim=E.dim)


class PointSpec(msgspec.Struct, frozen=True, tag="point", tag_field="kind"):
    """A single point."""

    coords: list[float]


class SegmentSpec(msgspec.Struct, frozen=True, tag="segment", tag_field="kind"):
    """`count` equally spaced points on a segment."""

    start: list[float]
    end: list[float]
    count: int = 4097


class CantorLineSpec(msgspec.Struct, frozen=True, tag="cantor_line", tag_field="kind"):
    """A two-interval Cantor set of ratio `ratio` laid along `origin + c·direction`, `c ∈ [0, 1]`."""

    ratio: float
    depth: int
    direction: list[float]
    origin: list[float] | None = None


class CantorFactor(msgspec.Struct, frozen=True):
    """One coordinate axis carrying a Cantor set."""

    ratio: float
    depth: int
    axis: int


class CantorProductSpec(msgspec.Struct, frozen=True, tag="cantor_product", tag_field="kind"):
    """Product of Cantor sets on distinct axes, centered and scaled into the unit ball."""

    factors: list[CantorFactor]
    dim: int


PointSetSpec = PointSpec | SegmentSpec | CantorLineSpec | CantorProductSpec


def cantor_coordinates(ratio: float, depth: int) -> FloatArray:
    """Return the centers of the `2^depth` intervals of the two-interval Cantor set in `[0, 1]`."""
    if not 0 < ratio < 0.5:
        raise InvalidParameterError(f"Cantor ratio must lie in (0, 1/2), got {ratio}")
    if not 0 <= depth <= 20:
        raise InvalidParameterError(f"Cantor depth must lie in [0, 20], got {depth}")
    coords = np.zeros(1)
    for level in range(depth):
        coords = np.concatenate([coords, coords + (1 - ratio) * ratio**level])
    return np.sort(coords) + ratio**depth / 2


def generate_points(spec: PointSetSpec) -> FloatArray:
    """Build the point set `Z` as an `(N, d)` array."""
    match spec:
        case PointSpec(coords=coords):
            return np.asarray([coords], dtype=np.float64)
        case SegmentSpec(start=start, end=end, count=count):
            s = np.linspace(0.0, 1.0, max(count, 1))[:, None]
            return (1 - s) * np.asarray(start) + s * np.asarray(end)
        case CantorLineSpec(ratio=ratio, depth=depth, direction=direction, origin=origin):
            c = cantor_coordinates(ratio, depth)[:, None]
            base = np.zeros(len(direction)) if origin is None else np.asarray(origin)
            return base + c * np.asarray(direction, dtype=np.float64)
        case CantorProductSpec(factors=factors, dim=dim):
            axes = [f.axis for f in factors]
            if len(set(axes)) != len(axes) or any(not 0 <= a < dim for a in axes):
                raise InvalidParameterError(f"Factor axes must be distinct and below {dim}, got {axes}")
            extent = 1 / np.sqrt(len(factors))
            axes_values = [(2 * cantor_coordinates(f.ratio, f.depth) - 1) * extent for f in factors]
            grids = np.meshgrid(*axes_values, indexing="ij")
            points = np.zeros((grids[0].size, dim))
            for axis, grid in zip(axes, grids):
                points[:, axis] = grid.ravel()
            return points
    raise InvalidParameterError(f"Unknown point set spec {spec!r}")


class ExperimentSpec(msgspec.Struct, frozen=True):
    """A projection experiment: chart, point set, scale range and direction sampling."""

    chart: ChartSpec
    points: PointSetSpec
    min_scale: int = 6
    max_scale: int = 12
    directions: int = 50
    seed: int = 0
    name: str = "experiment"


def load_experiment(source: str | bytes) -> ExperimentSpec:
    """Decode an experiment spec from JSON text."""
    try:
        return msgspec.json.decode(source, type=ExperimentSpec)
    except msgspec.DecodeError as e:
        raise InvalidParameterError(f"Invalid experiment spec: {e}") from e


@dataclass(frozen=True, slots=True)
class ProjectionReport:
    """Per-direction slopes of `Z·z` and the estimated dimension of `Z`."""

    spec: ExperimentSpec
    parameters: FloatArray
    directions: FloatArray
    estimates: list[DimensionEstimate]
    slopes: FloatArray
    set_dimension: DimensionEstimate | None

    @property
    def expected(self) -> float | None:
        """Return `min(dim Z, 1)` from the estimated dimension of `Z`."""
        return None if self.set_dimension is None else min(self.set_dimension.slope, 1.0)

    def fraction_within(self, lo: float, hi: float) -> float:
        """Return the share of directions whose slope lies in `[lo, hi]`."""
        return float(np.mean((self.slopes >= lo) & (self.slopes <= hi))) if len(self.slopes) else 0.0

    HEADER: ClassVar[tuple[str, ...]] = ("index", "slope", "band_lo", "band_hi", "residual")

    def table(self) -> list[list[object]]:
        """Return one CSV row per direction."""
        return [[i, e.slope, e.band[0], e.band[1], e.residual] for i, e in enumerate(self.estimates)]


def _projection_estimate(Z: FloatArray, z: FloatArray, scales: list[int]) -> DimensionEstimate:
    values = Z @ z
    spread = float(values.max() - values.min())
    unit = (values - values.min()) / spread if spread > 0 else np.zeros_like(values)
    finest = DyadicSet.from_points(unit[:, None], scales[-1])
    return dimension_from_counts(scales, [covering_number(finest, m) for m in scales], max_dim=1.0)


def _set_dimension(Z: FloatArray, scales: list[int]) -> DimensionEstimate | None:
    d = Z.shape[1]
    usable = [m for m in scales if m <= MAX_SCALE.get(d, -1)]
    if len(usable) < MIN_SCALES:
        return None
    lo = Z.min(axis=0)
    extent = float((Z.max(axis=0) - lo).max())
    unit = (Z - lo) / extent if extent > 0 else np.zeros_like(Z)
    finest = DyadicSet.from_points(unit, usable[-1])
    return dimension_from_counts(usable, [covering_number(finest, m) for m in usable], max_dim=d)


def project_dim_experiment(spec: ExperimentSpec, *, threads: int = 1) -> ProjectionReport:
    """Estimate the box dimension of `{⟨p, z⟩ : p ∈ Z}` for sampled directions `z = Σ(x)`.

    Parameters `x` are drawn uniformly from the chart's box with the spec's seed. Each projection is
    normalized to `[0, 1]` before counting.

    Raises:
        ChartGateError: if the chart fails the non-degeneracy gate.
        InvalidParameterError: if `Z` leaves the unit ball or has the wrong dimension.
        InsufficientScalesError: if the scale range holds fewer than four scales.
    """
    chart = chart_from_spec(spec.chart)
    curvature: CurvatureReport = verify_nondegenerate(chart)
    if not curvature.passed:
        raise ChartGateError(f"Chart {chart!r} fails the non-degeneracy gate", curvature)

    Z = generate_points(spec.points)
    if Z.shape[1] != chart.ambient_dim:
        raise InvalidParameterError(f"Points lie in R^{Z.shape[1]}, the chart in R^{chart.ambient_dim}")
    norms = np.linalg.norm(Z, axis=1)
    if (norms > 1 + 1e-12).any():
        raise InvalidParameterError(f"Point set leaves the unit ball: largest norm {norms.max():.6g}")
    scales = list(range(spec.min_scale, spec.max_scale + 1))
    if len(scales) < MIN_SCALES:
        raise InsufficientScalesError(f"Box counting needs at least {MIN_SCALES} scales, got {len(scales)}")
    if spec.max_scale > MAX_SCALE[1]:
        raise InvalidParameterError(f"Projection scales stop at {MAX_SCALE[1]}, got {spec.max_scale}")

    rng = np.random.default_rng(spec.seed)
    box = chart.domain
    parameters = box.lower + rng.random((spec.directions, box.dim)) * box.sides
    directions = chart.point(parameters)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        estimates = list(pool.map(lambda z: _projection_estimate(Z, z, scales), directions))
    slopes = np.array([e.slope for e in estimates])
    median = float(np.median(slopes)) if len(slopes) else float("nan")
    logger.info("Projected %d points along %d directions: median slope %.3f", len(Z), len(slopes), median)
    return ProjectionReport(spec, parameters, directions, estimates, slopes, _set_dimension(Z, scales))


@dataclass(frozen=True, slots=True)
class SweepRow:
    """Share and dimension of directions whose projection slope falls below `s`."""

    s: float
    fraction: float
    count: int
    dimension: float | None
    bound: float

    HEADER: ClassVar[tuple[str, ...]] = ("s", "fraction", "count", "dimension", "bound")


def _parameter_dimension(parameters: FloatArray, box_lo: FloatArray, sides: FloatArray) -> float | None:
    if len(parameters) < 2:
        return 0.0 if len(parameters) else None
    cells = DyadicSet.from_points((parameters - box_lo) / sides, 5)
    return box_dimension(cells, range(1, 6)).slope


def exceptional_sweep(
    spec: ExperimentSpec, s_grid: Sequence[float], *, threads: int = 1, report: ProjectionReport | None = None
) -> list[SweepRow]:
    """Tabulate the directions with slope below each `s`, with the comparison `(n − 2) + s`.

    The parameter-space dimension is a box-counting slope over levels 1-5 of the sampled parameters,
    which is only indicative for a few dozen directions.
    """
    report = report or project_dim_experiment(spec, threads=threads)
    box = chart_from_spec(spec.chart).domain
    rows = []
    for s in s_grid:
        mask = report.slopes < s
        chosen = report.parameters[mask]
        dimension = _parameter_dimension(chosen, box.lower, box.sides)
        fraction = float(mask.mean()) if len(mask) else 0.0
        rows.append(SweepRow(float(s), fraction, int(mask.sum()), dimension, box.dim - 1 + float(s)))
    return rows
