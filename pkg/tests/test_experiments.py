from __future__ import annotations

import msgspec
import numpy as np
import pytest

from pycinematic.dyadic import CantorSetSpec, DyadicSet, generate_set
from pycinematic.errors import ChartGateError, InsufficientScalesError, InvalidParameterError
from pycinematic.experiments import (
    CantorFactor,
    CantorLineSpec,
    CantorProductSpec,
    ExperimentSpec,
    PointSpec,
    SegmentSpec,
    box_dimension,
    cantor_coordinates,
    dimension_from_counts,
    exceptional_sweep,
    generate_points,
    load_experiment,
    project_dim_experiment,
)
from pycinematic.geometry import FlatGraphSpec, SphereSliceSpec

CANTOR_LINE = CantorLineSpec(ratio=0.25, depth=6, direction=[0.0, 0.0, 0.0, 1.0])


def experiment(**changes) -> ExperimentSpec:
    spec = ExperimentSpec(chart=SphereSliceSpec(c=0.5), points=CANTOR_LINE, directions=8, seed=5)
    return msgspec.structs.replace(spec, **changes)


@pytest.fixture(scope="module")
def projection():
    return project_dim_experiment(experiment())


class TestDimensionFit:
    def test_exact_power_law(self):
        scales = list(range(1, 7))
        estimate = dimension_from_counts(scales, [2**m for m in scales], max_dim=1.0)
        assert estimate.slope == pytest.approx(1.0)
        assert estimate.residual == pytest.approx(0.0, abs=1e-9)
        assert estimate.band == pytest.approx((1.0, 1.0))

    def test_constant_counts(self):
        estimate = dimension_from_counts([3, 4, 5, 6], [7, 7, 7, 7], max_dim=2.0)
        assert estimate.slope == pytest.approx(0.0, abs=1e-9)

    def test_slope_is_clipped(self):
        scales = [1, 2, 3, 4]
        estimate = dimension_from_counts(scales, [4**m for m in scales], max_dim=1.0)
        assert estimate.slope == 1.0

    def test_needs_four_scales(self):
        with pytest.raises(InsufficientScalesError):
            dimension_from_counts([1, 2, 3], [2, 4, 8], max_dim=1.0)

    def test_full_interval(self):
        assert box_dimension(DyadicSet.full(1, 8)).slope == pytest.approx(1.0)

    def test_cantor_set(self):
        estimate = box_dimension(generate_set(CantorSetSpec(ratio=0.25, depth=6)))
        assert estimate.slope == pytest.approx(0.5, abs=0.05)
        assert estimate.band[0] <= estimate.slope <= estimate.band[1]


class TestPoints:
    def test_cantor_coordinates(self):
        assert cantor_coordinates(0.25, 2).tolist() == pytest.approx([0.03125, 0.21875, 0.78125, 0.96875])

    @pytest.mark.parametrize(("ratio", "depth"), [(0.5, 3), (0.0, 3), (0.25, -1), (0.25, 21)])
    def test_cantor_rejects(self, ratio, depth):
        with pytest.raises(InvalidParameterError):
            cantor_coordinates(ratio, depth)

    def test_segment(self):
        points = generate_points(SegmentSpec(start=[0.0, 0.0], end=[1.0, 0.5], count=5))
        assert points.shape == (5, 2)
        assert points[2].tolist() == pytest.approx([0.5, 0.25])

    def test_single_point(self):
        assert generate_points(PointSpec(coords=[0.1, 0.2])).tolist() == [[0.1, 0.2]]

    def test_cantor_line(self):
        points = generate_points(CANTOR_LINE)
        assert points.shape == (64, 4)
        assert np.all(points[:, :3] == 0.0)

    def test_cantor_product_stays_in_unit_ball(self):
        factors = [CantorFactor(0.0625, 3, 0), CantorFactor(0.0625, 3, 1)]
        points = generate_points(CantorProductSpec(factors=factors, dim=4))
        assert points.shape == (64, 4)
        assert np.linalg.norm(points, axis=1).max() <= 1.0
        assert np.all(points[:, 2:] == 0.0)

    def test_cantor_product_rejects_repeated_axes(self):
        factors = [CantorFactor(0.25, 2, 1), CantorFactor(0.25, 2, 1)]
        with pytest.raises(InvalidParameterError):
            generate_points(CantorProductSpec(factors=factors, dim=3))


class TestSpecs:
    def test_load_experiment(self):
        spec = load_experiment(
            b'{"chart": {"kind": "sphere_slice", "c": 0.5}, "points": {"kind": "point", "coords": [0, 0, 0, 1]}}'
        )
        assert spec.chart == SphereSliceSpec(c=0.5)
        assert spec.points == PointSpec(coords=[0.0, 0.0, 0.0, 1.0])
        assert (spec.min_scale, spec.max_scale, spec.directions) == (6, 12, 50)

    @pytest.mark.parametrize(
        "text",
        [b"not json", b'{"chart": {"kind": "torus"}, "points": {"kind": "point", "coords": [0]}}', b"{}"],
    )
    def test_load_experiment_rejects(self, text):
        with pytest.raises(InvalidParameterError):
            load_experiment(text)


class TestProjection:
    def test_cantor_line_projects_to_half_dimension(self, projection):
        assert len(projection.estimates) == 8
        assert projection.directions.shape == (8, 4)
        assert projection.fraction_within(0.42, 0.58) == 1.0
        assert projection.expected == pytest.approx(0.5, abs=0.1)
        assert len(projection.table()) == 8
        assert len(projection.table()[0]) == len(projection.HEADER)

    def test_directions_are_seeded(self, projection):
        again = project_dim_experiment(experiment())
        assert np.array_equal(again.parameters, projection.parameters)
        assert np.allclose(again.slopes, projection.slopes)

    def test_sweep(self, projection):
        low, high = exceptional_sweep(experiment(), [0.1, 1.0], report=projection)
        assert (low.count, low.fraction, low.dimension) == (0, 0.0, None)
        assert high.count == 8
        assert high.fraction == 1.0
        assert high.dimension is not None
        assert low.bound == pytest.approx(1.1)
        assert high.bound == pytest.approx(2.0)

    def test_flat_chart_fails_gate(self):
        with pytest.raises(ChartGateError) as e:
            project_dim_experiment(experiment(chart=FlatGraphSpec()))
        assert not e.value.report.passed

    def test_points_must_match_ambient_dimension(self):
        with pytest.raises(InvalidParameterError):
            project_dim_experiment(experiment(points=PointSpec(coords=[0.0, 0.0, 1.0])))

    def test_points_must_lie_in_unit_ball(self):
        with pytest.raises(InvalidParameterError):
            project_dim_experiment(experiment(points=PointSpec(coords=[0.0, 0.0, 0.0, 2.0])))

    def test_scale_range(self):
        with pytest.raises(InsufficientScalesError):
            project_dim_experiment(experiment(min_scale=6, max_scale=8))
        with pytest.raises(InvalidParameterError):
            project_dim_experiment(experiment(min_scale=12, max_scale=17))


@pytest.mark.slow
def test_cantor_product_projects_at_its_dimension():
    # dimensions 0.2 and 0.3; unequal ratios keep the box-count staircases out of phase
    factors = [CantorFactor(2.0**-5, 6, 2), CantorFactor(2.0 ** (-10 / 3), 6, 3)]
    spec = ExperimentSpec(
        chart=SphereSliceSpec(c=0.5), points=CantorProductSpec(factors=factors, dim=4), directions=50, seed=1
    )
    report = project_dim_experiment(spec, threads=8)
    assert len(report.slopes) == 50
    assert report.fraction_within(0.4, 0.6) >= 0.9
