from __future__ import annotations

import itertools

import numpy as np
import pytest
from numpy.polynomial import Polynomial

from pycinematic.dyadic import DyadicSet
from pycinematic.errors import (
    DomainMismatchError,
    FlowDegenerateError,
    InvalidParameterError,
    NonInteriorCriticalPointError,
    PreconditionError,
    TooCoarseError,
)
from pycinematic.fields import FunctionFamily, PolynomialField, RayRestriction, induced_projection_family
from pycinematic.geometry import SphereSliceChart
from pycinematic.grids import Box
from pycinematic.intersect import (
    Profile,
    Slab,
    gradient_flow_foliation,
    intersection_measure,
    polar_slices,
    shape_count,
    sublevel_interval,
    verify_intersection_bound,
)

DELTA = 2.0**-6


def line(slope: float, intercept: float = 0.0) -> PolynomialField:
    return PolynomialField([intercept, slope])


def bowl(constant: float = 0.0) -> PolynomialField:
    return PolynomialField.quadratic(np.eye(2), [-1.0, -1.0], 0.5 + constant)


class TestSlab:
    def test_measure_is_twice_delta_times_area(self):
        slab = Slab(PolynomialField.constant(0.3), 0.01, Box((0.0, 0.0), (2.0, 0.5)))
        assert slab.measure() == pytest.approx(0.02)

    def test_contains(self):
        slab = Slab(line(1.0), 0.1)
        assert slab.contains([[0.5]], [0.55]).tolist() == [True]
        assert slab.contains([[0.5]], [0.7]).tolist() == [False]
        assert slab.contains([[1.5]], [1.5]).tolist() == [False]


class TestIntersectionMeasure:
    def test_parallel_constants_overlap_exactly(self):
        delta = 2.0**-5
        f = PolynomialField.constant(0.5)
        g = PolynomialField.constant(0.5 + delta / 2)
        report = intersection_measure(f, g, delta)
        assert report.measure == pytest.approx(1.5 * delta)
        assert report.case == "small-t"
        assert len(report.projection) == 32**2

    def test_separated_constants_do_not_meet(self):
        delta = 2.0**-5
        f = PolynomialField.constant(0.0)
        g = PolynomialField.constant(3 * delta)
        report = intersection_measure(f, g, delta, analyse=False)
        assert report.measure == 0.0
        assert len(report.projection) == 0
        assert report.t is None

    def test_transversal_lines(self):
        report = intersection_measure(line(1.0), PolynomialField.constant(0.0, dim=1), DELTA)
        assert report.measure == pytest.approx(2 * DELTA**2, rel=0.1)
        assert report.t == pytest.approx(2.0, rel=1e-6)
        assert report.case != "small-t"
        assert report.bound_ratio == pytest.approx(4.0, rel=0.1)
        assert report.projection.scale == 6
        assert report.projection.keys().tolist() == [0, 1]
        assert report.band > 0

    def test_resolution_must_be_fine(self):
        with pytest.raises(TooCoarseError):
            intersection_measure(line(1.0), line(0.0), DELTA, resolution=DELTA / 4)

    def test_thickness_must_be_positive(self):
        with pytest.raises(InvalidParameterError):
            intersection_measure(line(1.0), line(0.0), 0.0)

    def test_domains_must_agree(self):
        other = PolynomialField([0.0, 1.0], Box((0.0,), (2.0,)))
        with pytest.raises(DomainMismatchError):
            intersection_measure(line(1.0), other, DELTA)
        with pytest.raises(DomainMismatchError):
            intersection_measure(line(1.0), line(0.0), DELTA, Box((0.5,), (1.5,)))


class TestBoundTable:
    def test_ratios_stay_bounded(self):
        family = FunctionFamily([line(0.0), line(0.5), line(1.0)])
        table = verify_intersection_bound(family, "all", [2.0**-5, 2.0**-6])
        assert len(table.rows) == 6
        assert not table.skipped
        assert all(3.0 < row.ratio < 5.5 for row in table.rows)
        assert set(table.max_ratio) == {2.0**-5, 2.0**-6}
        assert table.trend_bounded
        assert len(table.table()[0]) == len(table.HEADER)

    def test_close_pairs_are_skipped(self):
        family = FunctionFamily([PolynomialField.constant(0.0), PolynomialField.constant(2.0**-8)])
        table = verify_intersection_bound(family, [(0, 1)], [2.0**-5])
        assert table.rows == []
        assert table.skipped[0][0] == "0-1"
        assert table.trend_bounded


class TestFlow:
    def test_linear_field_is_foliated_by_parallel_lines(self):
        h = PolynomialField([[0.0, 2.0], [1.0, 0.0]])
        flow = gradient_flow_foliation(h, h.domain, 2.0**-4)
        assert flow.terminated
        assert flow.monotone
        assert flow.coverage == 1.0
        assert flow.lipschitz == pytest.approx(1.0, abs=0.05)
        assert flow.field_bound == pytest.approx(0.0, abs=1e-9)
        assert flow.gronwall == pytest.approx(1.0)
        assert flow.arclengths.max() == pytest.approx(np.sqrt(5) / 2, rel=1e-3)

    def test_step_is_capped(self):
        h = PolynomialField([[0.0, 2.0], [1.0, 0.0]])
        with pytest.raises(InvalidParameterError):
            gradient_flow_foliation(h, h.domain, 2.0**-4, step=2.0**-3)

    def test_vanishing_gradient_is_reported(self):
        h = PolynomialField.quadratic(-np.eye(2), [1.0, 1.0])
        with pytest.raises(FlowDegenerateError):
            gradient_flow_foliation(h, h.domain, 2.0**-4)


class TestSublevel:
    def test_transversal_profile(self):
        report = sublevel_interval(Profile.polynomial([-0.5, 1.0]), 0.01, "transversal")
        assert report.single_interval
        assert report.intervals[0] == pytest.approx((0.48, 0.52), abs=1e-9)
        assert report.measure == pytest.approx(0.04, abs=1e-9)
        assert report.t == pytest.approx(1.5)
        assert report.bound_ratio == pytest.approx(6.0, rel=1e-6)

    def test_tangent_profile(self):
        report = sublevel_interval(Profile.polynomial([0.001, 0.0, 1.0]), 0.01, "tangent")
        assert report.single_interval
        assert not report.negated
        assert report.intervals[0][0] == 0.0
        assert report.measure == pytest.approx(np.sqrt(0.019), abs=1e-9)
        assert report.endpoint_bound is not None
        assert report.measure <= report.endpoint_bound
        assert report.rigorous_endpoint is not None
        assert report.measure <= report.rigorous_endpoint

    def test_concave_profile_is_negated(self):
        report = sublevel_interval(Profile.polynomial([-0.001, 0.0, -1.0]), 0.01, "tangent")
        assert report.negated
        assert report.measure == pytest.approx(np.sqrt(0.019), abs=1e-9)

    def test_tangent_mode_needs_flat_start(self):
        with pytest.raises(PreconditionError) as e:
            sublevel_interval(Profile.polynomial([0.0, 1.0, 1.0]), 0.01, "tangent")
        assert e.value.inequality == "h′(0⁺) = 0"

    def test_transversal_mode_needs_lower_bound(self):
        with pytest.raises(PreconditionError) as e:
            sublevel_interval(Profile.polynomial([0.25, -1.0, 1.0]), 0.01, "transversal")
        assert e.value.inequality == "λ₁ ≥ c₂t"

    def test_thickness_below_threshold(self):
        with pytest.raises(PreconditionError) as e:
            sublevel_interval(Profile.polynomial([-0.5, 1.0]), 0.5, "transversal")
        assert e.value.inequality == "δ < c₁t"

    def test_unknown_mode(self):
        with pytest.raises(InvalidParameterError):
            sublevel_interval(Profile.polynomial([-0.5, 1.0]), 0.01, "sideways")  # pyright: ignore[reportArgumentType]


class TestPolar:
    def test_disk_around_minimum(self):
        report = polar_slices(bowl(), (0.5, 0.5), DELTA)
        assert report.convexity == 1
        assert report.lambda_bar == pytest.approx(0.0, abs=1e-12)
        assert report.polar_measure == pytest.approx(2 * np.pi * DELTA, rel=0.02)
        assert report.relative_error < 0.05
        assert report.max_endpoint == pytest.approx(np.sqrt(2 * DELTA), rel=1e-3)
        assert report.max_endpoint <= report.endpoint_bounds.max() * (1 + 1e-9)

    def test_ray_endpoints_are_certified(self):
        report = polar_slices(bowl(0.001), (0.5, 0.5), DELTA, directions=16)
        np.testing.assert_allclose(report.endpoint_bounds, np.sqrt(0.001 + 2 * DELTA), rtol=1e-6)
        ray = Profile.from_ray(RayRestriction(bowl(0.001), (0.5, 0.5), report.directions[3]))
        single = sublevel_interval(ray, DELTA, "tangent", c2=2 / 3, t=3.0, slope_tolerance=10 * DELTA)
        np.testing.assert_allclose(single.intervals, report.intervals[3])
        assert single.rigorous_endpoint == pytest.approx(report.endpoint_bounds[3])

    def test_thick_slab_breaks_the_tangent_precondition(self):
        with pytest.raises(PreconditionError) as e:
            polar_slices(bowl(), (0.5, 0.5), 0.75)
        assert e.value.inequality == "δ < c₁t"

    def test_concave_field(self):
        report = polar_slices(PolynomialField.quadratic(-np.eye(2), [1.0, 1.0], -0.5), (0.5, 0.5), DELTA)
        assert report.convexity == -1

    def test_critical_point_must_be_interior(self):
        with pytest.raises(NonInteriorCriticalPointError) as e:
            polar_slices(bowl(), (0.0, 0.5), DELTA)
        assert e.value.boundary_distance == 0.0

    def test_gradient_must_be_small(self):
        with pytest.raises(PreconditionError):
            polar_slices(bowl(), (0.25, 0.5), DELTA)

    def test_saddle_is_rejected(self):
        saddle = PolynomialField.quadratic(np.diag([1.0, -1.0]), [-1.0, 1.0])
        with pytest.raises(PreconditionError):
            polar_slices(saddle, (0.5, 0.5), DELTA)


class TestShapeCount:
    def test_full_line_over_crossing(self):
        f, g = line(1.0), PolynomialField.constant(0.0, dim=1)
        report = shape_count(DyadicSet.full(1, 6), f, g, DELTA, s=1.0)
        assert report.count == 2
        assert report.t == pytest.approx(2.0, rel=1e-6)
        assert report.ratio == pytest.approx(4.0, rel=1e-6)
        assert report.precondition_ok

    def test_oversized_set_fails_precondition(self):
        f, g = line(1.0), PolynomialField.constant(0.0, dim=1)
        report = shape_count(DyadicSet.full(1, 6), f, g, DELTA, s=0.5)
        assert not report.precondition_ok

    def test_set_is_moved_to_the_projection_scale(self):
        f, g = line(1.0), PolynomialField.constant(0.0, dim=1)
        report = shape_count(DyadicSet.full(1, 8), f, g, DELTA, s=1.0)
        assert report.count == 2

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidParameterError):
            shape_count(DyadicSet.full(2, 3), line(1.0), line(0.0), DELTA, s=1.0)


def plane_points(rng, count):
    """Points of the unit ball in the first two coordinates of R^4."""
    angle = rng.random(count) * 2 * np.pi
    radius = 0.9 * np.sqrt(rng.random(count))
    return np.stack([radius * np.cos(angle), radius * np.sin(angle), np.zeros(count), np.zeros(count)], axis=1)


@pytest.mark.slow
def test_bound_trend_over_induced_pairs(rng):
    z = rng.normal(size=(11, 4))
    points = 0.9 * z / np.linalg.norm(z, axis=1, keepdims=True) * rng.random((11, 1)) ** 0.25
    family = induced_projection_family(SphereSliceChart(0.5, 3), points)
    pairs = list(itertools.combinations(range(11), 2))[:50]
    deltas = [2.0**-k for k in range(6, 11)]
    table = verify_intersection_bound(family, pairs, deltas, threads=8)
    assert len(table.rows) + len(table.skipped) == 250
    assert set(table.max_ratio) == set(deltas)
    assert all(np.isfinite(r) for r in table.max_ratio.values())
    assert table.max_ratio[2.0**-10] < 2 * table.max_ratio[2.0**-6]
    assert table.trend_bounded


@pytest.mark.slow
def test_tangent_mode_matches_closed_form(rng):
    step = 1 / 4096
    for trial in range(200):
        a = rng.uniform(0.5, 2.0)
        lam = rng.uniform(-0.3, 0.05)
        cubic = rng.uniform(-a / 12, a / 12) if trial % 2 else 0.0
        delta = rng.uniform(0.002, 0.01)
        p = Polynomial([lam, 0.0, a, cubic])
        sign = -1.0 if trial % 3 == 0 else 1.0
        report = sublevel_interval(Profile.polynomial((sign * p).coef.tolist()), delta, "tangent", c2=0.2)
        assert len(report.intervals) <= 1
        assert report.negated is (sign < 0)
        if p(0.0) > 2 * delta:
            assert report.intervals == []
            continue

        def crossing(level: float) -> float:
            roots = (p - level).roots()
            real = roots[np.abs(roots.imag) < 1e-9].real
            return float(real[(real >= 0) & (real <= 1)].min())

        lo = 0.0 if p(0.0) >= -2 * delta else crossing(-2 * delta)
        hi = 1.0 if p(1.0) <= 2 * delta else crossing(2 * delta)
        [(start, end)] = report.intervals
        assert abs(start - lo) <= 2 * step
        assert abs(end - hi) <= 2 * step
        assert report.rigorous_endpoint is not None
        assert end <= report.rigorous_endpoint * (1 + 1e-9)


@pytest.mark.slow
def test_transversal_induced_pairs_are_foliated(rng):
    chart = SphereSliceChart(0.5, 3)
    family = induced_projection_family(chart, plane_points(rng, 7))
    delta = 2.0**-5
    pairs = list(itertools.combinations(range(7), 2))[:20]
    for i, j in pairs:
        h = family[i] - family[j]
        slopes = np.linalg.norm(h.gradient(h.domain.lattice(33)[0]), axis=-1)
        assert slopes.min() > 0
        flow = gradient_flow_foliation(h, h.domain, delta)
        assert flow.terminated
        assert flow.monotone
        assert flow.coverage >= 0.99
        assert flow.lipschitz <= flow.gronwall * (1 + 1e-9)
