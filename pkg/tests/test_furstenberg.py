from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from pycinematic.dyadic import DyadicSet
from pycinematic.errors import (
    InvalidFamilyError,
    InvalidParameterError,
    InvalidScaleError,
    MisalignedCellError,
    OutOfRegimeError,
    SpreadViolationError,
)
from pycinematic.fields import FunctionFamily, PolynomialField
from pycinematic.furstenberg import (
    ConfigParams,
    build_configuration,
    cs_union_lower_bound,
    family_spread_constant,
    furstenberg_exponent,
    incidence_lower_bound_check,
    l2_energy,
    load_configuration,
    neighborhood_overlap,
    parallel_hyperplane_configuration,
    plant_sets,
    save_configuration,
)


def constants(*heights: float, dim: int = 1) -> FunctionFamily:
    return FunctionFamily([PolynomialField.constant(h, dim=dim) for h in heights])


@pytest.fixture(scope="module")
def sharp():
    return parallel_hyperplane_configuration(0.5, 0.5, 6, n=2, seed=3)


def test_expected_exponent():
    assert furstenberg_exponent(3, 0.5, 0.3) == pytest.approx(1.8)
    assert furstenberg_exponent(2, 0.4, 0.9) == pytest.approx(0.8)


def test_params_default_constant():
    params = ConfigParams(scale=4, s=0.5, t=0.5, epsilon=0.25)
    assert params.delta == 1 / 16
    assert params.constant == pytest.approx(2.0)
    assert ConfigParams(scale=4, s=0.5, t=0.5, C=7.0).constant == 7.0


class TestCauchySchwarz:
    def test_disjoint_sets_are_sharp(self):
        bound = cs_union_lower_bound([1.0, 2.0], np.diag([1.0, 2.0]))
        assert bound.value == pytest.approx(3.0)
        assert not bound.degenerate

    def test_identical_sets(self):
        bound = cs_union_lower_bound([1.0, 1.0], np.ones((2, 2)))
        assert bound.value == pytest.approx(1.0)

    def test_empty_sets_are_degenerate(self):
        assert cs_union_lower_bound([0.0, 0.0], np.zeros((2, 2))).degenerate

    def test_overlaps_must_be_symmetric(self):
        with pytest.raises(InvalidParameterError):
            cs_union_lower_bound([1.0, 1.0], [[1.0, 0.5], [0.2, 1.0]])
        with pytest.raises(InvalidParameterError):
            cs_union_lower_bound([1.0, 1.0], np.eye(3))


def test_plant_sets_follow_the_graphs():
    family = constants(0.25, 0.75)
    sets = plant_sets(family, DyadicSet.full(1, 3))
    assert [E.dim for E in sets] == [2, 2]
    assert set(sets[0].cells[:, 1].tolist()) == {2}
    assert set(sets[1].cells[:, 1].tolist()) == {6}
    assert sets[0].cells[:, 0].tolist() == list(range(8))


def test_plant_sets_checks_dimension():
    with pytest.raises(InvalidParameterError):
        plant_sets(constants(0.25, 0.75), DyadicSet.full(2, 2))


def test_family_spread_constant():
    family = constants(*(np.arange(8) / 8 + 1 / 16))
    report = family_spread_constant(family, 1.0, 1 / 8)
    assert len(report.per_radius) == 4
    assert report.constant >= 1.0
    assert report.cardinality == 8


class TestBuildConfiguration:
    def test_sets_are_trimmed_to_common_size(self):
        family = constants(0.25, 0.75)
        sets = plant_sets(family, DyadicSet.full(1, 3))
        sets[1] = sets[1].select(np.arange(4))
        config = build_configuration(family, sets, ConfigParams(3, 1.0, 1.0, check_spread=False))
        assert config.M == 4
        assert [len(E) for E in config.sets] == [4, 4]
        assert config.n == 2
        assert config.delta == 1 / 8

    def test_misaligned_cell_is_named(self):
        family = constants(0.25, 0.75)
        sets = [DyadicSet(2, 3, [[0, 6]]), DyadicSet(2, 3, [[0, 6]])]
        with pytest.raises(MisalignedCellError) as e:
            build_configuration(family, sets, ConfigParams(3, 1.0, 1.0, check_spread=False))
        assert e.value.field_index == 0
        assert e.value.cell == (0, 6)

    def test_scale_must_match(self):
        family = constants(0.25, 0.75)
        sets = plant_sets(family, DyadicSet.full(1, 4))
        with pytest.raises(InvalidScaleError):
            build_configuration(family, sets, ConfigParams(3, 1.0, 1.0))

    def test_family_must_be_separated(self):
        family = constants(0.5, 0.51)
        sets = plant_sets(family, DyadicSet.full(1, 3))
        with pytest.raises(InvalidFamilyError):
            build_configuration(family, sets, ConfigParams(3, 1.0, 1.0, check_spread=False))

    def test_counts_must_match(self):
        family = constants(0.25, 0.75)
        with pytest.raises(InvalidParameterError):
            build_configuration(family, plant_sets(family, DyadicSet.full(1, 3))[:1], ConfigParams(3, 1.0, 1.0))

    def test_exponents_must_be_in_range(self):
        family = constants(0.25, 0.75)
        with pytest.raises(InvalidParameterError):
            build_configuration(family, plant_sets(family, DyadicSet.full(1, 3)), ConfigParams(3, 0.0, 1.0))

    def test_concentrated_sets_violate_spread(self):
        family = constants(0.25, 0.75)
        sets = plant_sets(family, DyadicSet(1, 3, [[0], [1]]))
        with pytest.raises(SpreadViolationError) as e:
            build_configuration(family, sets, ConfigParams(3, 1.0, 1.0, C=1.0))
        assert e.value.constant > 1.0

    def test_spread_gate_sees_balls_between_cells(self):
        family = constants(0.25, 0.75)
        sets = plant_sets(family, DyadicSet(1, 3, [[2], [5]]))
        with pytest.raises(SpreadViolationError) as e:
            build_configuration(family, sets, ConfigParams(3, 0.5, 0.5, C=1.8))
        assert e.value.constant == pytest.approx(2.0)
        assert e.value.radius == 0.25


class TestSharpConfiguration:
    def test_incidence_bound_holds(self, sharp):
        report = incidence_lower_bound_check(sharp)
        assert report.passed
        assert report.union == len(sharp.family) * sharp.M
        assert report.cs_cells == pytest.approx(report.union)
        assert report.pairwise_overlap == 0.0
        assert report.expected_exponent == pytest.approx(1.0)
        assert 0 < report.measured_exponent <= 2

    def test_out_of_regime(self):
        config = parallel_hyperplane_configuration(0.3, 0.6, 5, n=2, seed=1)
        with pytest.raises(OutOfRegimeError):
            incidence_lower_bound_check(config)

    def test_neighborhood_overlap_of_distinct_heights(self, sharp):
        report = neighborhood_overlap(sharp, 0, 1)
        assert report.overlap == 0.0
        assert report.ratio == 0.0
        assert report.t == pytest.approx(abs(sharp.distances[0, 1]))
        assert report.shape.t == pytest.approx(report.t)

    def test_overlap_needs_two_members(self, sharp):
        with pytest.raises(InvalidParameterError):
            neighborhood_overlap(sharp, 1, 1)

    def test_overlap_counts_shared_cells(self):
        family = FunctionFamily([PolynomialField([0.0, 1.0]), PolynomialField([0.875, -1.0])])
        sets = plant_sets(family, DyadicSet.full(1, 3))
        config = build_configuration(family, sets, ConfigParams(3, 1.0, 1.0, check_spread=False))
        report = neighborhood_overlap(config, 0, 1)
        assert np.intersect1d(sets[0].keys(), sets[1].keys()).size == 1
        assert report.overlap == pytest.approx(1 / 64)

    def test_three_dimensional_variant(self):
        config = parallel_hyperplane_configuration(0.5, 0.5, 4, n=3, seed=2)
        assert config.n == 3
        assert all(E.dim == 3 for E in config.sets)
        assert incidence_lower_bound_check(config).union == len(config.family) * config.M

    def test_save_and_reload(self, sharp, tmp_path: Path):
        directory = save_configuration(sharp, tmp_path / "config")
        assert (directory / "family.json").is_file()
        assert len(list((directory / "sets").glob("*.bin"))) == len(sharp.family)
        loaded = load_configuration(directory)
        assert loaded.M == sharp.M
        assert loaded.sets == sharp.sets
        assert loaded.params == sharp.params


class TestEnergy:
    def test_identity_for_overlapping_constants(self):
        delta = 2.0**-5
        report = l2_energy(constants(0.3, 0.3 + delta), delta, t=0.5)
        assert report.diagonal == pytest.approx(4 * delta)
        assert report.off_diagonal == pytest.approx(2 * delta, rel=1e-9)
        assert report.lhs == pytest.approx(6 * delta, rel=1e-9)
        assert report.discrepancy < 1e-6
        assert report.pairwise == pytest.approx(report.lhs, rel=1e-6)
        assert report.annuli == {5: 1}
        assert not report.delta0_ok

    def test_budget(self):
        delta = 2.0**-5
        report = l2_energy(constants(0.2, 0.6), delta, t=1.0, epsilon=0.0)
        assert report.off_diagonal == 0.0
        assert report.budget == pytest.approx(4 * delta**2)
        assert report.within_budget is (report.lhs <= report.budget)

    def test_family_must_be_separated(self):
        delta = 2.0**-5
        with pytest.raises(InvalidFamilyError):
            l2_energy(constants(0.3, 0.3 + delta / 2), delta, t=0.5)


@pytest.mark.slow
def test_energy_of_sixty_four_lines():
    delta = 2.0**-8
    members = [PolynomialField([0.1 + 0.8 * i / 63, 0.01 * (-1) ** i]) for i in range(64)]
    report = l2_energy(FunctionFamily(members), delta, t=0.5, epsilon=0.05, threads=8)
    assert report.off_diagonal > 0
    assert report.discrepancy < 0.02
    assert report.lhs <= delta ** (-0.1) * 64**2 * delta**1.5
    assert report.within_budget


@pytest.mark.slow
@pytest.mark.parametrize("scale", [6, 8])
@pytest.mark.parametrize("seed", range(5))
def test_generated_configurations_meet_the_incidence_bound(scale: int, seed: int):
    config = parallel_hyperplane_configuration(0.5, 0.5, scale, n=3, seed=seed, epsilon=0.05)
    report = incidence_lower_bound_check(config)
    delta = 2.0**-scale
    assert report.passed
    assert report.union >= delta ** (16 * 0.05 - 0.5 - 1.5)
    # random spread sets overshoot their nominal size by a bounded factor
    assert report.union <= 4 * delta ** (-16 * 0.05) * report.bound


def rectangle_areas(corners: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Areas, pairwise overlaps and the union area on a 1024² grid of rectangles `(x0, y0, x1, y1)`."""
    lo = np.maximum(corners[:, None, :2], corners[None, :, :2])
    hi = np.minimum(corners[:, None, 2:], corners[None, :, 2:])
    overlaps = np.prod(np.clip(hi - lo, 0, None), axis=-1)
    grid = np.zeros((1024, 1024), dtype=bool)
    for x0, y0, x1, y1 in np.round(corners * 1024).astype(int):
        grid[x0:x1, y0:y1] = True
    return np.diag(overlaps), overlaps, float(grid.sum()) / 1024**2


@pytest.mark.slow
def test_cauchy_schwarz_under_rectangle_unions(rng):
    for _ in range(100):
        m = int(rng.integers(2, 7))
        a = rng.integers(0, 1024, size=(m, 2, 2))
        corners = np.concatenate([a.min(axis=1), a.max(axis=1) + 1], axis=1).clip(0, 1024) / 1024
        measures, overlaps, union = rectangle_areas(corners)
        assert cs_union_lower_bound(measures, overlaps).value <= union * (1 + 1e-12)

    corners = np.tile([[0.125, 0.25, 0.625, 0.5]], (5, 1))
    measures, overlaps, union = rectangle_areas(corners)
    assert cs_union_lower_bound(measures, overlaps).value == pytest.approx(union, rel=0.01)
