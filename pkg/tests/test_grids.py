import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pycinematic.errors import InvalidParameterError
from pycinematic.grids import Box, as_points, dyadic_exponents, grid_extremum, sphere_net


def test_box_rejects_degenerate_corners():
    with pytest.raises(InvalidParameterError):
        Box((0.0, 1.0), (1.0, 1.0))
    with pytest.raises(InvalidParameterError):
        Box((0.0,), (1.0, 1.0))


def test_lattice_includes_faces():
    points, step = Box.unit(2).lattice(5)
    assert points.shape == (25, 2)
    np.testing.assert_allclose(step, [0.25, 0.25])
    assert points.min() == 0.0 and points.max() == 1.0


def test_subcubes_tile_the_box():
    box = Box((-1.0, 0.0), (1.0, 2.0))
    cubes = box.subcubes(2)
    assert len(cubes) == 16
    assert sum(c.volume for c in cubes) == pytest.approx(box.volume)


def test_scaled_clipped_to_parent():
    box = Box((0.0,), (1.0,))
    inner = Box((0.8,), (1.0,)).scaled(3.0, within=box)
    assert inner.lo == pytest.approx((0.6,))
    assert inner.hi == pytest.approx((1.0,))


def test_boundary_distance_sign():
    box = Box.unit(2)
    assert box.boundary_distance(np.array([0.5, 0.5])) == pytest.approx(0.5)
    assert box.boundary_distance(np.array([1.2, 0.5])) < 0


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_sphere_net_is_unit(dim):
    net = sphere_net(dim, full=True)
    np.testing.assert_allclose(np.linalg.norm(net, axis=1), 1.0)


def test_sphere_net_rejects_dimension_four():
    with pytest.raises(InvalidParameterError):
        sphere_net(4)


def test_sphere_net_is_read_only():
    net = sphere_net(2)
    with pytest.raises(ValueError):
        net[0, 0] = 3.0


def test_grid_extremum_refines_off_lattice():
    target = np.array([0.3141, 0.2718])

    def bowl(x):
        return np.sum((x - target) ** 2, axis=-1)

    value, arg, _ = grid_extremum(bowl, Box.unit(2), 9, maximize=False)
    assert value < 2e-4
    np.testing.assert_allclose(arg, target, atol=1e-2)


def test_as_points_checks_trailing_axis():
    assert as_points([0.1, 0.2], 2).shape == (2,)
    with pytest.raises(InvalidParameterError):
        as_points([0.1, 0.2, 0.3], 2)


@given(st.integers(min_value=0, max_value=40))
def test_dyadic_exponents_invert_powers(m):
    assert dyadic_exponents([2.0**-m]) == [m]


def test_dyadic_exponents_reject_non_dyadic():
    with pytest.raises(InvalidParameterError):
        dyadic_exponents([0.3])
