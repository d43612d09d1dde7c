"""Boxes, sample lattices, direction nets and grid extremum search."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import TYPE_CHECKING, Callable

import numpy as np
import numpy.typing as npt

from pycinematic.errors import InvalidParameterError

if TYPE_CHECKING:
    from collections.abc import Sequence

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]

Objective = Callable[[FloatArray], FloatArray]
"""Vectorized objective mapping an (N, k) point array to N values."""

SUPPORTED_PARAM_DIMS: frozenset[int] = frozenset({1, 2, 3})
"""Parameter dimensions for which nets and lattices are defined."""

BATCH_SIZE: int = 1 << 16
"""Maximum number of points evaluated in one vectorized call."""


@dataclass(frozen=True, slots=True)
class Box:
    """An axis-aligned closed box `[lo, hi]` in parameter space."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self) -> None:
        """Validate corner ordering."""
        if len(self.lo) != len(self.hi) or not self.lo:
            raise InvalidParameterError(f"Box corners must share a positive dimension, got {self.lo} and {self.hi}")
        if any(b <= a for a, b in zip(self.lo, self.hi)):
            raise InvalidParameterError(f"Box must have positive side lengths, got lo={self.lo} hi={self.hi}")

    @classmethod
    def unit(cls, dim: int) -> Box:
        """Return the unit cube `[0, 1]^dim`."""
        return cls((0.0,) * dim, (1.0,) * dim)

    @property
    def dim(self) -> int:
        """Return the dimension of the box."""
        return len(self.lo)

    @property
    def lower(self) -> FloatArray:
        """Return the lower corner as an array."""
        return np.asarray(self.lo, dtype=np.float64)

    @property
    def upper(self) -> FloatArray:
        """Return the upper corner as an array."""
        return np.asarray(self.hi, dtype=np.float64)

    @property
    def sides(self) -> FloatArray:
        """Return the side lengths."""
        return self.upper - self.lower

    @property
    def center(self) -> FloatArray:
        """Return the center point."""
        return (self.upper + self.lower) / 2

    @property
    def diameter(self) -> float:
        """Return the Euclidean diameter."""
        return float(np.linalg.norm(self.sides))

    @property
    def volume(self) -> float:
        """Return the Lebesgue measure."""
        return float(np.prod(self.sides))

    def lattice(self, nodes: int) -> tuple[FloatArray, FloatArray]:
        """Return an `nodes^k` tensor lattice including the faces, and its step per axis."""
        if nodes < 2:
            raise InvalidParameterError(f"A lattice needs at least 2 nodes per axis, got {nodes}")
        axes = [np.linspace(a, b, nodes) for a, b in zip(self.lo, self.hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        points = np.stack([m.ravel() for m in mesh], axis=-1)
        return points, self.sides / (nodes - 1)

    def contains(self, points: FloatArray, tol: float = 0.0) -> npt.NDArray[np.bool_]:
        """Return a mask of the points lying in the box, up to `tol`."""
        points = np.asarray(points, dtype=np.float64)
        return np.all((points >= self.lower - tol) & (points <= self.upper + tol), axis=-1)

    def clip(self, points: FloatArray) -> FloatArray:
        """Project points onto the box."""
        return np.clip(points, self.lower, self.upper)

    def boundary_distance(self, point: FloatArray) -> float:
        """Return the signed distance to the boundary, negative outside."""
        point = np.asarray(point, dtype=np.float64)
        return float(np.min(np.minimum(point - self.lower, self.upper - point)))

    def scaled(self, factor: float, within: Box | None = None) -> Box:
        """Return the box dilated by `factor` about its center, optionally clipped to `within`."""
        half = self.sides * factor / 2
        lo, hi = self.center - half, self.center + half
        if within is not None:
            lo, hi = np.maximum(lo, within.lower), np.minimum(hi, within.upper)
        return Box(tuple(lo.tolist()), tuple(hi.tolist()))

    def subcubes(self, level: int) -> list[Box]:
        """Return the `2^(level*k)` dyadic subboxes at `level`, in lexicographic order."""
        count = 1 << level
        size = self.sides / count
        boxes = []
        for index in itertools.product(range(count), repeat=self.dim):
            lo = self.lower + np.asarray(index) * size
            boxes.append(Box(tuple(lo.tolist()), tuple((lo + size).tolist())))
        return boxes

    def to_unit(self, points: FloatArray) -> FloatArray:
        """Map points of the box affinely onto the unit cube."""
        return (np.asarray(points, dtype=np.float64) - self.lower) / self.sides


@dataclass(frozen=True, slots=True)
class Estimate:
    """A grid-based extremum: the value, where it was attained, and its uncertainty."""

    value: float
    argument: tuple[float, ...]
    uncertainty: float = 0.0


def as_points(x: npt.ArrayLike, dim: int) -> FloatArray:
    """Return `x` as a float array whose last axis has length `dim`."""
    points = np.asarray(x, dtype=np.float64)
    if points.ndim == 0 or points.shape[-1] != dim:
        raise InvalidParameterError(f"Expected points with trailing dimension {dim}, got shape {points.shape}")
    return points


@lru_cache(maxsize=16)
def _cached_net(dim: int, count: int, full: bool) -> FloatArray:
    if dim == 1:
        return np.array([[1.0], [-1.0]]) if full else np.array([[1.0]])
    if dim == 2:
        span = 2 * np.pi if full else np.pi
        angles = span * np.arange(count) / count
        return np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    index = np.arange(count) + 0.5
    z = 1 - 2 * index / count
    r = np.sqrt(1 - z**2)
    phi = np.pi * (3 - np.sqrt(5)) * index
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


def sphere_net(dim: int, count: int | None = None, *, full: bool = False) -> FloatArray:
    """Return unit directions covering `S^(dim-1)`.

    Quadratic forms are even, so by default the circle is sampled on a half turn; `full=True`
    returns directions spread over the whole sphere, as polar quadrature needs. Three-dimensional
    nets use a Fibonacci layout.

    Raises:
        InvalidParameterError: if `dim` is not 1, 2 or 3.
    """
    if dim not in SUPPORTED_PARAM_DIMS:
        raise InvalidParameterError(f"Direction nets exist for dimensions 1-3, got {dim}")
    if count is None:
        count = 64 if dim == 2 else 256
    net = _cached_net(dim, count, full)
    net.flags.writeable = False
    return net


def evaluate_batched(objective: Objective, points: FloatArray, batch: int = BATCH_SIZE) -> FloatArray:
    """Evaluate a vectorized objective in bounded batches."""
    if len(points) <= batch:
        return np.asarray(objective(points), dtype=np.float64)
    return np.concatenate([objective(points[i : i + batch]) for i in range(0, len(points), batch)])


@lru_cache(maxsize=4)
def _stencil(dim: int) -> FloatArray:
    offsets = np.array([-1.0, -0.5, 0.0, 0.5, 1.0])
    mesh = np.meshgrid(*([offsets] * dim), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def refine_extremum(
    objective: Objective,
    point: FloatArray,
    step: FloatArray,
    domain: Box,
    *,
    maximize: bool,
    passes: int = 2,
) -> tuple[float, FloatArray]:
    """Refine a grid extremum on 5^k stencils, halving the step on every pass."""
    best_x = np.asarray(point, dtype=np.float64)
    best_v = float(objective(best_x[None])[0])
    h = np.asarray(step, dtype=np.float64)
    stencil = _stencil(domain.dim)
    for _ in range(passes):
        candidates = domain.clip(best_x + stencil * h)
        values = objective(candidates)
        i = int(np.argmax(values) if maximize else np.argmin(values))
        if (values[i] > best_v) if maximize else (values[i] < best_v):
            best_v, best_x = float(values[i]), candidates[i]
        h = h / 2
    return best_v, best_x


def grid_extremum(
    objective: Objective,
    domain: Box,
    nodes: int,
    *,
    maximize: bool,
    refine: bool = True,
) -> tuple[float, FloatArray, FloatArray]:
    """Return the extremum of `objective` over a lattice, its argument and the lattice step."""
    points, step = domain.lattice(nodes)
    values = evaluate_batched(objective, points)
    i = int(np.argmax(values) if maximize else np.argmin(values))
    value, argument = float(values[i]), points[i]
    if refine:
        value, argument = refine_extremum(objective, argument, step, domain, maximize=maximize)
    return value, argument, step


def dyadic_exponents(deltas: Sequence[float]) -> list[int]:
    """Return `m` with `δ = 2^-m` for each δ, rejecting non-dyadic values."""
    exponents = []
    for delta in deltas:
        m = -np.log2(delta)
        if delta <= 0 or abs(m - round(m)) > 1e-9:
            raise InvalidParameterError(f"Scale {delta!r} is not a power of 2")
        exponents.append(round(m))
    return exponents
