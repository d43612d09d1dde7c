"""Scalar fields over parameter boxes, function families and the cinematic gate.

The C² norm used throughout is `sup|h| + sup|∇h| + sup_ξ|∇_ξ∇_ξh|`. The directional extremes over
unit ξ are taken from the eigenvalues of the Hessian, which is what a dense sphere net converges to.
"""

from __future__ import annotations

import itertools
import logging
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, ClassVar, Literal

import msgspec
import numpy as np
from numpy.polynomial import polynomial as P
from scipy.interpolate import CubicSpline, RectBivariateSpline
from scipy.optimize import minimize
from typing_extensions import override

from pycinematic.errors import (
    CinematicViolationError,
    DomainMismatchError,
    InvalidFamilyError,
    InvalidParameterError,
)
from pycinematic.geometry import ChartSpec, ManifoldChart, chart_from_spec
from pycinematic.grids import Box, Estimate, FloatArray, as_points, evaluate_batched, grid_extremum

if TYPE_CHECKING:
    from collections.abc import Callable, Iterator, Sequence

    import numpy.typing as npt

logger = logging.getLogger(__name__)

DEFAULT_NODES: int = 65
"""Lattice nodes per axis for suprema and infima over the domain."""

ETA_GRID: tuple[float, ...] = tuple(2.0**-i for i in range(1, 9))
"""Values of η at which the modulus of continuity is sampled."""

ZERO_TOLERANCE: float = 1e-9
"""Relative size below which a cinematic infimum counts as zero."""

MAX_HALVINGS: int = 24
"""Halvings of `η/K` tried before the modulus of continuity is declared zero at η."""


class ScalarField(ABC):
    """A C² function on a parameter box with vectorized value, gradient and Hessian."""

    provenance: ClassVar[str] = "custom"

    def __init__(self, domain: Box) -> None:
        """Record the domain box."""
        self.domain: Box = domain

    @property
    def dim(self) -> int:
        """Return the number of variables."""
        return self.domain.dim

    @abstractmethod
    def value(self, x: npt.ArrayLike) -> FloatArray:
        """Return `f(x)` with shape `x.shape[:-1]`."""

    @abstractmethod
    def gradient(self, x: npt.ArrayLike) -> FloatArray:
        """Return `∇f(x)` with shape `x.shape`."""

    @abstractmethod
    def hessian(self, x: npt.ArrayLike) -> FloatArray:
        """Return `∇²f(x)` with shape `x.shape + (k,)`."""

    def directional_second(self, x: npt.ArrayLike, xi: npt.ArrayLike) -> FloatArray:
        """Return `∇_ξ∇_ξ f(x)` for unit vectors ξ broadcast against x."""
        xi = np.asarray(xi, dtype=np.float64)
        return np.einsum("...a,...ab,...b->...", xi, self.hessian(x), xi)

    def __sub__(self, other: ScalarField) -> ScalarField:
        """Return the difference field `self − other`."""
        return DifferenceField(self, other)


def _require_same_domain(f: ScalarField, g: ScalarField) -> None:
    if f.domain != g.domain:
        raise DomainMismatchError(f"Fields live on different boxes: {f.domain} and {g.domain}")


class InducedField(ScalarField):
    """`scale·⟨Σ(x), z⟩ + offset` for a chart Σ and a point z."""

    provenance: ClassVar[str] = "induced"

    def __init__(self, chart: ManifoldChart, z: npt.ArrayLike, scale: float = 1.0, offset: float = 0.0) -> None:
        """Bind the chart and the projection point."""
        super().__init__(chart.domain)
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (chart.ambient_dim,):
            raise InvalidParameterError(f"Point must lie in R^{chart.ambient_dim}, got shape {z.shape}")
        self.chart: ManifoldChart = chart
        self.z: FloatArray = z
        self.scale: float = float(scale)
        self.offset: float = float(offset)

    @override
    def value(self, x: npt.ArrayLike) -> FloatArray:
        return self.scale * (self.chart.point(x) @ self.z) + self.offset

    @override
    def gradient(self, x: npt.ArrayLike) -> FloatArray:
        return self.scale * (self.chart.jacobian(x) @ self.z)

    @override
    def hessian(self, x: npt.ArrayLike) -> FloatArray:
        return self.scale * (self.chart.hessian(x) @ self.z)

    @override
    def __sub__(self, other: ScalarField) -> ScalarField:
        if isinstance(other, InducedField) and other.chart is self.chart and other.scale == self.scale:
            return InducedField(self.chart, self.z - other.z, self.scale, self.offset - other.offset)
        return super().__sub__(other)


class PolynomialField(ScalarField):
    """A polynomial in power-basis coefficients `c[i, j, ...]` for `x_1^i x_2^j ...`."""

    provenance: ClassVar[str] = "polynomial"

    def __init__(self, coefficients: npt.ArrayLike, domain: Box | None = None) -> None:
        """Store coefficients whose number of axes is the number of variables."""
        c = np.asarray(coefficients, dtype=np.float64)
        if c.ndim not in (1, 2, 3):
            raise InvalidParameterError(f"Polynomial coefficients need 1-3 axes, got {c.ndim}")
        super().__init__(domain or Box.unit(c.ndim))
        if self.domain.dim != c.ndim:
            raise DomainMismatchError(f"Coefficients have {c.ndim} axes but the box has dimension {self.domain.dim}")
        self.coefficients: FloatArray = c

    @classmethod
    def constant(cls, value: float, dim: int = 2, domain: Box | None = None) -> PolynomialField:
        """Return the constant field `value`."""
        return cls(np.full((1,) * dim, float(value)), domain)

    @classmethod
    def quadratic(
        cls,
        matrix: npt.ArrayLike,
        linear: npt.ArrayLike | None = None,
        constant: float = 0.0,
        domain: Box | None = None,
    ) -> PolynomialField:
        """Return `xᵀAx + b·x + c`."""
        a = np.asarray(matrix, dtype=np.float64)
        k = a.shape[0]
        b = np.zeros(k) if linear is None else np.asarray(linear, dtype=np.float64)
        c = np.zeros((3,) * k)
        origin = (0,) * k
        c[origin] = constant
        for i in range(k):
            e = list(origin)
            e[i] = 1
            c[tuple(e)] += b[i]
            e[i] = 2
            c[tuple(e)] += a[i, i]
            for j in range(i + 1, k):
                e = list(origin)
                e[i] = e[j] = 1
                c[tuple(e)] += a[i, j] + a[j, i]
        return cls(c, domain)

    def _evaluate(self, c: FloatArray, x: FloatArray) -> FloatArray:
        match self.dim:
            case 1:
                return P.polyval(x[..., 0], c)
            case 2:
                return P.polyval2d(x[..., 0], x[..., 1], c)
            case _:
                return P.polyval3d(x[..., 0], x[..., 1], x[..., 2], c)

    @override
    def value(self, x: npt.ArrayLike) -> FloatArray:
        return self._evaluate(self.coefficients, as_points(x, self.dim))

    @override
    def gradient(self, x: npt.ArrayLike) -> FloatArray:
        x = as_points(x, self.dim)
        return np.stack([self._evaluate(P.polyder(self.coefficients, axis=a), x) for a in range(self.dim)], axis=-1)

    @override
    def hessian(self, x: npt.ArrayLike) -> FloatArray:
        x = as_points(x, self.dim)
        rows = []
        for a in range(self.dim):
            first = P.polyder(self.coefficients, axis=a)
            rows.append(np.stack([self._evaluate(P.polyder(first, axis=b), x) for b in range(self.dim)], axis=-1))
        return np.stack(rows, axis=-2)

    @override
    def __sub__(self, other: ScalarField) -> ScalarField:
        if isinstance(other, PolynomialField) and other.domain == self.domain:
            shape = np.maximum(self.coefficients.shape, other.coefficients.shape)
            c = np.zeros(shape)
            c[tuple(slice(0, n) for n in self.coefficients.shape)] += self.coefficients
            c[tuple(slice(0, n) for n in other.coefficients.shape)] -= other.coefficients
            return PolynomialField(c, self.domain)
        return super().__sub__(other)


class SphereCapField(ScalarField):
    """Upper cap `height + √(R² − |x − center|²)` of a round sphere, the graph of a tangent-type field."""

    provenance: ClassVar[str] = "sphere_cap"

    def __init__(self, center: npt.ArrayLike, radius: float, height: float = 0.0, domain: Box | None = None) -> None:
        """Build the cap; the sphere must cover the whole box."""
        c = np.asarray(center, dtype=np.float64)
        super().__init__(domain or Box.unit(len(c)))
        corners = np.array(list(itertools.product(*zip(self.domain.lo, self.domain.hi))))
        reach = float(np.linalg.norm(corners - c, axis=-1).max())
        if radius <= reach:
            raise InvalidParameterError(f"Cap radius {radius} does not cover the box, need more than {reach:.6g}")
        self.center: FloatArray = c
        self.radius: float = float(radius)
        self.height: float = float(height)

    def _root(self, x: FloatArray) -> tuple[FloatArray, FloatArray]:
        d = as_points(x, self.dim) - self.center
        return d, np.sqrt(self.radius**2 - np.sum(d * d, axis=-1))

    @override
    def value(self, x: npt.ArrayLike) -> FloatArray:
        return self.height + self._root(x)[1]

    @override
    def gradient(self, x: npt.ArrayLike) -> FloatArray:
        d, s = self._root(x)
        return -d / s[..., None]

    @override
    def hessian(self, x: npt.ArrayLike) -> FloatArray:
        d, s = self._root(x)
        eye = np.eye(self.dim)
        return -eye / s[..., None, None] - d[..., :, None] * d[..., None, :] / (s**3)[..., None, None]


class GridSampledField(ScalarField):
    """A field interpolating tensor-grid samples exactly at the nodes by cubic splines."""

    provenance: ClassVar[str] = "grid_sampled"

    def __init__(self, axes: Sequence[npt.ArrayLike], values: npt.ArrayLike) -> None:
        """Fit the spline; one and two variables are supported."""
        grids = [np.asarray(a, dtype=np.float64) for a in axes]
        v = np.asarray(values, dtype=np.float64)
        if len(grids) not in (1, 2) or v.shape != tuple(len(a) for a in grids):
            raise InvalidParameterError(f"Need 1 or 2 axes matching the sample shape, got {v.shape}")
        super().__init__(Box(tuple(float(a[0]) for a in grids), tuple(float(a[-1]) for a in grids)))
        self.axes: list[FloatArray] = grids
        self.samples: FloatArray = v
        if len(grids) == 1:
            self._spline = CubicSpline(grids[0], v)
        else:
            self._spline = RectBivariateSpline(grids[0], grids[1], v, kx=3, ky=3, s=0)

    def _derivative(self, x: npt.ArrayLike, orders: tuple[int, ...]) -> FloatArray:
        x = as_points(x, self.dim)
        if self.dim == 1:
            return self._spline(x[..., 0], orders[0])
        flat = x.reshape(-1, 2)
        out = self._spline.ev(flat[:, 0], flat[:, 1], dx=orders[0], dy=orders[1])
        return out.reshape(x.shape[:-1])

    @override
    def value(self, x: npt.ArrayLike) -> FloatArray:
        return self._derivative(x, (0, 0))

    @override
    def gradient(self, x: npt.ArrayLike) -> FloatArray:
        if self.dim == 1:
            return self._derivative(x, (1,))[..., None]
        return np.stack([self._derivative(x, (1, 0)), self._derivative(x, (0, 1))], axis=-1)

    @override
    def hessian(self, x: npt.ArrayLike) -> FloatArray:
        if self.dim == 1:
            return self._derivative(x, (2,))[..., None, None]
        xx, xy, yy = self._derivative(x, (2, 0)), self._derivative(x, (1, 1)), self._derivative(x, (0, 2))
        return np.stack([np.stack([xx, xy], axis=-1), np.stack([xy, yy], axis=-1)], axis=-2)


class DifferenceField(ScalarField):
    """`f − g` for two fields on the same box."""

    provenance: ClassVar[str] = "difference"

    def __init__(self, f: ScalarField, g: ScalarField) -> None:
        """Bind both operands."""
        _require_same_domain(f, g)
        super().__init__(f.domain)
        self.f: ScalarField = f
        self.g: ScalarField = g

    @override
    def value(self, x: npt.ArrayLike) -> FloatArray:
        return self.f.value(x) - self.g.value(x)

    @override
    def gradient(self, x: npt.ArrayLike) -> FloatArray:
        return self.f.gradient(x) - self.g.gradient(x)

    @override
    def hessian(self, x: npt.ArrayLike) -> FloatArray:
        return self.f.hessian(x) - self.g.hessian(x)


class RayRestriction:
    """The one-variable profile `s ↦ h(origin + s·direction)`."""

    def __init__(self, h: ScalarField, origin: npt.ArrayLike, direction: npt.ArrayLike) -> None:
        """Bind the field and the ray; the direction is normalized."""
        self.h = h
        self.origin: FloatArray = np.asarray(origin, dtype=np.float64)
        d = np.asarray(direction, dtype=np.float64)
        self.direction: FloatArray = d / np.linalg.norm(d)

    def reach(self) -> float:
        """Return where the ray leaves the field's box."""
        lo, hi = self.h.domain.lower, self.h.domain.upper
        with np.errstate(divide="ignore", invalid="ignore"):
            backward = np.where(self.direction < 0, (lo - self.origin) / self.direction, np.inf)
            ends = np.where(self.direction > 0, (hi - self.origin) / self.direction, backward)
        return float(max(ends.min(), 0.0))

    def _points(self, s: npt.ArrayLike) -> FloatArray:
        return self.origin + np.asarray(s, dtype=np.float64)[..., None] * self.direction

    def value(self, s: npt.ArrayLike) -> FloatArray:
        """Return the profile."""
        return self.h.value(self._points(s))

    def derivative(self, s: npt.ArrayLike) -> FloatArray:
        """Return the first derivative of the profile."""
        return self.h.gradient(self._points(s)) @ self.direction

    def second(self, s: npt.ArrayLike) -> FloatArray:
        """Return the second derivative of the profile."""
        return self.h.directional_second(self._points(s), self.direction)


@dataclass(frozen=True, slots=True)
class FieldSamples:
    """Values, gradients and Hessians of a field on a point set."""

    points: FloatArray
    value: FloatArray
    gradient: FloatArray
    hessian: FloatArray

    @classmethod
    def of(cls, h: ScalarField, points: FloatArray) -> FieldSamples:
        """Evaluate `h` and its derivatives at `points`."""
        return cls(points, h.value(points), h.gradient(points), h.hessian(points))

    def curvature_extremes(self) -> tuple[FloatArray, FloatArray]:
        """Return `min_ξ|ξᵀHξ|` and `max_ξ|ξᵀHξ|` over unit ξ at every point."""
        return _curvature_extremes(self.hessian)


def _curvature_extremes(hessian: FloatArray) -> tuple[FloatArray, FloatArray]:
    eig = np.linalg.eigvalsh(hessian)
    lo, hi = eig[..., 0], eig[..., -1]
    smallest = np.where(lo > 0, lo, np.where(hi < 0, -hi, 0.0))
    return smallest, np.maximum(np.abs(lo), np.abs(hi))


def _grad_norm(h: ScalarField) -> Callable[[FloatArray], FloatArray]:
    return lambda x: np.linalg.norm(h.gradient(x), axis=-1)


def _spectral(h: ScalarField) -> Callable[[FloatArray], FloatArray]:
    return lambda x: _curvature_extremes(h.hessian(x))[1]


def c2_terms(h: ScalarField, nodes: int = DEFAULT_NODES) -> tuple[float, float, float]:
    """Return `sup|h|`, `sup|∇h|` and `sup_ξ|∇_ξ∇_ξh|`, each refined around its grid maximizer."""
    value, _, _ = grid_extremum(lambda x: np.abs(h.value(x)), h.domain, nodes, maximize=True)
    slope, _, _ = grid_extremum(_grad_norm(h), h.domain, nodes, maximize=True)
    curvature, _, _ = grid_extremum(_spectral(h), h.domain, nodes, maximize=True)
    return value, slope, curvature


def c2_norm(h: ScalarField, nodes: int = DEFAULT_NODES) -> float:
    """Return `‖h‖_{C²}`."""
    return float(sum(c2_terms(h, nodes)))


def c2_distance(f: ScalarField, g: ScalarField, nodes: int = DEFAULT_NODES) -> float:
    """Return `‖f − g‖_{C²}` over the shared box.

    Raises:
        DomainMismatchError: if the fields live on different boxes.
    """
    _require_same_domain(f, g)
    return c2_norm(f - g, nodes)


def tangency_parameter(f: ScalarField, g: ScalarField, U: Box | None = None, nodes: int = DEFAULT_NODES) -> Estimate:
    """Return `inf_U (|h| + |∇h|)` for `h = f − g`, with uncertainty `(grid step)·sup‖∇²h‖`.

    The grid minimizer is polished by bounded Powell descent.

    Raises:
        DomainMismatchError: if the fields differ in domain or `U` leaves it.
    """
    _require_same_domain(f, g)
    h = f - g
    box = U or h.domain
    if not (np.all(box.lower >= h.domain.lower - 1e-12) and np.all(box.upper <= h.domain.upper + 1e-12)):
        raise DomainMismatchError(f"Subdomain {box} is not contained in {h.domain}")

    def objective(x: FloatArray) -> FloatArray:
        return np.abs(h.value(x)) + np.linalg.norm(h.gradient(x), axis=-1)

    value, argument, step = grid_extremum(objective, box, nodes, maximize=False)
    result = minimize(
        lambda x: float(objective(x[None])[0]),
        argument,
        method="Powell",
        bounds=list(zip(box.lo, box.hi)),
    )
    if result.fun < value:
        value, argument = float(result.fun), np.clip(result.x, box.lower, box.upper)
    curvature, _, _ = grid_extremum(_spectral(h), box, nodes, maximize=True, refine=False)
    return Estimate(max(value, 0.0), tuple(argument.tolist()), float(np.linalg.norm(step)) * curvature)


def cinematic_infimum(f: ScalarField, g: ScalarField, nodes: int = DEFAULT_NODES) -> Estimate:
    """Return `inf_x (|h| + |∇h| + min_ξ|∇_ξ∇_ξh|)`, the left side of the cinematic inequality."""
    _require_same_domain(f, g)
    h = f - g

    def objective(x: FloatArray) -> FloatArray:
        smallest, _ = _curvature_extremes(h.hessian(x))
        return np.abs(h.value(x)) + np.linalg.norm(h.gradient(x), axis=-1) + smallest

    value, argument, step = grid_extremum(objective, h.domain, nodes, maximize=False)
    curvature, _, _ = grid_extremum(_spectral(h), h.domain, nodes, maximize=True, refine=False)
    return Estimate(max(value, 0.0), tuple(argument.tolist()), float(np.linalg.norm(step)) * curvature)


@dataclass(frozen=True, slots=True)
class DerivativeCheck:
    """Relative discrepancy between a field's derivatives and central differences."""

    gradient_error: float
    hessian_error: float


def check_field_derivatives(h: ScalarField, points: npt.ArrayLike | None = None, step: float = 1e-4) -> DerivativeCheck:
    """Compare `gradient` and `hessian` against central differences at `step`."""
    x = h.domain.lattice(9)[0] if points is None else as_points(points, h.dim).reshape(-1, h.dim)
    x = h.domain.clip(x)
    grad, hess = h.gradient(x), h.hessian(x)
    fd_grad, fd_hess = np.zeros_like(grad), np.zeros_like(hess)
    for a in range(h.dim):
        e = np.zeros(h.dim)
        e[a] = step
        fd_grad[:, a] = (h.value(x + e) - h.value(x - e)) / (2 * step)
        fd_hess[:, a] = (h.gradient(x + e) - h.gradient(x - e)) / (2 * step)

    def relative(exact: FloatArray, approx: FloatArray) -> float:
        return float(np.abs(exact - approx).max() / max(1.0, float(np.abs(exact).max())))

    return DerivativeCheck(relative(grad, fd_grad), relative(hess, fd_hess))


class FunctionFamily:
    """Fields on one shared box, optionally induced from a chart and an index set Z."""

    def __init__(
        self,
        members: Sequence[ScalarField],
        *,
        chart: ManifoldChart | None = None,
        points: npt.ArrayLike | None = None,
        scale: float = 1.0,
        offset: float = 0.0,
    ) -> None:
        """Validate that every member shares the first member's box."""
        if not members:
            raise InvalidFamilyError("A family needs at least one member")
        domain = members[0].domain
        for i, member in enumerate(members):
            if member.domain != domain:
                raise DomainMismatchError(f"Member {i} lives on {member.domain}, expected {domain}")
        self.members: list[ScalarField] = list(members)
        self.domain: Box = domain
        self.chart = chart
        self.points: FloatArray | None = None if points is None else np.asarray(points, dtype=np.float64)
        self.scale = scale
        self.offset = offset

    def __len__(self) -> int:
        """Return the number of members."""
        return len(self.members)

    def __iter__(self) -> Iterator[ScalarField]:
        """Iterate over the members."""
        return iter(self.members)

    def __getitem__(self, index: int) -> ScalarField:
        """Return the member at `index`."""
        return self.members[index]

    @property
    def induced(self) -> bool:
        """Return whether the members are `f_z` for the stored chart and points."""
        return self.chart is not None and self.points is not None

    def values(self, x: npt.ArrayLike) -> FloatArray:
        """Return every member evaluated at `x`, shape `(N, len(self))`."""
        x = as_points(x, self.domain.dim).reshape(-1, self.domain.dim)
        if self.induced:
            assert self.chart is not None and self.points is not None
            return self.scale * (self.chart.point(x) @ self.points.T) + self.offset
        return np.stack([m.value(x) for m in self.members], axis=-1)

    def subset(self, indices: Sequence[int]) -> FunctionFamily:
        """Return the subfamily at `indices`, keeping the index set aligned."""
        points = None if self.points is None else self.points[list(indices)]
        return FunctionFamily(
            [self.members[i] for i in indices], chart=self.chart, points=points, scale=self.scale, offset=self.offset
        )


def induced_projection_family(
    chart: ManifoldChart, Z: npt.ArrayLike, *, renormalize: bool = True, nodes: int = DEFAULT_NODES
) -> FunctionFamily:
    """Return the family `f_z = ⟨Σ, z⟩`, mapped into `[0, 1]` by `(f_z + L)/(2L)`.

    `L` is the largest member sup-norm, taken family-wide; it falls back to 1 when every member vanishes.

    Raises:
        InvalidParameterError: if a point lies outside the closed unit ball or has the wrong dimension.
    """
    points = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    if points.shape[1] != chart.ambient_dim:
        raise InvalidParameterError(f"Points must lie in R^{chart.ambient_dim}, got shape {points.shape}")
    norms = np.linalg.norm(points, axis=1)
    if (norms > 1 + 1e-12).any():
        i = int(np.argmax(norms))
        raise InvalidParameterError(f"Point {i} has norm {norms[i]:.6g} > 1")

    scale, offset = 1.0, 0.0
    if renormalize:
        lattice, _ = chart.domain.lattice(nodes if chart.param_dim < 3 else min(nodes, 33))
        sup = float(evaluate_batched(lambda x: np.abs(chart.point(x) @ points.T).max(axis=1), lattice).max())
        big = sup if sup > 0 else 1.0
        scale, offset = 1 / (2 * big), 0.5
        logger.debug("Renormalizing %d induced fields with L=%.6g", len(points), big)
    members = [InducedField(chart, z, scale, offset) for z in points]
    return FunctionFamily(members, chart=chart, points=points, scale=scale, offset=offset)


def pairwise_c2_distances(
    family: FunctionFamily, indices: Sequence[int] | None = None, *, nodes: int = DEFAULT_NODES, threads: int = 1
) -> FloatArray:
    """Return the symmetric C² distance matrix of the members at `indices`."""
    idx = list(range(len(family))) if indices is None else list(indices)
    pairs = list(itertools.combinations(range(len(idx)), 2))
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        distances = list(pool.map(lambda p: c2_distance(family[idx[p[0]]], family[idx[p[1]]], nodes), pairs))
    matrix = np.zeros((len(idx), len(idx)))
    for (a, b), d in zip(pairs, distances):
        matrix[a, b] = matrix[b, a] = d
    return matrix


def _greedy_cover(distances: FloatArray, members: FloatArray, radius: float) -> int:
    """Count radius-balls centered at members, picked greedily, needed to cover `members`."""
    uncovered = set(np.flatnonzero(members).tolist())
    count = 0
    while uncovered:
        center = min(uncovered)
        uncovered -= set(np.flatnonzero(distances[center] <= radius).tolist())
        count += 1
    return count


def doubling_estimate(distances: FloatArray) -> float:
    """Return the largest number of r-balls needed to cover a 2r-ball, at two radii."""
    diameter = float(distances.max()) if distances.size else 0.0
    if diameter <= 0:
        return 1.0
    worst = 1
    for radius in (diameter / 4, diameter / 8):
        for center in range(len(distances)):
            ball = distances[center] <= 2 * radius
            worst = max(worst, _greedy_cover(distances, ball, radius))
    return float(worst)


def _hessian_oscillation(h: ScalarField, step: float, nodes: int) -> float:
    """Return the largest `‖∇²h(x) − ∇²h(y)‖₂` over lattice `x` and `y` at distance at most `step`.

    `y` runs over `x ± step·u` and `x ± step·u/2` for the axes and the main diagonal `u`, clipped to the box.
    """
    points, _ = h.domain.lattice(nodes)
    directions = np.vstack([np.eye(h.dim), np.ones(h.dim) / np.sqrt(h.dim)])
    base = h.hessian(points)
    worst = 0.0
    for u in directions:
        for offset in (step, -step, step / 2, -step / 2):
            moved = h.hessian(h.domain.clip(points + offset * u))
            worst = max(worst, float(np.linalg.norm(base - moved, ord=2, axis=(-2, -1)).max()))
    return worst


def _verified_alpha(differences: Sequence[ScalarField], K: float, nodes: int) -> dict[float, float]:
    """Return, per η, the largest `η/(K·2^k)` at which every difference oscillates by at most η.

    An η whose search runs out of halvings maps to 0.
    """
    cache: dict[float, float] = {}

    def oscillation(step: float) -> float:
        if step not in cache:
            cache[step] = max((_hessian_oscillation(h, step, nodes) for h in differences), default=0.0)
        return cache[step]

    alpha: dict[float, float] = {}
    for eta in ETA_GRID:
        candidates = (eta / K / 2**k for k in range(MAX_HALVINGS + 1))
        alpha[eta] = next((step for step in candidates if oscillation(step) <= eta), 0.0)
        if alpha[eta] == 0.0:
            logger.warning("No step up to η/K verifies the Hessian oscillation bound at η=%g", eta)
    return alpha


@dataclass(frozen=True, slots=True)
class PairRecord:
    """Cinematic quantities of one sampled pair."""

    i: int
    j: int
    distance: float
    infimum: float
    ratio: float


@dataclass(frozen=True, slots=True)
class CinematicReport:
    """Estimated cinematic constant, doubling constant and modulus of continuity of a family."""

    K: float
    D: float
    alpha: dict[float, float]
    diameter: float
    pairs: list[PairRecord]
    clauses: dict[str, bool]
    witness: tuple[int, int] | None
    passed: bool

    def alpha_at(self, eta: float) -> float:
        """Return the modulus of continuity at η, interpolating the sampled values."""
        etas = sorted(self.alpha)
        return float(np.interp(eta, [0.0, *etas], [0.0, *(self.alpha[e] for e in etas)]))


def estimate_cinematic_constant(
    family: FunctionFamily,
    pair_budget: int = 400,
    *,
    nodes: int = DEFAULT_NODES,
    seed: int = 0,
    threads: int = 1,
    doubling_sample: int = 64,
) -> CinematicReport:
    """Estimate K, D and α for a family from sampled pairs.

    `K` is the largest of 1, the sampled diameter and the worst ratio `‖f−g‖_{C²} / cinematic_infimum(f, g)`.
    `D` comes from greedy covers of C²-balls at two radii over at most `doubling_sample` members.
    `α(η)` is the largest `η/(K·2^k)` at which no sampled difference moves its Hessian by more than η
    between lattice points that close; the continuity clause fails when some η admits no such step.
    A pair whose infimum vanishes fails the report and is returned as the witness.
    """
    m = len(family)
    rng = np.random.default_rng(seed)
    all_pairs = list(itertools.combinations(range(m), 2))
    if len(all_pairs) > pair_budget:
        chosen = rng.choice(len(all_pairs), pair_budget, replace=False)
        all_pairs = [all_pairs[i] for i in np.sort(chosen)]

    def measure(pair: tuple[int, int]) -> PairRecord:
        i, j = pair
        distance = c2_distance(family[i], family[j], nodes)
        infimum = cinematic_infimum(family[i], family[j], nodes).value
        ratio = distance / infimum if infimum > ZERO_TOLERANCE * max(distance, 1.0) else float("inf")
        return PairRecord(i, j, distance, infimum, ratio)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        records = list(pool.map(measure, all_pairs))

    diameter = max((r.distance for r in records), default=0.0)
    failing = [r for r in records if not np.isfinite(r.ratio)]
    ratios = [r.ratio for r in records if np.isfinite(r.ratio)]
    K = max(1.0, diameter, *ratios)

    sample = range(m) if m <= doubling_sample else np.sort(rng.choice(m, doubling_sample, replace=False)).tolist()
    D = doubling_estimate(pairwise_c2_distances(family, list(sample), nodes=nodes, threads=threads))

    differences = [family[r.i] - family[r.j] for r in records]
    alpha = _verified_alpha(differences, K, min(nodes, 33 if family.domain.dim == 1 else 17))

    witness = (failing[0].i, failing[0].j) if failing else None
    if witness:
        logger.info("Cinematic infimum vanishes for pair %s", witness)
    clauses = {
        "diameter": diameter <= K,
        "doubling": bool(np.isfinite(D)),
        "cinematic": not failing,
        "continuity": all(a > 0 for a in alpha.values()),
    }
    return CinematicReport(K, D, alpha, diameter, records, clauses, witness, all(clauses.values()))


SubcubeCase = Literal["value-separated", "transversal", "tangent"]


@dataclass(frozen=True, slots=True)
class SubcubeLabel:
    """Dichotomy case holding on the doubled subcube `2U`."""

    box: Box
    case: SubcubeCase
    convexity: int = 0
    critical_point: tuple[float, ...] | None = None


@dataclass(frozen=True, slots=True)
class TangencyClassification:
    """Local classification of a pair over a dyadic decomposition of the domain."""

    tangency: Estimate
    distance: float
    threshold: float
    label: str
    subcubes: list[SubcubeLabel] = field(default_factory=list)


def find_critical_point(h: ScalarField, box: Box, *, tolerance: float | None = None) -> FloatArray | None:
    """Return the point of `box` where `∇h` vanishes, found by descent on `|∇h|²`, or None."""

    def energy(x: FloatArray) -> float:
        g = h.gradient(x[None])[0]
        return float(g @ g)

    def energy_grad(x: FloatArray) -> FloatArray:
        return 2 * h.hessian(x[None])[0] @ h.gradient(x[None])[0]

    _, start, _ = grid_extremum(_grad_norm(h), box, 9, maximize=False, refine=False)
    result = minimize(
        energy,
        start,
        jac=energy_grad,
        method="L-BFGS-B",
        bounds=list(zip(box.lo, box.hi)),
        options={"ftol": 1e-30, "gtol": 1e-14},
    )
    if tolerance is None:
        _, curvature = _curvature_extremes(h.hessian(result.x[None]))
        tolerance = 1e-8 * max(float(curvature[0]), 1.0) * box.diameter
    return result.x if np.sqrt(result.fun) <= tolerance else None


def classify_pair(
    f: ScalarField,
    g: ScalarField,
    delta: float,
    K: float,
    *,
    alpha: float | None = None,
    max_depth: int = 4,
    nodes: int = 17,
) -> TangencyClassification:
    """Label every dyadic subcube by the case of the local dichotomy that holds on its double.

    Subcubes have diameter below `alpha/2` when `alpha` is given, otherwise they sit at `max_depth`.
    The cases are tested at threshold `‖h‖_{C²}/(3K)` in priority order value-separated,
    transversal, tangent; tangent subcubes record the convexity sign and any critical point.

    Raises:
        InvalidParameterError: if `‖f − g‖_{C²} < δ`.
        CinematicViolationError: if no case holds on some subcube.
    """
    _require_same_domain(f, g)
    h = f - g
    norm = c2_norm(h)
    if norm < delta:
        raise InvalidParameterError(f"Pair is closer than δ={delta} in C² (distance {norm:.6g})")
    threshold = norm / (3 * K)

    depth = max_depth
    if alpha is not None:
        needed = max(0, int(np.floor(np.log2(2 * h.domain.diameter / alpha))) + 1) if alpha > 0 else None
        if needed is None or needed > max_depth:
            logger.warning(
                "Depth capped at %d: subcubes of diameter %.3g stay above α/2=%.3g",
                max_depth,
                h.domain.diameter / 2**max_depth,
                alpha / 2,
            )
        else:
            depth = needed
    labels = []
    for cube in h.domain.subcubes(depth):
        doubled = cube.scaled(2.0, within=h.domain)
        samples = FieldSamples.of(h, doubled.lattice(nodes)[0])
        smallest, _ = samples.curvature_extremes()
        if np.abs(samples.value).min() >= threshold:
            labels.append(SubcubeLabel(cube, "value-separated"))
        elif np.linalg.norm(samples.gradient, axis=-1).min() >= threshold:
            labels.append(SubcubeLabel(cube, "transversal"))
        elif smallest.min() >= threshold:
            sign = 1 if np.linalg.eigvalsh(samples.hessian[0])[0] > 0 else -1
            critical = find_critical_point(h, doubled)
            point = None if critical is None or doubled.boundary_distance(critical) <= 0 else tuple(critical.tolist())
            labels.append(SubcubeLabel(cube, "tangent", sign, point))
        else:
            raise CinematicViolationError(
                f"No case of the dichotomy holds on {cube} at threshold {threshold:.6g}", cube
            )

    cases = {label.case for label in labels}
    overall = cases.pop() if len(cases) == 1 else "mixed"
    return TangencyClassification(tangency_parameter(f, g), norm, threshold, overall, labels)


class InducedFamilySpec(msgspec.Struct, frozen=True, tag="induced", tag_field="kind"):
    """An induced family: a chart and the index points."""

    chart: ChartSpec
    points: list[list[float]]
    renormalize: bool = True


class PolynomialMemberSpec(msgspec.Struct, frozen=True):
    """Coefficient array of one polynomial member, flattened in C order."""

    shape: list[int]
    coefficients: list[float]


class PolynomialFamilySpec(msgspec.Struct, frozen=True, tag="polynomial", tag_field="kind"):
    """A family of polynomial fields on the box `[lo, hi]`."""

    lo: list[float]
    hi: list[float]
    members: list[PolynomialMemberSpec]


FamilySpec = InducedFamilySpec | PolynomialFamilySpec


def family_from_spec(spec: FamilySpec) -> FunctionFamily:
    """Build the family described by `spec`."""
    if isinstance(spec, InducedFamilySpec):
        return induced_projection_family(chart_from_spec(spec.chart), spec.points, renormalize=spec.renormalize)
    box = Box(tuple(spec.lo), tuple(spec.hi))
    members = []
    for member in spec.members:
        if int(np.prod(member.shape)) != len(member.coefficients):
            raise InvalidFamilyError(f"Coefficient count {len(member.coefficients)} does not fit shape {member.shape}")
        members.append(PolynomialField(np.reshape(member.coefficients, member.shape), box))
    return FunctionFamily(members)


def family_to_spec(family: FunctionFamily) -> FamilySpec:
    """Describe a family for serialization.

    Raises:
        InvalidFamilyError: if a member has no serializable form.
    """
    if family.induced:
        assert family.chart is not None and family.points is not None
        if family.chart.spec is None:
            raise InvalidFamilyError(f"Chart {family.chart!r} has no serializable spec")
        return InducedFamilySpec(family.chart.spec, family.points.tolist(), renormalize=family.offset != 0.0)
    members = []
    for i, member in enumerate(family):
        if not isinstance(member, PolynomialField):
            raise InvalidFamilyError(f"Member {i} of kind {member.provenance} has no serializable form")
        members.append(PolynomialMemberSpec(list(member.coefficients.shape), member.coefficients.ravel().tolist()))
    return PolynomialFamilySpec(list(family.domain.lo), list(family.domain.hi), members)


def load_family(source: str | bytes | Path) -> FunctionFamily:
    """Read a family from a JSON file or JSON text."""
    data = source.read_bytes() if isinstance(source, Path) else source
    try:
        spec = msgspec.json.decode(data, type=FamilySpec)
    except msgspec.DecodeError as e:
        raise InvalidFamilyError(f"Invalid family spec: {e}") from e
    return family_from_spec(spec)
