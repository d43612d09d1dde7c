"""Direction manifolds: parametrized charts, tangent frames and curvature.

A chart is a C² map `Σ: [0,1]^k -> R^d`. Builtin charts evaluate their derivatives in closed form;
subclasses of `ManifoldChart` that only implement `point` fall back to central differences. All
evaluators are vectorized over leading axes: `point` maps `(..., k)` to `(..., d)`, `jacobian` to
`(..., k, d)` and `hessian` to `(..., k, k, d)`.
"""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import TYPE_CHECKING, ClassVar, Literal

import msgspec
import numpy as np
from typing_extensions import override

from pycinematic.errors import (
    DegenerateChartError,
    InvalidParameterError,
    NonTransverseError,
    UnsupportedChartError,
)
from pycinematic.grids import SUPPORTED_PARAM_DIMS, Box, FloatArray, as_points, sphere_net

if TYPE_CHECKING:
    import numpy.typing as npt

logger = logging.getLogger(__name__)

FD_STEP: float = 1e-4
"""Central-difference step for derivative fallbacks and the finite-difference second fundamental form."""

RANK_TOLERANCE: float = 1e-10
"""Relative singular-value threshold below which a Jacobian counts as rank deficient."""

TRANSVERSE_TOLERANCE: float = 1e-10
"""Threshold on the radial component orthogonal to the tangent space."""

SPHERE_TOLERANCE: float = 1e-8
"""Allowed deviation of `|Σ(x)|` from 1 for charts treated as lying on the unit sphere."""

ZERO_CURVATURE: float = 1e-9
"""Principal curvatures at or below this magnitude count as vanishing."""

KAPPA_CEILING: float = 1e8
"""Largest `max(|κ|, 1/|κ|)` the non-degeneracy gate accepts; beyond it the chart is numerically singular."""

ORIENTATION_NODES: int = 9
"""Lattice nodes per axis searched for a regular reference sample when orienting normals."""


class SphereSliceSpec(msgspec.Struct, frozen=True, tag="sphere_slice", tag_field="kind"):
    """Slice `S^n ∩ {x_(n+1) = c}` of the unit sphere."""

    c: float
    n: int = 3


class UnitSphereSpec(msgspec.Struct, frozen=True, tag="unit_sphere", tag_field="kind"):
    """A patch of the full unit sphere `S^n`."""

    n: int = 3


class RoundSphereSpec(msgspec.Struct, frozen=True, tag="round_sphere", tag_field="kind"):
    """A patch of the sphere of `radius` centered at the origin of `R^dim`."""

    radius: float = 1.0
    dim: int = 3


class QuadraticGraphSpec(msgspec.Struct, frozen=True, tag="quadratic_graph", tag_field="kind"):
    """The graph `(1, y, (Ly)ᵀA(Ly))` inside the hyperplane `x_1 = 1`."""

    A: list[list[float]]
    L: list[list[float]] | None = None
    n: int = 3


class FlatGraphSpec(msgspec.Struct, frozen=True, tag="flat_graph", tag_field="kind"):
    """The flat patch `(y, 0, 1)`."""

    n: int = 3


ChartSpec = SphereSliceSpec | UnitSphereSpec | RoundSphereSpec | QuadraticGraphSpec | FlatGraphSpec


class ManifoldChart(ABC):
    """A C² parametrization of a direction manifold over a parameter box."""

    kind: ClassVar[str] = "custom"

    def __init__(self, param_dim: int, ambient_dim: int, domain: Box | None = None) -> None:
        """Validate the dimensions and record the parameter box."""
        if param_dim not in SUPPORTED_PARAM_DIMS:
            raise InvalidParameterError(f"Charts need 1-3 parameters, got {param_dim}")
        if ambient_dim not in (param_dim + 1, param_dim + 2):
            raise UnsupportedChartError(
                f"Only codimension 0 or 1 in the sphere is supported, got k={param_dim} in R^{ambient_dim}"
            )
        self.param_dim: int = param_dim
        self.ambient_dim: int = ambient_dim
        self.domain: Box = domain or Box.unit(param_dim)

    @property
    def spec(self) -> ChartSpec | None:
        """Return the serializable description of a builtin chart."""
        return None

    @property
    def codim_zero(self) -> bool:
        """Return whether the chart is full dimensional once the radial direction is removed."""
        return self.ambient_dim == self.param_dim + 1

    @abstractmethod
    def point(self, x: npt.ArrayLike) -> FloatArray:
        """Return `Σ(x)`."""

    def jacobian(self, x: npt.ArrayLike) -> FloatArray:
        """Return the first derivatives `∂_aΣ(x)`, by central differences unless overridden."""
        x = as_points(x, self.param_dim)
        rows = []
        for a in range(self.param_dim):
            e = np.zeros(self.param_dim)
            e[a] = FD_STEP
            rows.append((self.point(x + e) - self.point(x - e)) / (2 * FD_STEP))
        return np.stack(rows, axis=-2)

    def hessian(self, x: npt.ArrayLike) -> FloatArray:
        """Return the second derivatives `∂_a∂_bΣ(x)`, by central differences unless overridden."""
        x = as_points(x, self.param_dim)
        slices = []
        for b in range(self.param_dim):
            e = np.zeros(self.param_dim)
            e[b] = FD_STEP
            slices.append((self.jacobian(x + e) - self.jacobian(x - e)) / (2 * FD_STEP))
        h = np.stack(slices, axis=-3)
        return (h + np.swapaxes(h, -3, -2)) / 2

    @override
    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.spec!r})"


def _central_cap(y: FloatArray, radius: float) -> tuple[FloatArray, FloatArray, FloatArray]:
    """Return `u = radius·(y, 1)/|(y, 1)|` with its first and second derivatives in `y`."""
    k = y.shape[-1]
    w = np.concatenate([y, np.ones(y.shape[:-1] + (1,))], axis=-1)
    rho = np.sqrt(1.0 + np.sum(y * y, axis=-1))
    r1 = (1 / rho)[..., None, None]
    r3 = (rho**-3)[..., None, None]
    eye = np.eye(k, k + 1)

    value = radius * w / rho[..., None]
    jac = radius * (eye * r1 - y[..., :, None] * w[..., None, :] * r3)

    r3 = r3[..., None]
    r5 = (rho**-5)[..., None, None, None]
    ey = eye[:, None, :] * y[..., None, :, None]
    hess = radius * (
        -(ey + np.swapaxes(ey, -3, -2)) * r3
        - np.eye(k)[:, :, None] * w[..., None, None, :] * r3
        + 3 * y[..., :, None, None] * y[..., None, :, None] * w[..., None, None, :] * r5
    )
    return value, jac, hess


class SphereSliceChart(ManifoldChart):
    """The slice `S^n ∩ {x_(n+1) = c}`, a sphere of radius `√(1−c²)` centrally projected from a cube."""

    kind: ClassVar[str] = "sphere_slice"

    def __init__(self, c: float, n: int = 3) -> None:
        """Build the chart; `c` must lie in `(-1, 0) ∪ (0, 1)`."""
        if not (-1.0 < c < 1.0) or c == 0.0:
            raise InvalidParameterError(
                f"sphere_slice needs c in (-1, 0) or (0, 1), got {c}: the slice must be a small sphere"
            )
        super().__init__(n - 1, n + 1)
        self.c: float = float(c)
        self.n: int = n
        self.radius: float = float(np.sqrt(1.0 - c * c))

    @property
    @override
    def spec(self) -> SphereSliceSpec:
        return SphereSliceSpec(c=self.c, n=self.n)

    @override
    def point(self, x: npt.ArrayLike) -> FloatArray:
        y = as_points(x, self.param_dim) - 0.5
        value, _, _ = _central_cap(y, self.radius)
        return np.concatenate([value, np.full(value.shape[:-1] + (1,), self.c)], axis=-1)

    @override
    def jacobian(self, x: npt.ArrayLike) -> FloatArray:
        y = as_points(x, self.param_dim) - 0.5
        _, jac, _ = _central_cap(y, self.radius)
        return np.concatenate([jac, np.zeros(jac.shape[:-1] + (1,))], axis=-1)

    @override
    def hessian(self, x: npt.ArrayLike) -> FloatArray:
        y = as_points(x, self.param_dim) - 0.5
        _, _, hess = _central_cap(y, self.radius)
        return np.concatenate([hess, np.zeros(hess.shape[:-1] + (1,))], axis=-1)


class RoundSphereChart(ManifoldChart):
    """A patch of the sphere of given radius in `R^dim`, centrally projected from a cube."""

    kind: ClassVar[str] = "round_sphere"

    def __init__(self, radius: float = 1.0, dim: int = 3) -> None:
        """Build the chart; the radius must be positive."""
        if radius <= 0:
            raise InvalidParameterError(f"round_sphere needs a positive radius, got {radius}")
        super().__init__(dim - 1, dim)
        self.radius: float = float(radius)

    @property
    @override
    def spec(self) -> ChartSpec:
        return RoundSphereSpec(radius=self.radius, dim=self.ambient_dim)

    @override
    def point(self, x: npt.ArrayLike) -> FloatArray:
        return _central_cap(as_points(x, self.param_dim) - 0.5, self.radius)[0]

    @override
    def jacobian(self, x: npt.ArrayLike) -> FloatArray:
        return _central_cap(as_points(x, self.param_dim) - 0.5, self.radius)[1]

    @override
    def hessian(self, x: npt.ArrayLike) -> FloatArray:
        return _central_cap(as_points(x, self.param_dim) - 0.5, self.radius)[2]


class UnitSphereChart(RoundSphereChart):
    """A patch of the unit sphere `S^n`; the whole direction space, so no curvature is needed."""

    kind: ClassVar[str] = "unit_sphere"

    def __init__(self, n: int = 3) -> None:
        """Build the chart of `S^n ⊂ R^(n+1)`."""
        super().__init__(1.0, n + 1)

    @property
    @override
    def spec(self) -> UnitSphereSpec:
        return UnitSphereSpec(n=self.ambient_dim - 1)


class QuadraticGraphChart(ManifoldChart):
    """The graph of `f(y) = (Ly)ᵀA(Ly)` placed in the hyperplane `x_1 = 1`."""

    kind: ClassVar[str] = "quadratic_graph"

    def __init__(self, A: npt.ArrayLike, L: npt.ArrayLike | None = None, n: int = 3) -> None:
        """Build the chart; `A` must be positive definite and `L` invertible."""
        k = n - 1
        a = np.asarray(A, dtype=np.float64)
        lin = np.eye(k) if L is None else np.asarray(L, dtype=np.float64)
        if a.shape != (k, k) or lin.shape != (k, k):
            raise InvalidParameterError(
                f"quadratic_graph with n={n} needs {k}x{k} matrices, got {a.shape}, {lin.shape}"
            )
        if not np.allclose(a, a.T):
            logger.warning("Symmetrizing non-symmetric matrix A=%s", a.tolist())
        a = (a + a.T) / 2
        try:
            np.linalg.cholesky(a)
        except np.linalg.LinAlgError as e:
            raise InvalidParameterError(f"quadratic_graph needs a positive definite A, got {a.tolist()}") from e
        if abs(np.linalg.det(lin)) <= 1e-12 * max(1.0, float(np.abs(lin).max())) ** k:
            raise InvalidParameterError(f"quadratic_graph needs an invertible L, got {lin.tolist()}")
        super().__init__(k, n + 1)
        self.A: FloatArray = a
        self.L: FloatArray = lin
        self.n: int = n
        self.form: FloatArray = lin.T @ a @ lin

    @property
    @override
    def spec(self) -> QuadraticGraphSpec:
        return QuadraticGraphSpec(A=self.A.tolist(), L=self.L.tolist(), n=self.n)

    @override
    def point(self, x: npt.ArrayLike) -> FloatArray:
        y = as_points(x, self.param_dim) - 0.5
        f = np.einsum("...a,ab,...b->...", y, self.form, y)
        return np.concatenate([np.ones(y.shape[:-1] + (1,)), y, f[..., None]], axis=-1)

    @override
    def jacobian(self, x: npt.ArrayLike) -> FloatArray:
        y = as_points(x, self.param_dim) - 0.5
        k = self.param_dim
        grad = 2 * y @ self.form
        jac = np.zeros(y.shape[:-1] + (k, k + 2))
        jac[..., :, 1 : k + 1] = np.eye(k)
        jac[..., :, k + 1] = grad
        return jac

    @override
    def hessian(self, x: npt.ArrayLike) -> FloatArray:
        y = as_points(x, self.param_dim) - 0.5
        k = self.param_dim
        hess = np.zeros(y.shape[:-1] + (k, k, k + 2))
        hess[..., k + 1] = 2 * self.form
        return hess


class FlatGraphChart(ManifoldChart):
    """The flat patch `Σ(y) = (y, 0, 1)`; every principal curvature vanishes."""

    kind: ClassVar[str] = "flat_graph"

    def __init__(self, n: int = 3) -> None:
        """Build the chart in `R^(n+1)`."""
        super().__init__(n - 1, n + 1)
        self.n: int = n

    @property
    @override
    def spec(self) -> FlatGraphSpec:
        return FlatGraphSpec(n=self.n)

    @override
    def point(self, x: npt.ArrayLike) -> FloatArray:
        y = as_points(x, self.param_dim) - 0.5
        tail = np.broadcast_to(np.array([0.0, 1.0]), y.shape[:-1] + (2,))
        return np.concatenate([y, tail], axis=-1)

    @override
    def jacobian(self, x: npt.ArrayLike) -> FloatArray:
        y = as_points(x, self.param_dim)
        k = self.param_dim
        return np.broadcast_to(np.eye(k, k + 2), y.shape[:-1] + (k, k + 2)).copy()

    @override
    def hessian(self, x: npt.ArrayLike) -> FloatArray:
        y = as_points(x, self.param_dim)
        k = self.param_dim
        return np.zeros(y.shape[:-1] + (k, k, k + 2))


def make_builtin_chart(spec: ChartSpec) -> ManifoldChart:
    """Return the closed-form chart described by `spec`.

    Raises:
        InvalidParameterError: if the parameters violate the curvature or definiteness conditions,
            or the dimension is outside the supported range.
    """
    match spec:
        case SphereSliceSpec(c=c, n=n):
            _check_n(n, {2, 3, 4}, "sphere_slice")
            return SphereSliceChart(c, n)
        case UnitSphereSpec(n=n):
            _check_n(n, {1, 2, 3}, "unit_sphere")
            return UnitSphereChart(n)
        case RoundSphereSpec(radius=radius, dim=dim):
            _check_n(dim, {2, 3, 4}, "round_sphere")
            return RoundSphereChart(radius, dim)
        case QuadraticGraphSpec(A=a, L=lin, n=n):
            _check_n(n, {2, 3, 4}, "quadratic_graph")
            return QuadraticGraphChart(a, lin, n)
        case FlatGraphSpec(n=n):
            _check_n(n, {2, 3, 4}, "flat_graph")
            return FlatGraphChart(n)
    raise InvalidParameterError(f"Unknown chart spec {spec!r}")


def _check_n(n: int, allowed: set[int], kind: str) -> None:
    if n not in allowed:
        raise InvalidParameterError(f"{kind} supports n in {sorted(allowed)}, got {n}")


def parse_chart(text: str | bytes) -> ManifoldChart:
    """Decode a JSON chart spec and build the chart."""
    try:
        spec = msgspec.json.decode(text, type=ChartSpec)
    except msgspec.DecodeError as e:
        raise InvalidParameterError(f"Invalid chart spec: {e}") from e
    return make_builtin_chart(spec)


@dataclass(frozen=True, slots=True)
class _Frames:
    """Batched frame data; rows flagged invalid hold NaN."""

    points: FloatArray
    jacobian: FloatArray
    tangent: FloatArray
    r_factor: FloatArray
    radial: FloatArray
    normal: FloatArray
    valid: npt.NDArray[np.bool_]
    failure: str | None


def _raw_frames(chart: ManifoldChart, x: FloatArray) -> _Frames:
    p = chart.point(x)
    jac = chart.jacobian(x)
    n, k, d = jac.shape
    sv = np.linalg.svd(jac, compute_uv=False)
    rank_ok = sv[:, -1] > RANK_TOLERANCE * np.maximum(sv[:, 0], 1.0)

    q, r = np.linalg.qr(np.swapaxes(jac, -1, -2))
    signs = np.sign(np.diagonal(r, axis1=-2, axis2=-1))
    signs[signs == 0] = 1.0
    q = q * signs[:, None, :]
    r = r * signs[:, :, None]
    tangent = np.swapaxes(q, -1, -2)

    norms = np.linalg.norm(p, axis=-1)
    radial = p / np.where(norms > 0, norms, 1.0)[:, None]
    perp = radial - np.einsum("nkd,nk->nd", tangent, np.einsum("nkd,nd->nk", tangent, radial))
    perp_norm = np.linalg.norm(perp, axis=-1)
    transverse = (perp_norm > TRANSVERSE_TOLERANCE) & (norms > 0)

    if chart.codim_zero:
        normal = radial.copy()
    else:
        basis = np.concatenate([q, (perp / np.where(perp_norm > 0, perp_norm, 1.0)[:, None])[:, :, None]], axis=-1)
        u, _, _ = np.linalg.svd(basis, full_matrices=True)
        normal = u[:, :, -1]

    valid = rank_ok & transverse
    failure = None
    if not rank_ok.all():
        failure = f"rank-deficient Jacobian at x={x[~rank_ok][0].tolist()}"
    elif not transverse.all():
        failure = f"Σ(x) lies in the tangent span at x={x[~transverse][0].tolist()}"
    if failure:
        for arr in (tangent, radial, normal, r):
            arr[~valid] = np.nan
    return _Frames(p, jac, tangent, r, radial, normal, valid, failure)


def _first_second_form(chart: ManifoldChart, x: FloatArray, frames: _Frames) -> FloatArray:
    """Return the second fundamental form in the orthonormal tangent basis, `(N, k, k)`."""
    hn = np.einsum("nabd,nd->nab", chart.hessian(x), frames.normal)
    r_inv = np.linalg.inv(np.where(frames.valid[:, None, None], frames.r_factor, np.eye(chart.param_dim)))
    return np.swapaxes(r_inv, -1, -2) @ hn @ r_inv


def _determinant_sign(frames: _Frames) -> FloatArray:
    stacked = np.concatenate([frames.radial[:, None, :], frames.tangent, frames.normal[:, None, :]], axis=1)
    if stacked.shape[1] != stacked.shape[2]:
        stacked = np.concatenate([frames.tangent, frames.normal[:, None, :]], axis=1)
    return np.sign(np.linalg.det(np.nan_to_num(stacked)))


@lru_cache(maxsize=64)
def _orientation(chart: ManifoldChart) -> tuple[float, float] | None:
    """Return the normal flip at a reference sample and the frame determinant sign it induces.

    The reference is the domain center, or the first regular node of a coarse lattice when the chart
    degenerates there. None when no node is regular.
    """
    lattice, _ = chart.domain.lattice(ORIENTATION_NODES)
    candidates = np.concatenate([chart.domain.center[None], lattice])
    frames = _raw_frames(chart, candidates)
    regular = np.flatnonzero(frames.valid)
    if not len(regular):
        return None
    i = int(regular[0])
    if i:
        logger.debug("Orienting %r at x=%s: %s", chart, candidates[i].tolist(), frames.failure)
    reference = candidates[i : i + 1]
    frames = _raw_frames(chart, reference)
    second = _first_second_form(chart, reference, frames)
    flip = -1.0 if second[0, 0, 0] < 0 else 1.0
    oriented = replace(frames, normal=flip * frames.normal, failure=None)
    return flip, float(_determinant_sign(oriented)[0])


def _frames(chart: ManifoldChart, x: FloatArray, *, strict: bool = True) -> _Frames:
    frames = _raw_frames(chart, x)
    if strict and frames.failure:
        error = DegenerateChartError if "rank" in frames.failure else NonTransverseError
        raise error(f"Frame construction failed: {frames.failure}")
    if (orientation := _orientation(chart)) is None:
        return frames
    flip, sign = orientation
    normal = frames.normal
    if chart.codim_zero:
        normal = flip * normal
    else:
        dets = _determinant_sign(frames)
        normal = np.where((dets != sign)[:, None], -normal, normal)
    return replace(frames, normal=normal)


@dataclass(frozen=True, slots=True)
class TangentFrame:
    """Orthonormal frame at `Σ(x)`: tangent basis, radial direction and unit normal."""

    x: FloatArray
    point: FloatArray
    tangent: FloatArray
    radial: FloatArray
    normal: FloatArray
    codim_zero: bool

    def residual(self) -> float:
        """Return the largest deviation from the orthonormality and span relations."""
        k = len(self.tangent)
        gram = self.tangent @ self.tangent.T - np.eye(k)
        errors = [float(np.abs(gram).max()), abs(float(np.linalg.norm(self.normal)) - 1.0)]
        if not self.codim_zero:
            errors.append(float(np.abs(self.tangent @ self.normal).max()))
            errors.append(abs(float(self.radial @ self.normal)))
        return max(errors)


def tangent_frame(chart: ManifoldChart, x: npt.ArrayLike) -> TangentFrame:
    """Return the oriented frame at parameter point `x`.

    For charts of codimension zero the normal is the radial direction, with the same sign rule.

    Raises:
        DegenerateChartError: if the Jacobian is rank deficient at `x`.
        NonTransverseError: if `Σ(x)` lies in the tangent span.
    """
    point = as_points(x, chart.param_dim).reshape(1, -1)
    frames = _frames(chart, point)
    return TangentFrame(
        point[0], frames.points[0], frames.tangent[0], frames.radial[0], frames.normal[0], chart.codim_zero
    )


@dataclass(frozen=True, slots=True)
class CurvatureSample:
    """Principal curvatures at one parameter point, ascending, with ambient principal directions."""

    x: FloatArray
    kappas: FloatArray
    directions: FloatArray
    normal: FloatArray


def _finite_difference_form(chart: ManifoldChart, x: FloatArray, frames: _Frames) -> tuple[FloatArray, _Frames]:
    """Differentiate the oriented normal; samples whose neighbours lack a frame become invalid."""
    k = chart.param_dim
    dnu = []
    valid = frames.valid.copy()
    for a in range(k):
        e = np.zeros(k)
        e[a] = FD_STEP
        plus = _frames(chart, x + e, strict=False)
        minus = _frames(chart, x - e, strict=False)
        valid &= plus.valid & minus.valid
        dnu.append((plus.normal - minus.normal) / (2 * FD_STEP))
    dnu = np.stack(dnu, axis=1)
    second = -np.einsum("nad,nbd->nab", np.nan_to_num(dnu), frames.jacobian)
    second = (second + np.swapaxes(second, -1, -2)) / 2
    r_inv = np.linalg.inv(np.where(valid[:, None, None], frames.r_factor, np.eye(k)))
    second = np.swapaxes(r_inv, -1, -2) @ second @ r_inv
    second[~valid] = np.nan
    if valid.all() or not frames.valid.all():
        return second, replace(frames, valid=valid)
    failure = f"no frame next to x={x[~valid][0].tolist()} at step {FD_STEP}"
    return second, replace(frames, valid=valid, failure=failure)


def _second_forms(
    chart: ManifoldChart, x: FloatArray, method: Literal["closed_form", "finite_difference"], *, strict: bool = True
) -> tuple[FloatArray, _Frames]:
    frames = _frames(chart, x, strict=strict)
    if method == "closed_form":
        return _first_second_form(chart, x, frames), frames
    if method == "finite_difference":
        second, frames = _finite_difference_form(chart, x, frames)
        if strict and frames.failure:
            raise DegenerateChartError(f"Frame construction failed: {frames.failure}")
        return second, frames
    raise InvalidParameterError(f"Unknown curvature method {method!r}")


def principal_curvatures(
    chart: ManifoldChart,
    x: npt.ArrayLike,
    method: Literal["closed_form", "finite_difference"] = "closed_form",
) -> CurvatureSample:
    """Return the eigenvalues of the second fundamental form `II(ξ, η) = −⟨∇_ξν, η⟩` at `x`.

    `method="finite_difference"` differentiates the oriented normal field at step `FD_STEP`
    instead of contracting the closed-form Hessian with ν.

    Raises:
        DegenerateChartError: if the frame cannot be built at `x`.
        NonTransverseError: if `Σ(x)` lies in the tangent span.
    """
    point = as_points(x, chart.param_dim).reshape(1, -1)
    second, frames = _second_forms(chart, point, method)
    kappas, vectors = np.linalg.eigh(second[0])
    return CurvatureSample(point[0], kappas, vectors.T @ frames.tangent[0], frames.normal[0])


def _on_unit_sphere(chart: ManifoldChart, x: FloatArray) -> bool:
    return bool(np.all(np.abs(np.linalg.norm(chart.point(x), axis=-1) - 1.0) <= SPHERE_TOLERANCE))


def sectional_curvature(chart: ManifoldChart, x: npt.ArrayLike, i: int, j: int) -> float:
    """Return `κ_i κ_j + 1`, the sectional curvature of the principal plane `(i, j)`.

    Charts of codimension zero are open pieces of the unit sphere and return 1.

    Raises:
        InvalidParameterError: if `i == j` or an index is out of range.
        UnsupportedChartError: if the chart does not lie on the unit sphere.
    """
    point = as_points(x, chart.param_dim).reshape(1, -1)
    if i == j or not (0 <= i < chart.param_dim and 0 <= j < chart.param_dim):
        raise InvalidParameterError(f"Need two distinct principal indices below {chart.param_dim}, got {i}, {j}")
    if not _on_unit_sphere(chart, point):
        raise UnsupportedChartError("The Gauss relation κ_i κ_j + 1 holds only for charts on the unit sphere")
    if chart.codim_zero:
        return 1.0
    kappas = principal_curvatures(chart, point[0]).kappas
    return float(kappas[i] * kappas[j] + 1.0)


def gauss_sectional_curvature(chart: ManifoldChart, x: npt.ArrayLike, X: npt.ArrayLike, Y: npt.ArrayLike) -> float:
    """Return the intrinsic sectional curvature of the tangent plane spanned by `X` and `Y`.

    Uses the full normal bundle in the ambient space, `K = ⟨B(u,u), B(w,w)⟩ − |B(u,w)|²` for an
    orthonormal pair `u, w`, so it does not rely on the principal curvatures.

    Raises:
        InvalidParameterError: if `X` or `Y` is not tangent, or they are parallel.
    """
    point = as_points(x, chart.param_dim).reshape(1, -1)
    frames = _frames(chart, point)
    jac = frames.jacobian[0]
    tangent = frames.tangent[0]
    hess = chart.hessian(point)[0]

    coeffs = []
    for vector in (np.asarray(X, dtype=np.float64), np.asarray(Y, dtype=np.float64)):
        c, *_ = np.linalg.lstsq(jac.T, vector, rcond=None)
        if np.linalg.norm(jac.T @ c - vector) > 1e-8 * max(1.0, float(np.linalg.norm(vector))):
            raise InvalidParameterError(f"Vector {vector.tolist()} is not tangent at x={point[0].tolist()}")
        coeffs.append(c)

    u = coeffs[0] / np.linalg.norm(jac.T @ coeffs[0])
    w = coeffs[1] - float((jac.T @ coeffs[1]) @ (jac.T @ u)) * u
    length = float(np.linalg.norm(jac.T @ w))
    if length <= 1e-10:
        raise InvalidParameterError("Tangent vectors are parallel")
    w = w / length

    def normal_part(a: FloatArray, b: FloatArray) -> FloatArray:
        v = np.einsum("a,b,abd->d", a, b, hess)
        return v - tangent.T @ (tangent @ v)

    return float(normal_part(u, u) @ normal_part(w, w) - normal_part(u, w) @ normal_part(u, w))


@dataclass(frozen=True, slots=True)
class CurvatureReport:
    """Curvature sweep over a parameter lattice and the verdict of the non-degeneracy gate."""

    chart: ChartSpec | None
    samples: FloatArray
    kappas: FloatArray
    sectional_min: FloatArray
    sectional_max: FloatArray
    all_same_sign: bool
    nonvanishing: bool
    min_abs: float
    max_abs: float
    kappa_bound: float
    kappa_bounded: bool
    codim_zero: bool
    on_sphere: bool
    min_sectional: float | None
    sectional_gate: bool | None
    curve_condition: bool
    span_determinant_min: float | None
    frame_failures: int
    passed: bool

    def header(self) -> list[str]:
        """Return the CSV column names."""
        k = self.samples.shape[1]
        return [f"x{i + 1}" for i in range(k)] + [f"kappa{i + 1}" for i in range(k)] + ["K_min", "K_max"]

    def rows(self) -> list[list[float]]:
        """Return one CSV row per sample."""
        table = np.column_stack([self.samples, self.kappas, self.sectional_min, self.sectional_max])
        return table.tolist()


def verify_nondegenerate(
    chart: ManifoldChart,
    grid: int = 33,
    *,
    max_samples: int = 100_000,
    seed: int = 0,
    method: Literal["closed_form", "finite_difference"] = "closed_form",
) -> CurvatureReport:
    """Sweep a parameter lattice and report whether the principal curvatures never vanish and share a sign.

    Frame failures and curvature failures are reported, never raised. The gate also needs
    `max(|κ|, 1/|κ|)` finite and below `KAPPA_CEILING`. Lattices above `max_samples` points are
    subsampled with a seeded generator.

    Raises:
        InvalidParameterError: if the lattice is coarser than 33 nodes per axis.
    """
    if grid < 33:
        raise InvalidParameterError(f"Lattice spacing must be at most 1/32, got {grid} nodes per axis")
    points, _ = chart.domain.lattice(grid)
    if len(points) > max_samples:
        keep = np.sort(np.random.default_rng(seed).choice(len(points), max_samples, replace=False))
        points = points[keep]

    second, frames = _second_forms(chart, points, method, strict=False)
    valid = frames.valid
    k = chart.param_dim
    kappas = np.full((len(points), k), np.nan)
    kappas[valid] = np.linalg.eigvalsh(second[valid])

    good = kappas[valid]
    min_abs = float(np.abs(good).min()) if good.size else 0.0
    max_abs = float(np.abs(good).max()) if good.size else 0.0
    nonvanishing = bool(good.size) and min_abs > ZERO_CURVATURE
    same_sign = bool(good.size) and bool(np.all(good > 0) or np.all(good < 0))
    kappa_bound = max(max_abs, 1.0 / min_abs) if min_abs > 0 else float("inf")
    kappa_bounded = bool(np.isfinite(kappa_bound)) and kappa_bound <= KAPPA_CEILING

    on_sphere = _on_unit_sphere(chart, points[valid]) if valid.any() else False
    sec_min = np.full(len(points), np.nan)
    sec_max = np.full(len(points), np.nan)
    if on_sphere and k >= 2:
        if chart.codim_zero:
            sec_min[valid] = sec_max[valid] = 1.0
        else:
            iu = np.triu_indices(k, 1)
            products = (kappas[:, :, None] * kappas[:, None, :])[:, iu[0], iu[1]] + 1.0
            sec_min, sec_max = products.min(axis=1), products.max(axis=1)
    min_sectional = float(np.nanmin(sec_min)) if on_sphere and k >= 2 and valid.any() else None

    net = sphere_net(k)
    forms = np.einsum("ma,nab,mb->nm", net, second[valid], net)
    curve_condition = bool(forms.size) and bool(np.all(forms > ZERO_CURVATURE) or np.all(forms < -ZERO_CURVATURE))
    if not chart.codim_zero and curve_condition != (nonvanishing and same_sign):
        logger.warning("Directional curve test and eigenvalue test disagree for %r", chart)

    span_min = None
    if k == 1 and chart.ambient_dim == 3:
        stacked = np.stack([frames.points, frames.jacobian[:, 0], chart.hessian(points)[:, 0, 0]], axis=1)
        span_min = float(np.abs(np.linalg.det(stacked)).min())

    failures = int((~valid).sum())
    if frames.failure:
        logger.info("Frame construction failed at %d samples: %s", failures, frames.failure)
    passed = failures == 0 and kappa_bounded and (chart.codim_zero or (nonvanishing and same_sign))
    return CurvatureReport(
        chart=chart.spec,
        samples=points,
        kappas=kappas,
        sectional_min=sec_min,
        sectional_max=sec_max,
        all_same_sign=same_sign,
        nonvanishing=nonvanishing,
        min_abs=min_abs,
        max_abs=max_abs,
        kappa_bound=kappa_bound,
        kappa_bounded=kappa_bounded,
        codim_zero=chart.codim_zero,
        on_sphere=on_sphere,
        min_sectional=min_sectional,
        sectional_gate=None if min_sectional is None else min_sectional > 1.0,
        curve_condition=curve_condition,
        span_determinant_min=span_min,
        frame_failures=failures,
        passed=passed,
    )


@dataclass(frozen=True, slots=True)
class DerivativeCheck:
    """Relative discrepancy between supplied derivatives and central differences."""

    jacobian_error: float
    hessian_error: float


def check_derivatives(
    chart: ManifoldChart, points: npt.ArrayLike | None = None, step: float = FD_STEP
) -> DerivativeCheck:
    """Compare the chart's derivative evaluators against central differences at `step`."""
    k = chart.param_dim
    x = chart.domain.lattice(9)[0] if points is None else as_points(points, k).reshape(-1, k)
    jac = chart.jacobian(x)
    hess = chart.hessian(x)
    fd_jac = np.zeros_like(jac)
    fd_hess = np.zeros_like(hess)
    for a in range(chart.param_dim):
        e = np.zeros(chart.param_dim)
        e[a] = step
        fd_jac[:, a] = (chart.point(x + e) - chart.point(x - e)) / (2 * step)
        fd_hess[:, a] = (chart.jacobian(x + e) - chart.jacobian(x - e)) / (2 * step)

    def relative(exact: FloatArray, approx: FloatArray) -> float:
        return float(np.abs(exact - approx).max() / max(1.0, float(np.abs(exact).max())))

    return DerivativeCheck(relative(jac, fd_jac), relative(hess, fd_hess))


def chart_c2_norm(chart: ManifoldChart, nodes: int = 33) -> float:
    """Return `sup|Σ| + sup‖∇Σ‖ + sup_ξ|∇²Σ(ξ,ξ)|`, the Lipschitz constant of `z ↦ ⟨Σ, z⟩` in C²."""
    x, _ = chart.domain.lattice(nodes)
    net = sphere_net(chart.param_dim)
    value = float(np.linalg.norm(chart.point(x), axis=-1).max())
    slope = float(np.linalg.norm(chart.jacobian(x), ord=2, axis=(-2, -1)).max())
    curvature = np.einsum("ma,nabd,mb->nmd", net, chart.hessian(x), net)
    return value + slope + float(np.linalg.norm(curvature, axis=-1).max())


def chart_from_spec(spec: ChartSpec | str | bytes) -> ManifoldChart:
    """Build a chart from a spec struct or its JSON text."""
    if isinstance(spec, (str, bytes)):
        return parse_chart(spec)
    return make_builtin_chart(spec)
