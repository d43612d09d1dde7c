"""Vertical δ-neighborhoods of graphs and how two of them intersect.

Measures use a center-rule quadrature: the box `D × R` is split into x-cells of width about `ρ` and
y-cells `[jρ, (j+1)ρ)`, and a cell counts when its center lies in both slabs. Only x-cells where
`|f − g|` can be at most 2δ are visited, found by a pruned quadtree over the x-cells.
"""

from __future__ import annotations

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, ClassVar, Literal

import numpy as np
from numpy.polynomial import Polynomial
from scipy.optimize import brentq
from scipy.spatial import cKDTree

from pycinematic.dyadic import MAX_SCALE, DyadicSet
from pycinematic.errors import (
    CinematicViolationError,
    DomainMismatchError,
    FlowDegenerateError,
    InvalidParameterError,
    NonInteriorCriticalPointError,
    PreconditionError,
    TooCoarseError,
)
from pycinematic.fields import (
    FieldSamples,
    FunctionFamily,
    RayRestriction,
    ScalarField,
    c2_distance,
    cinematic_infimum,
    classify_pair,
    tangency_parameter,
)
from pycinematic.grids import BATCH_SIZE, Box, Estimate, FloatArray, IntArray, grid_extremum, sphere_net

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

    import numpy.typing as npt

    from pycinematic.dyadic import SpreadReport

logger = logging.getLogger(__name__)

RESOLUTION_DIVISOR: int = 8
"""Default quadrature resolution is δ divided by this."""

SMALL_T_FACTOR: float = 4.0
"""Pairs with `‖f − g‖_{C²} ≤ SMALL_T_FACTOR·δ` get the trivial bound and no case analysis."""


@dataclass(frozen=True, slots=True)
class Slab:
    """The vertical δ-neighborhood `{(x, y) : x ∈ D, |y − f(x)| ≤ δ}`."""

    base: ScalarField
    delta: float
    domain: Box | None = None

    @property
    def box(self) -> Box:
        """Return the base box `D`."""
        return self.domain or self.base.domain

    def contains(self, x: npt.ArrayLike, y: npt.ArrayLike) -> npt.NDArray[np.bool_]:
        """Return whether the points `(x, y)` lie in the slab."""
        x = np.asarray(x, dtype=np.float64)
        inside = self.box.contains(x)
        return inside & (np.abs(np.asarray(y) - self.base.value(x)) <= self.delta)

    def measure(self) -> float:
        """Return the exact measure `2δ·|D|`."""
        return 2 * self.delta * self.box.volume


def _dyadic_scale(delta: float, dim: int) -> int:
    m = int(np.floor(-np.log2(delta) + 1e-9))
    return max(0, min(m, MAX_SCALE[dim]))


def _lipschitz_bound(h: ScalarField, box: Box, nodes: int = 33) -> float:
    slope, _, step = grid_extremum(lambda x: np.linalg.norm(h.gradient(x), axis=-1), box, nodes, maximize=True)
    curvature, _, _ = grid_extremum(
        lambda x: np.abs(np.linalg.eigvalsh(h.hessian(x))).max(axis=-1), box, nodes, maximize=True, refine=False
    )
    return (slope + curvature * float(np.linalg.norm(step))) * 1.05


def _active_leaves(
    h: ScalarField, box: Box, counts: IntArray, widths: FloatArray, delta: float, lipschitz: float
) -> list[IntArray]:
    """Return index blocks of the x-cells that may meet `{|h| ≤ 2δ}`."""
    k = box.dim
    top = 1 << int(np.ceil(np.log2(max(int(counts.max()), 1))))
    offsets = np.array(list(itertools.product((0, 1), repeat=k)), dtype=np.int64)
    stack: list[tuple[IntArray, int]] = [(np.zeros((1, k), dtype=np.int64), top)]
    leaves = []
    while stack:
        blocks, size = stack.pop()
        if len(blocks) > BATCH_SIZE:
            stack.extend((blocks[i : i + BATCH_SIZE], size) for i in range(0, len(blocks), BATCH_SIZE))
            continue
        upper = np.minimum(blocks + size, counts)
        centers = box.lower + (blocks + upper) / 2 * widths
        halfdiag = 0.5 * np.linalg.norm((upper - blocks) * widths, axis=-1)
        blocks = blocks[np.abs(h.value(centers)) <= 2 * delta + lipschitz * halfdiag]
        if not len(blocks):
            continue
        if size == 1:
            leaves.append(blocks)
            continue
        half = size // 2
        children = (blocks[:, None, :] + offsets[None] * half).reshape(-1, k)
        stack.append((children[np.all(children < counts, axis=1)], half))
    return leaves


@dataclass(frozen=True, slots=True)
class IntersectionReport:
    """Measure of `f^δ ∩ g^δ` with its quadrature band, projection and case analysis."""

    delta: float
    resolution: float
    measure: float
    band: float
    active_cells: int
    projection: DyadicSet
    t: float | None = None
    tangency: Estimate | None = None
    case: str | None = None
    lambda_bar: float | None = None
    bound_ratio: float | None = None


def intersection_measure(
    f: ScalarField,
    g: ScalarField,
    delta: float,
    domain: Box | None = None,
    resolution: float | None = None,
    *,
    K: float | None = None,
    analyse: bool = True,
    small_t_factor: float = SMALL_T_FACTOR,
) -> IntersectionReport:
    """Measure `f^δ ∩ g^δ` over `domain` by center-rule quadrature.

    `P_{f,g}`, the x-cells where the slabs overlap, is returned as a dyadic set at scale δ in the
    unit coordinates of `domain`. With `analyse`, the C² distance, tangency parameter, case of the
    local dichotomy and the ratio `measure·t/δ²` are added; `K` defaults to the pair's own ratio
    of C² distance to cinematic infimum.

    Raises:
        TooCoarseError: if `resolution > δ/8`.
        DomainMismatchError: if the fields differ in domain or `domain` leaves it.
    """
    if delta <= 0:
        raise InvalidParameterError(f"Thickness must be positive, got {delta}")
    rho = resolution or delta / RESOLUTION_DIVISOR
    if rho > delta / RESOLUTION_DIVISOR * (1 + 1e-12):
        raise TooCoarseError(f"Resolution {rho:.6g} is coarser than δ/8 = {delta / 8:.6g}")
    if f.domain != g.domain:
        raise DomainMismatchError(f"Fields live on different boxes: {f.domain} and {g.domain}")
    box = domain or f.domain
    if not (np.all(box.lower >= f.domain.lower - 1e-12) and np.all(box.upper <= f.domain.upper + 1e-12)):
        raise DomainMismatchError(f"Subdomain {box} is not contained in {f.domain}")

    h = f - g
    lipschitz = _lipschitz_bound(h, box)
    counts = np.maximum(1, np.round(box.sides / rho)).astype(np.int64)
    widths = box.sides / counts
    cell_volume = rho * float(np.prod(widths))
    halfdiag = 0.5 * float(np.linalg.norm(widths))

    total, band, active = 0, 0.0, []
    for blocks in _active_leaves(h, box, counts, widths, delta, lipschitz):
        centers = box.lower + (blocks + 0.5) * widths
        fv, gv = f.value(centers), g.value(centers)
        a = np.maximum(fv, gv) - delta
        b = np.minimum(fv, gv) + delta
        cells = np.maximum(0, np.ceil(b / rho - 0.5) - np.ceil(a / rho - 0.5)).astype(np.int64)
        hit = cells > 0
        total += int(cells.sum())
        band += float(hit.sum()) * 2 * (1 + np.ceil(lipschitz * halfdiag / rho)) * cell_volume
        active.append(centers[hit])

    hits = np.concatenate(active) if active else np.zeros((0, box.dim))
    scale = _dyadic_scale(delta, box.dim)
    projection = DyadicSet.from_points(box.to_unit(hits), scale) if len(hits) else DyadicSet(box.dim, scale)
    measure = total * cell_volume
    logger.debug("Intersection at δ=%.4g: %d cells over %d x-cells", delta, total, len(hits))
    if not analyse:
        return IntersectionReport(delta, rho, measure, band, len(hits), projection)

    t = c2_distance(f, g)
    tangency = tangency_parameter(f, g, box)
    ratio = measure * t / delta**2 if t > 0 else float("inf")
    case, lambda_bar = _pair_case(f, g, delta, t, K, small_t_factor)
    return IntersectionReport(delta, rho, measure, band, len(hits), projection, t, tangency, case, lambda_bar, ratio)


def _pair_case(
    f: ScalarField, g: ScalarField, delta: float, t: float, K: float | None, small_t_factor: float
) -> tuple[str, float | None]:
    if t <= small_t_factor * delta:
        return "small-t", None
    if K is None:
        infimum = cinematic_infimum(f, g).value
        if infimum <= 0:
            return "unclassified", None
        K = max(1.0, t / infimum)
    try:
        result = classify_pair(f, g, delta, K, max_depth=3 if f.dim < 3 else 2)
    except CinematicViolationError as e:
        logger.info("Pair left unclassified: %s", e)
        return "unclassified", None
    critical = [label.critical_point for label in result.subcubes if label.critical_point is not None]
    lambda_bar = float(abs((f - g).value(np.asarray(critical[0])))) if critical else None
    return result.label, lambda_bar


@dataclass(frozen=True, slots=True)
class BoundRow:
    """One (pair, δ) entry of the intersection bound table."""

    pair_id: str
    delta: float
    t: float
    tangency: float
    case: str
    measure: float
    ratio: float


@dataclass(frozen=True, slots=True)
class BoundTable:
    """Ratios `measure·t/δ²` over pairs and scales, with the per-scale maximum."""

    rows: list[BoundRow]
    max_ratio: dict[float, float]
    skipped: list[tuple[str, float, str]]
    trend_bounded: bool

    HEADER: ClassVar[tuple[str, ...]] = ("pair_id", "delta", "t", "tangency", "class", "measure", "ratio")

    def table(self) -> list[list[object]]:
        """Return the CSV rows."""
        return [[r.pair_id, r.delta, r.t, r.tangency, r.case, r.measure, r.ratio] for r in self.rows]


def verify_intersection_bound(
    family: FunctionFamily,
    pairs: Sequence[tuple[int, int]] | Literal["all"],
    deltas: Sequence[float],
    *,
    small_t_factor: float = SMALL_T_FACTOR,
    divisor: int = RESOLUTION_DIVISOR,
    threads: int = 1,
) -> BoundTable:
    """Tabulate `measure·t/δ²` for every pair and scale.

    Pairs closer than δ in C² are skipped with a note. Pairs with `t ≤ small_t_factor·δ` are measured
    but labelled `small-t` without case analysis. The trend is bounded when no scale's maximum exceeds
    twice the maximum at the coarsest scale.
    """
    chosen = list(itertools.combinations(range(len(family)), 2)) if pairs == "all" else list(pairs)
    distances = {}
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for pair, d in zip(chosen, pool.map(lambda p: c2_distance(family[p[0]], family[p[1]]), chosen)):
            distances[pair] = d

    tasks, skipped = [], []
    for (i, j), delta in itertools.product(chosen, deltas):
        t = distances[(i, j)]
        if t < delta:
            skipped.append((f"{i}-{j}", delta, f"t={t:.6g} < δ"))
            logger.warning("Skipping pair %d-%d at δ=%.6g: C² distance %.6g below δ", i, j, delta, t)
            continue
        tasks.append((i, j, delta, t))

    def run(task: tuple[int, int, float, float]) -> BoundRow:
        i, j, delta, t = task
        small = t <= small_t_factor * delta
        report = intersection_measure(family[i], family[j], delta, resolution=delta / divisor, analyse=False)
        if small:
            case, tangency = "small-t", float("nan")
        else:
            case, _ = _pair_case(family[i], family[j], delta, t, None, small_t_factor)
            tangency = tangency_parameter(family[i], family[j]).value
        return BoundRow(f"{i}-{j}", delta, t, tangency, case, report.measure, report.measure * t / delta**2)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        rows = list(pool.map(run, tasks))

    max_ratio: dict[float, float] = {}
    for row in rows:
        max_ratio[row.delta] = max(max_ratio.get(row.delta, 0.0), row.ratio)
    ordered = [max_ratio[d] for d in sorted(max_ratio, reverse=True)]
    trend = not ordered or all(r <= 2 * ordered[0] for r in ordered)
    return BoundTable(rows, max_ratio, skipped, trend)


@dataclass(frozen=True, slots=True)
class FlowFoliation:
    """Integral curves of `∇h/|∇h|` from the inward boundary of a box."""

    seeds: FloatArray
    curves: list[FloatArray]
    arclengths: FloatArray
    coverage: float
    lipschitz: float
    field_bound: float
    gronwall: float
    gronwall_unit: float
    monotone: bool
    terminated: bool


def _unit_field(h: ScalarField, x: FloatArray, tolerance: float) -> FloatArray:
    grad = h.gradient(x)
    norm = np.linalg.norm(grad, axis=-1)
    small = norm < tolerance
    if small.any():
        raise FlowDegenerateError(f"|∇h| = {norm[small][0]:.3g} below {tolerance:.3g} at x={x[small][0].tolist()}")
    return grad / norm[:, None]


def _rk4(h: ScalarField, x: FloatArray, step: FloatArray, tolerance: float) -> FloatArray:
    s = step[:, None]
    k1 = _unit_field(h, x, tolerance)
    k2 = _unit_field(h, x + s / 2 * k1, tolerance)
    k3 = _unit_field(h, x + s / 2 * k2, tolerance)
    k4 = _unit_field(h, x + s * k3, tolerance)
    return x + s / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _inward_seeds(h: ScalarField, box: Box, spacing: float, tolerance: float) -> FloatArray:
    seeds = []
    for axis in range(box.dim):
        others = [a for a in range(box.dim) if a != axis]
        if others:
            face = Box(tuple(box.lo[a] for a in others), tuple(box.hi[a] for a in others))
            nodes = max(2, int(round(float(face.sides.max()) / spacing)) + 1)
            grid, _ = face.lattice(nodes)
        else:
            grid = np.zeros((1, 0))
        for value, sign in ((box.lo[axis], 1.0), (box.hi[axis], -1.0)):
            points = np.insert(grid, axis, value, axis=1)
            inward = _unit_field(h, points, tolerance)[:, axis] * sign > 0
            seeds.append(points[inward])
    return np.unique(np.concatenate(seeds), axis=0)


def gradient_flow_foliation(
    h: ScalarField, U: Box, delta: float, step: float | None = None, *, tolerance: float = 1e-10
) -> FlowFoliation:
    """Integrate the normalized gradient flow of `h` from seeds on the inward faces of `U`.

    Seeds are spaced δ/2; curves advance by a classical fourth-order step of at most δ/4 and stop
    where they leave `U`, the exit located by bisection on the step. Coverage is the share of U's
    δ-cells within δ of a curve. The Lipschitz estimate compares neighbouring curves at equal
    arclength; the Gronwall bounds use the sup of `‖(I − FFᵀ)∇²h‖/|∇h|` with `F = ∇h/|∇h|`.

    Raises:
        InvalidParameterError: if `step > δ/4`.
        FlowDegenerateError: if `|∇h|` drops below `tolerance` where the flow is evaluated.
    """
    step = step or delta / 4
    if step > delta / 4 * (1 + 1e-12):
        raise InvalidParameterError(f"Step {step:.6g} exceeds δ/4 = {delta / 4:.6g}")
    spacing = delta / 2
    seeds = _inward_seeds(h, U, spacing, tolerance)
    n = len(seeds)
    position = seeds.copy()
    active = np.ones(n, dtype=bool)
    lengths = np.zeros(n)
    paths: list[list[FloatArray]] = [[p] for p in seeds]
    max_steps = int(np.ceil(10 * U.diameter / step)) + 10

    for _ in range(max_steps):
        idx = np.flatnonzero(active)
        if not len(idx):
            break
        nxt = _rk4(h, position[idx], np.full(len(idx), step), tolerance)
        inside = U.contains(nxt, tol=1e-12)
        for i, p in zip(idx[inside], nxt[inside]):
            paths[i].append(p)
        position[idx[inside]] = nxt[inside]
        lengths[idx[inside]] += step

        out = idx[~inside]
        if len(out):
            lo, hi = np.zeros(len(out)), np.ones(len(out))
            for _ in range(40):
                mid = (lo + hi) / 2
                ok = U.contains(_rk4(h, position[out], mid * step, tolerance), tol=1e-12)
                lo, hi = np.where(ok, mid, lo), np.where(ok, hi, mid)
            final = U.clip(_rk4(h, position[out], lo * step, tolerance))
            for i, p, frac in zip(out, final, lo):
                if frac * step > 1e-12:
                    paths[i].append(p)
                    lengths[i] += frac * step
            position[out] = final
            active[out] = False
    terminated = not active.any()
    if not terminated:
        logger.warning("%d flow curves did not reach the boundary in %d steps", int(active.sum()), max_steps)

    curves = [np.asarray(p) for p in paths]
    monotone = all(len(c) < 2 or bool(np.all(np.diff(h.value(c)) > 0)) for c in curves)

    cells = np.maximum(1, np.ceil(U.sides / delta)).astype(np.int64)
    grid = np.stack(np.meshgrid(*(np.arange(c) for c in cells), indexing="ij"), axis=-1).reshape(-1, U.dim)
    centers = U.lower + (grid + 0.5) * (U.sides / cells)
    distance, _ = cKDTree(np.concatenate(curves)).query(centers)
    coverage = float(np.mean(distance <= delta))

    lipschitz = 1.0
    for a, b in cKDTree(seeds).query_pairs(spacing * 1.01 * np.sqrt(U.dim)):
        common = min(len(curves[a]), len(curves[b])) - 1
        if common < 1:
            continue
        gap = np.linalg.norm(curves[a][:common] - curves[b][:common], axis=-1).max()
        lipschitz = max(lipschitz, float(gap / np.linalg.norm(seeds[a] - seeds[b])))

    samples = FieldSamples.of(h, U.lattice(17)[0])
    norm = np.linalg.norm(samples.gradient, axis=-1)
    if (norm < tolerance).any():
        raise FlowDegenerateError(f"|∇h| vanishes on the sampling lattice of {U}")
    unit = samples.gradient / norm[:, None]
    projector = np.eye(U.dim) - unit[:, :, None] * unit[:, None, :]
    derivative = projector @ samples.hessian / norm[:, None, None]
    field_bound = float(np.linalg.norm(derivative, ord=2, axis=(-2, -1)).max())
    longest = float(lengths.max()) if n else 0.0
    return FlowFoliation(
        seeds=seeds,
        curves=curves,
        arclengths=lengths,
        coverage=coverage,
        lipschitz=lipschitz,
        field_bound=field_bound,
        gronwall=float(np.exp(field_bound * longest)),
        gronwall_unit=float(np.exp(field_bound)),
        monotone=monotone,
        terminated=terminated,
    )


@dataclass(frozen=True, slots=True)
class Profile:
    """A one-variable C² function on `[0, length]` with its first two derivatives."""

    value: Callable[[FloatArray], FloatArray]
    derivative: Callable[[FloatArray], FloatArray]
    second: Callable[[FloatArray], FloatArray]
    length: float

    @classmethod
    def polynomial(cls, coefficients: Sequence[float], length: float = 1.0) -> Profile:
        """Return the profile of a power-basis polynomial."""
        p = Polynomial(coefficients)
        return cls(p, p.deriv(), p.deriv(2), length)

    @classmethod
    def from_ray(cls, ray: RayRestriction) -> Profile:
        """Return the profile of a field along a ray, up to where the ray leaves the box."""
        return cls(ray.value, ray.derivative, ray.second, ray.reach())

    def negated(self) -> Profile:
        """Return the profile of `−h`."""
        return Profile(lambda s: -self.value(s), lambda s: -self.derivative(s), lambda s: -self.second(s), self.length)


def _sublevel_set(profile: Profile, level: float, scan_points: int) -> list[tuple[float, float]]:
    """Return the maximal intervals of `{s : |h(s)| ≤ level}`, endpoints refined by Brent's method."""
    s = np.linspace(0.0, profile.length, scan_points + 1)
    inside = np.abs(profile.value(s)) <= level
    if not inside.any():
        return []

    def gap(x: float) -> float:
        return float(abs(profile.value(np.asarray(x))) - level)

    edges = np.flatnonzero(np.diff(inside.astype(np.int8)))
    starts = [0] if inside[0] else []
    ends = []
    for e in edges:
        if inside[e + 1]:
            starts.append(e + 1)
        else:
            ends.append(e)
    if inside[-1]:
        ends.append(scan_points)

    intervals = []
    for i0, i1 in zip(starts, ends):
        left = 0.0 if i0 == 0 else brentq(gap, s[i0 - 1], s[i0], xtol=1e-14)
        right = profile.length if i1 == scan_points else brentq(gap, s[i1], s[i1 + 1], xtol=1e-14)
        intervals.append((float(left), float(right)))
    return intervals


@dataclass(frozen=True, slots=True)
class SublevelReport:
    """The set `{s : |h(s)| ≤ 2δ}` with the bounds of its mode."""

    intervals: list[tuple[float, float]]
    measure: float
    mode: str
    lam: float
    t: float
    c1: float
    c2: float
    bound_ratio: float
    endpoint_bound: float | None = None
    rigorous_endpoint: float | None = None
    negated: bool = False

    @property
    def single_interval(self) -> bool:
        """Return whether the set is one closed interval."""
        return len(self.intervals) == 1


def sublevel_interval(
    profile: Profile,
    delta: float,
    mode: Literal["transversal", "tangent"],
    *,
    K: float = 1.0,
    c2: float | None = None,
    t: float | None = None,
    scan_points: int = 4096,
    slope_tolerance: float | None = None,
) -> SublevelReport:
    """Compute `E_{2δ} = {s ∈ [0, a] : |h(s)| ≤ 2δ}` on a dense scan refined at its crossings.

    Constants default to `c₂ = 1/(3K)` and `c₁ = c₂/4`; `t` defaults to the sampled C² norm of the
    profile. Transversal mode needs `inf(|h| + |h′|) ≥ c₂t` and reports `|E|·t/δ`. Tangent mode needs
    `|h′(0)|` within `slope_tolerance` (default `10⁻⁶·max(t, 1)`) and `h″ ≥ c₂t`, negating concave
    profiles first, and reports the containment endpoints `c₂⁻¹√((λ₂+δ)/t)` and `√(2(λ₂+2δ)/(c₂t))`
    with `λ₂ = |h(0)|`.

    Raises:
        PreconditionError: naming the inequality that fails.
    """
    s = np.linspace(0.0, profile.length, scan_points + 1)
    values, slopes, curvatures = profile.value(s), profile.derivative(s), profile.second(s)
    if t is None:
        t = float(np.abs(values).max() + np.abs(slopes).max() + np.abs(curvatures).max())
    c2 = c2 if c2 is not None else 1 / (3 * K)
    c1 = c2 / 4
    if not delta < c1 * t:
        raise PreconditionError(f"δ={delta:.6g} is not below c₁t={c1 * t:.6g}", "δ < c₁t")

    negated = False
    if mode == "transversal":
        lam = float((np.abs(values) + np.abs(slopes)).min())
        if lam < c2 * t:
            raise PreconditionError(f"λ₁={lam:.6g} is below c₂t={c2 * t:.6g}", "λ₁ ≥ c₂t")
    elif mode == "tangent":
        floor = c2 * t * (1 - 1e-12)
        if curvatures.max() <= -floor:
            profile, negated = profile.negated(), True
            values, slopes, curvatures = -values, -slopes, -curvatures
        if abs(slopes[0]) > (slope_tolerance if slope_tolerance is not None else 1e-6 * max(t, 1.0)):
            raise PreconditionError(f"h′(0)={slopes[0]:.3g} does not vanish", "h′(0⁺) = 0")
        if curvatures[1:].min() < floor:
            raise PreconditionError(f"min h″={curvatures[1:].min():.6g} is below c₂t={c2 * t:.6g}", "h″ ≥ c₂t")
        lam = float(abs(values[0]))
    else:
        raise InvalidParameterError(f"Unknown mode {mode!r}")

    intervals = _sublevel_set(profile, 2 * delta, scan_points)
    measure = float(sum(b - a for a, b in intervals))
    if mode == "transversal":
        return SublevelReport(intervals, measure, mode, lam, t, c1, c2, measure * t / delta)
    endpoint = float(np.sqrt((lam + delta) / t) / c2)
    rigorous = float(np.sqrt(2 * (lam + 2 * delta) / (c2 * t)))
    ratio = measure / (delta / np.sqrt((lam + delta) * t))
    return SublevelReport(intervals, measure, mode, lam, t, c1, c2, ratio, endpoint, rigorous, negated)


@dataclass(frozen=True, slots=True)
class PolarReport:
    """Polar reassembly of `{|h| ≤ 2δ}` around a critical point and the direct cell count."""

    critical_point: tuple[float, ...]
    lambda_bar: float
    convexity: int
    directions: FloatArray
    intervals: list[list[tuple[float, float]]]
    polar_measure: float
    direct_measure: float
    relative_error: float
    max_endpoint: float
    endpoint_bounds: FloatArray = field(default_factory=lambda: np.zeros(0))


def _sphere_area(dim: int) -> float:
    return {1: 2.0, 2: 2 * np.pi, 3: 4 * np.pi}[dim]


def polar_slices(
    h: ScalarField,
    x_M: npt.ArrayLike,
    delta: float,
    *,
    U: Box | None = None,
    directions: int | None = None,
    divisor: int = RESOLUTION_DIVISOR,
    scan_points: int = 4096,
) -> PolarReport:
    """Rebuild the measure of `{x ∈ U : |h(x)| ≤ 2δ}` from rays out of the critical point `x_M`.

    Each ray profile `s ↦ h(x_M + sξ)` goes through the tangent mode of `sublevel_interval`, with
    `c₂t` set to the smallest curvature along the ray; its intervals are integrated against
    `s^(k−1)` and its certified endpoints are kept. The direct count uses cells of side δ/`divisor`
    over the bounding box of the polar region.

    Raises:
        NonInteriorCriticalPointError: if `x_M` is not interior to `U`.
        PreconditionError: if `|∇h(x_M)| > 10δ`, if `h` is not strictly convex or concave on `U`, or if
            δ is not below a quarter of the smallest ray curvature.
    """
    box = U or h.domain
    center = np.asarray(x_M, dtype=np.float64)
    distance = box.boundary_distance(center)
    if distance <= 0:
        raise NonInteriorCriticalPointError(f"Critical point {center.tolist()} is not interior to {box}", distance)
    slope = float(np.linalg.norm(h.gradient(center[None])[0]))
    if slope > 10 * delta:
        raise PreconditionError(f"|∇h(x_M)|={slope:.6g} exceeds 10δ={10 * delta:.6g}", "|∇h(x_M)| ≤ 10δ")
    eig = np.linalg.eigvalsh(h.hessian(box.lattice(17)[0]))
    if np.all(eig > 0):
        convexity = 1
    elif np.all(eig < 0):
        convexity = -1
    else:
        raise PreconditionError(f"h is not strictly convex or concave on {box}", "strict convexity")

    k = box.dim
    net = sphere_net(k, directions, full=True)
    weight = _sphere_area(k) / len(net)
    lambda_bar = float(abs(h.value(center[None])[0]))
    intervals, polar, bounds = [], 0.0, []
    for xi in net:
        profile = Profile.from_ray(RayRestriction(h, center, xi))
        s = np.linspace(0.0, profile.length, scan_points + 1)
        second = profile.second(s)
        t = float(np.abs(profile.value(s)).max() + np.abs(profile.derivative(s)).max() + np.abs(second).max())
        curvature = float(convexity * second[1:].min())
        if curvature <= 0:
            raise PreconditionError(f"h is flat along direction {xi.tolist()}", "strict convexity")
        report = sublevel_interval(
            profile, delta, "tangent", c2=curvature / t, t=t, scan_points=scan_points, slope_tolerance=10 * delta
        )
        intervals.append(report.intervals)
        polar += weight * sum((b**k - a**k) / k for a, b in report.intervals)
        bounds.append(report.rigorous_endpoint)

    reach = max((b for pieces in intervals for _, b in pieces), default=0.0)
    rho = delta / divisor
    direct = 0.0
    if reach > 0:
        region = Box(
            tuple(np.maximum(box.lower, center - reach - 2 * rho).tolist()),
            tuple(np.minimum(box.upper, center + reach + 2 * rho).tolist()),
        )
        counts = np.maximum(1, np.ceil(region.sides / rho)).astype(np.int64)
        widths = region.sides / counts
        axes = [region.lo[a] + (np.arange(counts[a]) + 0.5) * widths[a] for a in range(k)]
        inside = 0
        for i in range(0, len(axes[0]), 256):
            mesh = np.meshgrid(axes[0][i : i + 256], *axes[1:], indexing="ij")
            pts = np.stack([m.ravel() for m in mesh], axis=-1)
            inside += int((np.abs(h.value(pts)) <= 2 * delta).sum())
        direct = inside * float(np.prod(widths))
    error = abs(polar - direct) / direct if direct > 0 else (0.0 if polar == 0 else float("inf"))
    return PolarReport(
        critical_point=tuple(center.tolist()),
        lambda_bar=lambda_bar,
        convexity=convexity,
        directions=net,
        intervals=intervals,
        polar_measure=polar,
        direct_measure=direct,
        relative_error=error,
        max_endpoint=reach,
        endpoint_bounds=np.asarray(bounds),
    )


@dataclass(frozen=True, slots=True)
class ShapeCountReport:
    """`|E ∩ P_{f,g}|_δ` against `δ^-(n−2)/t^s`."""

    count: int
    t: float
    reference: float
    ratio: float
    precondition_ok: bool


def shape_count(
    E: DyadicSet,
    f: ScalarField,
    g: ScalarField,
    delta: float,
    *,
    s: float,
    epsilon: float = 0.0,
    spread: SpreadReport | None = None,
    projection: DyadicSet | None = None,
) -> ShapeCountReport:
    """Count the δ-cells of `E ⊂ [0,1]^(n−1)` lying over `P_{f,g}`.

    `precondition_ok` records whether `|E| ≤ δ^-(n−2+s)` and, when `spread` is given, whether its
    constant is at most `δ^-ε`.
    """
    if projection is None:
        projection = intersection_measure(f, g, delta, analyse=False).projection
    if E.dim != projection.dim:
        raise InvalidParameterError(f"E has dimension {E.dim}, the base has dimension {projection.dim}")
    if E.scale != projection.scale:
        E = E.coarsen(projection.scale) if E.scale > projection.scale else E.refine(projection.scale)
    n = E.dim + 1
    count = len(E.intersection(projection))
    t = c2_distance(f, g)
    reference = delta ** -(n - 2) / t**s if t > 0 else float("inf")
    ok = len(E) <= delta ** -(n - 2 + s) * (1 + 1e-9)
    if spread is not None:
        ok = ok and spread.constant <= delta**-epsilon
    return ShapeCountReport(count, t, reference, count / reference, ok)
