"""δ-discretized configurations of graph-aligned sets, energy estimates and incidence counts.

A configuration pairs every member `f` of a δ-separated family with a set `E(f)` of δ-cells of
`[0, 1]^n` lying on the vertical δ-neighborhood of its graph. Cells are indexed in the unit
coordinates of the family's box, with the value axis last.
"""

from __future__ import annotations

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import msgspec
import numpy as np

from pycinematic.dyadic import (
    DyadicSet,
    RandomSpreadSpec,
    SpreadReport,
    UniformSetSpec,
    generate_set,
    spread_constant,
)
from pycinematic.errors import (
    InvalidFamilyError,
    InvalidParameterError,
    InvalidScaleError,
    MisalignedCellError,
    OutOfRegimeError,
    SpreadViolationError,
)
from pycinematic.fields import (
    FunctionFamily,
    PolynomialField,
    family_to_spec,
    load_family,
    pairwise_c2_distances,
)
from pycinematic.grids import FloatArray, grid_extremum
from pycinematic.intersect import ShapeCountReport, Slab, intersection_measure, shape_count
from pycinematic.reports import write_bytes_atomic, write_json

if TYPE_CHECKING:
    from collections.abc import Sequence

    import numpy.typing as npt

logger = logging.getLogger(__name__)

DEFAULT_EPSILON: float = 0.05


class ConfigParams(msgspec.Struct, frozen=True):
    """Scale and exponents of a configuration.

    `C` is the spread constant every set must respect; it defaults to `δ^-ε`.
    """

    scale: int
    s: float
    t: float
    epsilon: float = DEFAULT_EPSILON
    C: float | None = None
    check_spread: bool = True

    @property
    def delta(self) -> float:
        """Return `δ = 2^-scale`."""
        return 2.0**-self.scale

    @property
    def constant(self) -> float:
        """Return the spread constant in force."""
        return self.C if self.C is not None else self.delta**-self.epsilon


def furstenberg_exponent(n: int, s: float, t: float) -> float:
    """Return the expected dimension `n − 2 + s + min(s, t)` of a Furstenberg set of hypersurfaces."""
    return n - 2 + s + min(s, t)


def family_spread_constant(
    family: FunctionFamily, t: float, delta: float, *, distances: FloatArray | None = None, threads: int = 1
) -> SpreadReport:
    """Measure how the family spreads in C² distance at exponent `t`.

    Balls are centered at members with radii `2^-j` from 1 down to δ; members stand in for δ-cells,
    which is exact for δ-separated families.
    """
    if distances is None:
        distances = pairwise_c2_distances(family, threads=threads)
    total = len(family)
    per_radius, best = [], (0.0, 0, 1.0)
    for j in range(int(np.floor(-np.log2(delta) + 1e-9)) + 1):
        radius = 2.0**-j
        counts = (distances <= radius).sum(axis=1)
        i = int(np.argmax(counts))
        ratio = float(counts[i]) / (radius**t * total)
        per_radius.append((radius, ratio))
        if ratio > best[0]:
            best = (ratio, i, radius)
    ratio, i, radius = best
    center = tuple(family.points[i].tolist()) if family.points is not None else (float(i),)
    return SpreadReport(t, ratio, center, radius, total, per_radius)


def _min_separation(distances: FloatArray) -> float:
    if len(distances) < 2:
        return float("inf")
    return float(distances[~np.eye(len(distances), dtype=bool)].min())


def plant_sets(family: FunctionFamily, X: DyadicSet) -> list[DyadicSet]:
    """Lift a base set `X ⊂ [0, 1]^(n−1)` onto every graph: `E(f) = {(x, f(x)) : x ∈ X}` in δ-cells."""
    if X.dim != family.domain.dim:
        raise InvalidParameterError(f"Base set has dimension {X.dim}, the family has {family.domain.dim} variables")
    x = family.domain.lower + X.centers() * family.domain.sides
    values = family.values(x)
    sets = []
    for j in range(len(family)):
        rows = np.clip(np.floor(values[:, j] * (1 << X.scale)), 0, (1 << X.scale) - 1).astype(np.int64)
        sets.append(DyadicSet(X.dim + 1, X.scale, np.concatenate([X.cells, rows[:, None]], axis=1)))
    return sets


@dataclass(frozen=True, slots=True)
class Configuration:
    """A validated family with one graph-aligned set of exactly `M` cells per member."""

    family: FunctionFamily
    sets: list[DyadicSet]
    params: ConfigParams
    M: int
    distances: FloatArray
    family_spread: SpreadReport
    set_spreads: list[SpreadReport]

    @property
    def n(self) -> int:
        """Return the ambient dimension."""
        return self.family.domain.dim + 1

    @property
    def delta(self) -> float:
        """Return δ."""
        return self.params.delta


def _check_alignment(family: FunctionFamily, sets: Sequence[DyadicSet], delta: float) -> None:
    """Raise on the first cell that misses the vertical δ-neighborhood of its graph."""
    box = family.domain
    for i, (member, E) in enumerate(zip(family, sets)):
        if not len(E):
            continue
        slope, _, _ = grid_extremum(lambda x: np.linalg.norm(member.gradient(x), axis=-1), box, 33, maximize=True)
        centers = E.centers()
        x = box.lower + centers[:, :-1] * box.sides
        halfdiag = 0.5 * delta * float(np.linalg.norm(box.sides))
        gap = np.abs(member.value(x) - centers[:, -1])
        bad = np.flatnonzero(gap > 1.5 * delta + slope * halfdiag + 1e-12)
        if len(bad):
            cell = tuple(int(c) for c in E.cells[bad[0]])
            raise MisalignedCellError(f"Cell {cell} of E({i}) lies {gap[bad[0]]:.4g} from the graph", i, cell)


def _thin(E: DyadicSet, M: int) -> DyadicSet:
    """Keep `M` cells evenly spaced in sorted order."""
    if len(E) == M:
        return E
    return E.select((np.arange(M) * len(E)) // M)


def build_configuration(
    family: FunctionFamily, sets: Sequence[DyadicSet], params: ConfigParams, *, threads: int = 1
) -> Configuration:
    """Validate a configuration and trim every set to the common size `M = min |E(f)|`.

    Raises:
        InvalidParameterError: if the counts, dimensions or exponents disagree.
        InvalidScaleError: if a set is not at the configuration scale.
        InvalidFamilyError: if two members are closer than δ in C².
        MisalignedCellError: naming the first cell off its graph.
        SpreadViolationError: naming the witness ball of a set or of the family.
    """
    if len(sets) != len(family):
        raise InvalidParameterError(f"Got {len(sets)} sets for a family of {len(family)} members")
    n = family.domain.dim + 1
    if n not in (2, 3, 4):
        raise InvalidParameterError(f"Configurations live in dimensions 2-4, got {n}")
    if not 0 < params.t <= 1 or not 0 < params.s <= 1:
        raise InvalidParameterError(f"Exponents must lie in (0, 1], got s={params.s}, t={params.t}")
    for i, E in enumerate(sets):
        if E.dim != n:
            raise InvalidParameterError(f"E({i}) has dimension {E.dim}, expected {n}")
        if E.scale != params.scale:
            raise InvalidScaleError(f"E({i}) is at scale {E.scale}, the configuration at {params.scale}")
    delta = params.delta

    distances = pairwise_c2_distances(family, threads=threads)
    separation = _min_separation(distances)
    if separation < delta:
        raise InvalidFamilyError(f"Family is not δ-separated: two members are {separation:.4g} < δ={delta:.4g} apart")
    _check_alignment(family, sets, delta)

    M = min(len(E) for E in sets)
    if M == 0:
        raise InvalidParameterError("Every member needs a non-empty set")
    if any(len(E) != M for E in sets):
        logger.warning("Trimming %d sets to the common size M=%d", sum(len(E) != M for E in sets), M)
    trimmed = [_thin(E, M) for E in sets]

    family_spread = family_spread_constant(family, params.t, delta, distances=distances)
    exponent = n - 2 + params.s
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        set_spreads = list(pool.map(lambda E: spread_constant(E, exponent), trimmed))

    if params.check_spread:
        limit = params.constant
        if family_spread.constant > limit:
            r = family_spread
            raise SpreadViolationError(
                f"Family spread {r.constant:.4g} exceeds C={limit:.4g}", r.center, r.radius, r.constant
            )
        for i, r in enumerate(set_spreads):
            if r.constant > limit:
                raise SpreadViolationError(
                    f"E({i}) spread {r.constant:.4g} exceeds C={limit:.4g}", r.center, r.radius, r.constant
                )
    logger.info("Configuration of %d members with M=%d at δ=2^-%d", len(family), M, params.scale)
    return Configuration(family, trimmed, params, M, distances, family_spread, set_spreads)


def parallel_hyperplane_configuration(
    s: float, t: float, scale: int, n: int = 3, seed: int = 0, *, epsilon: float = DEFAULT_EPSILON
) -> Configuration:
    """Build the sharp example: horizontal hyperplanes at a `(δ, t)`-set of heights carrying `X × {height}`.

    `X` is the full grid in `n − 2` variables times a random `(δ, s)`-set in the last one, so the union
    holds `δ^-(n−2+s+t)` cells up to the randomness of the two spread sets. The configuration
    constant is the largest spread constant measured.
    """
    k = n - 1
    heights = generate_set(RandomSpreadSpec(t, scale, 1, seed)).centers()[:, 0]
    family = FunctionFamily([PolynomialField.constant(float(c), dim=k) for c in heights])
    spread = generate_set(RandomSpreadSpec(s, scale, 1, seed + 1))
    X = spread
    if k > 1:
        grid = generate_set(UniformSetSpec(scale, k - 1))
        left = np.repeat(grid.cells, len(spread), axis=0)
        right = np.tile(spread.cells, (len(grid), 1))
        X = DyadicSet(k, scale, np.concatenate([left, right], axis=1))
    sets = plant_sets(family, X)
    unchecked = build_configuration(family, sets, ConfigParams(scale, s, t, epsilon, check_spread=False))
    C = max([unchecked.family_spread.constant, *(r.constant for r in unchecked.set_spreads)])
    return build_configuration(family, sets, ConfigParams(scale, s, t, epsilon, C=C))


def save_configuration(config: Configuration, directory: Path) -> Path:
    """Write `family.json`, `params.json` and one binary set per member under `directory`."""
    directory.mkdir(parents=True, exist_ok=True)
    write_json(directory / "family.json", family_to_spec(config.family))
    write_json(directory / "params.json", config.params)
    sets_dir = directory / "sets"
    sets_dir.mkdir(exist_ok=True)
    for i, E in enumerate(config.sets):
        write_bytes_atomic(sets_dir / f"{i:03d}.bin", E.to_bytes())
    return directory


def load_configuration(directory: Path, *, threads: int = 1) -> Configuration:
    """Read and revalidate a configuration bundle."""
    family = load_family(directory / "family.json")
    params = msgspec.json.decode((directory / "params.json").read_bytes(), type=ConfigParams)
    paths = sorted((directory / "sets").glob("*.bin"))
    sets = [DyadicSet.from_bytes(p.read_bytes()) for p in paths]
    return build_configuration(family, sets, params, threads=threads)


@dataclass(frozen=True, slots=True)
class CSBound:
    """Cauchy–Schwarz lower bound on the measure of a union."""

    value: float
    degenerate: bool


def cs_union_lower_bound(measures: npt.ArrayLike, overlaps: npt.ArrayLike) -> CSBound:
    """Return `(Σᵢ|Aᵢ|)² / Σᵢⱼ|Aᵢ ∩ Aⱼ|`, a lower bound for `|∪Aᵢ|`.

    Raises:
        InvalidParameterError: if the overlap matrix is not symmetric with the measures on its diagonal.
    """
    a = np.asarray(measures, dtype=np.float64)
    m = np.asarray(overlaps, dtype=np.float64)
    if m.shape != (len(a), len(a)):
        raise InvalidParameterError(f"Overlap matrix has shape {m.shape}, expected {(len(a), len(a))}")
    scale = max(1.0, float(np.abs(m).max(initial=0.0)))
    if not np.allclose(m, m.T, rtol=0, atol=1e-12 * scale) or not np.allclose(np.diag(m), a, rtol=1e-12, atol=0):
        raise InvalidParameterError("Overlap matrix must be symmetric with the set measures on its diagonal")
    denominator = float(m.sum())
    if denominator <= 0:
        return CSBound(0.0, True)
    return CSBound(float(a.sum()) ** 2 / denominator, False)


@dataclass(frozen=True, slots=True)
class EnergyReport:
    """Both sides of the L² identity for `Σ_f χ_{f^δ}` and the energy budget."""

    delta: float
    resolution: float
    lhs: float
    diagonal: float
    off_diagonal: float
    discrepancy: float
    budget: float
    t: float
    epsilon: float
    annuli: dict[int, int]
    annulus_ratios: dict[int, float]
    delta0_ok: bool

    @property
    def pairwise(self) -> float:
        """Return `Σ_f Σ_g |f^δ ∩ g^δ|`."""
        return self.diagonal + self.off_diagonal

    @property
    def within_budget(self) -> bool:
        """Return whether the energy is at most `δ^-2ε |F|² δ^(1+t)`."""
        return self.lhs <= self.budget


def _squared_counting_integral(family: FunctionFamily, delta: float, rho: float) -> float:
    """Integrate `(Σ_f χ_{f^δ})²` with the x-center rule and exactly in the value variable."""
    box = family.domain
    counts = np.maximum(1, np.round(box.sides / rho)).astype(np.int64)
    widths = box.sides / counts
    axes = [box.lo[a] + (np.arange(counts[a]) + 0.5) * widths[a] for a in range(box.dim)]
    m = len(family)
    steps = np.concatenate([np.ones(m), -np.ones(m)])
    chunk = max(1, (1 << 22) // (2 * m))
    total = 0.0
    rows = max(1, chunk // int(np.prod(counts[1:]))) if box.dim > 1 else chunk
    for i in range(0, len(axes[0]), rows):
        mesh = np.meshgrid(axes[0][i : i + rows], *axes[1:], indexing="ij")
        x = np.stack([g.ravel() for g in mesh], axis=-1)
        v = family.values(x)
        events = np.concatenate([v - delta, v + delta], axis=1)
        order = np.argsort(events, axis=1, kind="stable")
        position = np.take_along_axis(events, order, axis=1)
        level = np.cumsum(steps[order], axis=1)
        total += float((level[:, :-1] ** 2 * np.diff(position, axis=1)).sum())
    return total * float(np.prod(widths))


def _annuli(distances: FloatArray, delta: float, t: float) -> tuple[dict[int, int], dict[int, float]]:
    """Bucket pairs by `‖f − g‖ ∈ (2^-(i+1), 2^-i]` and compare `max_f |F_i(f)|` with `2^-it |F|`."""
    m = len(distances)
    top = int(np.floor(np.log2(1 / delta) + 1e-9))
    off = ~np.eye(m, dtype=bool)
    with np.errstate(divide="ignore"):
        bucket = np.clip(np.floor(-np.log2(distances)), 0, top).astype(np.int64)
    annuli: dict[int, int] = {}
    ratios: dict[int, float] = {}
    for i in range(top + 1):
        members = (bucket == i) & off
        pairs = int(members.sum()) // 2
        if pairs:
            annuli[i] = pairs
        sizes = members.sum(axis=1) + (1 if i == top else 0)
        if sizes.max() > 0:
            ratios[i] = float(sizes.max()) / (2.0 ** (-i * t) * m)
    return annuli, ratios


def l2_energy(
    family: FunctionFamily,
    delta: float,
    resolution: float | None = None,
    *,
    t: float,
    epsilon: float = DEFAULT_EPSILON,
    threads: int = 1,
) -> EnergyReport:
    """Compute `∫(Σ_f χ_{f^δ})²` directly and as `Σ_f Σ_g |f^δ ∩ g^δ|`.

    The direct integral sweeps the sorted slab endpoints over each x-cell; the pairwise sum uses
    `intersection_measure` at the same resolution. The budget is `δ^-2ε |F|² δ^(1+t)`.

    Raises:
        InvalidFamilyError: if two members are closer than δ in C².
    """
    rho = resolution or delta / 8
    distances = pairwise_c2_distances(family, threads=threads)
    separation = _min_separation(distances)
    if separation < delta:
        raise InvalidFamilyError(f"Family is not δ-separated: two members are {separation:.4g} < δ={delta:.4g} apart")

    lhs = _squared_counting_integral(family, delta, rho)
    diagonal = sum(Slab(f, delta).measure() for f in family)
    pairs = list(itertools.combinations(range(len(family)), 2))

    def overlap(pair: tuple[int, int]) -> float:
        i, j = pair
        return intersection_measure(family[i], family[j], delta, resolution=rho, analyse=False).measure

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        measures = list(pool.map(overlap, pairs))
    off_diagonal = 2 * float(sum(measures))
    pairwise = diagonal + off_diagonal
    discrepancy = abs(lhs - pairwise) / pairwise if pairwise > 0 else 0.0

    annuli, ratios = _annuli(distances, delta, t)
    delta0_ok = 2 * np.log2(1 / delta) < delta**-epsilon
    if not delta0_ok:
        logger.warning("2·log(1/δ) < δ^-ε fails at δ=%.4g, ε=%.3g", delta, epsilon)
    budget = delta ** (-2 * epsilon) * len(family) ** 2 * delta ** (1 + t)
    return EnergyReport(
        delta, rho, lhs, diagonal, off_diagonal, discrepancy, budget, t, epsilon, annuli, ratios, bool(delta0_ok)
    )


@dataclass(frozen=True, slots=True)
class IncidenceReport:
    """Union covering number of a configuration against the incidence lower bound."""

    union: int
    bound: float
    passed: bool
    set_measures: float
    pairwise_overlap: float
    overlap_budget: float
    cs_bound: CSBound
    cs_cells: float
    delta0_ok: bool
    expected_exponent: float
    measured_exponent: float


def _overlap_matrix(config: Configuration) -> FloatArray:
    """Return `|E(f) ∩ E(g)|_δ` for all pairs; the diagonal is `M`."""
    keys = [E.keys() for E in config.sets]
    m = len(keys)
    overlaps = np.diag(np.array([len(k) for k in keys], dtype=np.float64))
    for i, j in itertools.combinations(range(m), 2):
        overlaps[i, j] = overlaps[j, i] = len(np.intersect1d(keys[i], keys[j], assume_unique=True))
    return overlaps


def incidence_lower_bound_check(
    config: Configuration, epsilon: float | None = None, *, C: float = 1.0
) -> IncidenceReport:
    """Compare `|∪_f E(f)|_δ` with `δ^(16ε − t − (n−2+s))`.

    The δ-neighborhood of each set is its union of cells, so every measure is a cell count times `δⁿ`
    and the Cauchy–Schwarz bound converts exactly into a cell count.

    Raises:
        OutOfRegimeError: if `t > s`.
    """
    p = config.params
    eps = p.epsilon if epsilon is None else epsilon
    if p.t > p.s:
        raise OutOfRegimeError(f"The incidence bound needs t ≤ s, got t={p.t}, s={p.s}")
    delta, n = p.delta, config.n
    union = len(np.unique(np.concatenate([E.keys() for E in config.sets])))
    bound = delta ** (16 * eps - p.t - (n - 2 + p.s))

    volume = delta**n
    overlaps = _overlap_matrix(config)
    cs = cs_union_lower_bound(np.diag(overlaps) * volume, overlaps * volume)
    pairwise = float((overlaps.sum() - np.trace(overlaps)) * volume)
    delta0_ok = bool(2 * C * np.log2(1 / delta) < 0.5 * delta**-eps)
    if not delta0_ok:
        logger.warning("2C·log(1/δ) < δ^-ε/2 fails at δ=%.4g, ε=%.3g, C=%.3g", delta, eps, C)
    return IncidenceReport(
        union=union,
        bound=bound,
        passed=union >= bound,
        set_measures=float(np.trace(overlaps) * volume),
        pairwise_overlap=pairwise,
        overlap_budget=delta ** (-6 * eps) * delta ** (2 - p.t - p.s),
        cs_bound=cs,
        cs_cells=cs.value / volume,
        delta0_ok=delta0_ok,
        expected_exponent=furstenberg_exponent(n, p.s, p.t),
        measured_exponent=float(np.log2(union) / p.scale),
    )


@dataclass(frozen=True, slots=True)
class OverlapReport:
    """Overlap of two sets of a configuration with the non-concentration of their projection."""

    i: int
    j: int
    overlap: float
    t: float
    reference: float
    ratio: float
    projection_spread: SpreadReport
    projection_ok: bool
    shape: ShapeCountReport


def neighborhood_overlap(config: Configuration, i: int, j: int) -> OverlapReport:
    """Measure `|E^δ(f) ∩ E^δ(g)|` and compare it with `δ^-3ε δ² / ‖f − g‖^s`.

    `E^δ` is read as the union of the set's own δ-cells, so the overlap is `δ^n` times the number of
    cells the two sets share; no neighborhood beyond the cells is added.

    The projection of `E(f)` to the base is checked for spread at exponent `n − 2 + s` against
    `δ^-3ε`, and its cells over `P_{f,g}` are counted.

    Raises:
        InvalidParameterError: if `i == j`.
    """
    if i == j:
        raise InvalidParameterError("Overlap needs two distinct members")
    p, n, delta = config.params, config.n, config.delta
    E, F = config.sets[i], config.sets[j]
    shared = len(np.intersect1d(E.keys(), F.keys(), assume_unique=True))
    overlap = shared * delta**n
    t = float(config.distances[i, j])
    reference = delta ** (-3 * p.epsilon) * delta**2 / t**p.s
    projection = DyadicSet(n - 1, E.scale, E.cells[:, :-1])
    spread = spread_constant(projection, n - 2 + p.s)
    shape = shape_count(
        projection, config.family[i], config.family[j], delta, s=p.s, epsilon=3 * p.epsilon, spread=spread
    )
    return OverlapReport(
        i, j, overlap, t, reference, overlap / reference, spread, spread.constant <= delta ** (-3 * p.epsilon), shape
    )

