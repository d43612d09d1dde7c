"""δ-discretized sets on the unit cube: covering numbers, spread constants and test-set generators."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import TYPE_CHECKING

import msgspec
import numpy as np
from scipy.spatial import cKDTree
from typing_extensions import Self, override

from pycinematic.errors import InvalidParameterError, InvalidScaleError, TooFineError
from pycinematic.grids import Box, FloatArray, IntArray

if TYPE_CHECKING:
    import numpy.typing as npt

logger = logging.getLogger(__name__)

MAX_SCALE: dict[int, int] = {1: 16, 2: 16, 3: 12, 4: 10}
"""Finest scale exponent representable per dimension."""

MAX_CELLS: int = 1 << 24
"""Largest number of cells a generator may materialize."""

HEADER = np.dtype("<u4")


class DyadicSetRecord(msgspec.Struct, frozen=True):
    """JSON form of a dyadic set."""

    dim: int
    scale: int
    cells: list[list[int]]


class DyadicSet:
    """Occupied dyadic cells of side `2^-scale` in `[0, 1]^dim`, stored sorted and unique."""

    __slots__ = ("dim", "scale", "cells")

    def __init__(self, dim: int, scale: int, cells: npt.ArrayLike = ()) -> None:
        """Validate, deduplicate and sort the cells."""
        if dim not in MAX_SCALE:
            raise InvalidParameterError(f"Dyadic sets live in dimensions 1-4, got {dim}")
        if scale < 0:
            raise InvalidScaleError(f"Scale exponent must be non-negative, got {scale}")
        if scale > MAX_SCALE[dim]:
            raise TooFineError(f"Scale 2^-{scale} exceeds the cap 2^-{MAX_SCALE[dim]} for dimension {dim}")
        arr = np.asarray(cells, dtype=np.int64).reshape(-1, dim)
        if arr.size and (arr.min() < 0 or arr.max() >= 1 << scale):
            raise InvalidParameterError(f"Cell coordinates must lie in [0, {1 << scale}) at scale {scale}")
        self.dim: int = dim
        self.scale: int = scale
        self.cells: IntArray = np.unique(arr, axis=0) if len(arr) else arr
        self.cells.flags.writeable = False

    @classmethod
    def full(cls, dim: int, scale: int) -> Self:
        """Return every cell of the unit cube at `scale`."""
        if (1 << scale) ** dim > MAX_CELLS:
            raise TooFineError(f"The full grid 2^-{scale} in dimension {dim} has more than {MAX_CELLS} cells")
        axes = np.meshgrid(*([np.arange(1 << scale)] * dim), indexing="ij")
        return cls(dim, scale, np.stack([a.ravel() for a in axes], axis=-1))

    @classmethod
    def from_points(cls, points: npt.ArrayLike, scale: int) -> Self:
        """Return the cells containing the given points of `[0, 1]^dim`."""
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        cells = np.clip(np.floor(p * (1 << scale)), 0, (1 << scale) - 1).astype(np.int64)
        return cls(p.shape[1], scale, cells)

    @property
    def delta(self) -> float:
        """Return the cell side `2^-scale`."""
        return 2.0**-self.scale

    def __len__(self) -> int:
        """Return `|E|_δ`, the number of cells."""
        return len(self.cells)

    @override
    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DyadicSet):
            return NotImplemented
        return self.dim == other.dim and self.scale == other.scale and np.array_equal(self.cells, other.cells)

    @override
    def __hash__(self) -> int:
        return hash((self.dim, self.scale, self.cells.tobytes()))

    @override
    def __repr__(self) -> str:
        return f"DyadicSet(dim={self.dim}, scale={self.scale}, count={len(self)})"

    def keys(self) -> IntArray:
        """Return flat integer keys, increasing with the cell order."""
        if not len(self):
            return np.zeros(0, dtype=np.int64)
        return np.ravel_multi_index(tuple(self.cells.T), (1 << self.scale,) * self.dim).astype(np.int64)

    @classmethod
    def from_keys(cls, dim: int, scale: int, keys: npt.ArrayLike) -> Self:
        """Inverse of `keys`."""
        k = np.asarray(keys, dtype=np.int64)
        if not k.size:
            return cls(dim, scale)
        return cls(dim, scale, np.stack(np.unravel_index(k, (1 << scale,) * dim), axis=-1))

    def coarsen(self, scale: int) -> DyadicSet:
        """Return the parent cells at a coarser `scale`.

        Raises:
            InvalidScaleError: if `scale` is finer than the set's own scale.
        """
        if scale > self.scale:
            raise InvalidScaleError(f"Cannot coarsen scale {self.scale} to the finer scale {scale}")
        if scale < 0:
            raise InvalidScaleError(f"Scale exponent must be non-negative, got {scale}")
        return DyadicSet(self.dim, scale, self.cells >> (self.scale - scale))

    def refine(self, scale: int) -> DyadicSet:
        """Return every descendant cell at a finer `scale`."""
        if scale < self.scale:
            raise InvalidScaleError(f"Cannot refine scale {self.scale} to the coarser scale {scale}")
        shift = scale - self.scale
        if len(self) * (1 << (shift * self.dim)) > MAX_CELLS:
            raise TooFineError(f"Refining {len(self)} cells by {shift} levels exceeds {MAX_CELLS} cells")
        offsets = np.stack(np.meshgrid(*([np.arange(1 << shift)] * self.dim), indexing="ij"), axis=-1)
        offsets = offsets.reshape(-1, self.dim)
        children = (self.cells[:, None, :] << shift) + offsets[None]
        return DyadicSet(self.dim, scale, children.reshape(-1, self.dim))

    def _common(self, other: DyadicSet) -> tuple[IntArray, IntArray]:
        if self.dim != other.dim or self.scale != other.scale:
            raise InvalidScaleError(
                f"Sets differ in dimension or scale: ({self.dim}, {self.scale}) vs ({other.dim}, {other.scale})"
            )
        return self.keys(), other.keys()

    def union(self, other: DyadicSet) -> DyadicSet:
        """Return the cells of either set."""
        a, b = self._common(other)
        return DyadicSet.from_keys(self.dim, self.scale, np.union1d(a, b))

    def intersection(self, other: DyadicSet) -> DyadicSet:
        """Return the cells of both sets."""
        a, b = self._common(other)
        return DyadicSet.from_keys(self.dim, self.scale, np.intersect1d(a, b, assume_unique=True))

    def difference(self, other: DyadicSet) -> DyadicSet:
        """Return the cells of this set missing from `other`."""
        a, b = self._common(other)
        return DyadicSet.from_keys(self.dim, self.scale, np.setdiff1d(a, b, assume_unique=True))

    def select(self, indices: npt.ArrayLike) -> DyadicSet:
        """Return the cells at `indices` of the sorted order."""
        return DyadicSet(self.dim, self.scale, self.cells[np.asarray(indices, dtype=np.int64)])

    def centers(self) -> FloatArray:
        """Return the cell centers in `[0, 1]^dim`."""
        return (self.cells + 0.5) * self.delta

    def bounding_box(self) -> Box | None:
        """Return the smallest box of whole cells containing the set, None when empty."""
        if not len(self):
            return None
        lo = self.cells.min(axis=0) * self.delta
        hi = (self.cells.max(axis=0) + 1) * self.delta
        return Box(tuple(lo.tolist()), tuple(hi.tolist()))

    def to_bytes(self) -> bytes:
        """Encode as a `(dim, scale, count)` little-endian u32 header followed by u32 coordinates."""
        header = np.array([self.dim, self.scale, len(self)], dtype=HEADER)
        return header.tobytes() + self.cells.astype(HEADER).tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> Self:
        """Decode the binary form.

        Raises:
            InvalidParameterError: if the payload length disagrees with the header.
        """
        if len(data) < 12:
            raise InvalidParameterError(f"Binary set needs a 12-byte header, got {len(data)} bytes")
        dim, scale, count = (int(v) for v in np.frombuffer(data[:12], dtype=HEADER))
        body = np.frombuffer(data[12:], dtype=HEADER)
        if body.size != dim * count:
            raise InvalidParameterError(f"Header announces {count} cells of dimension {dim}, found {body.size} values")
        return cls(dim, scale, body.astype(np.int64).reshape(count, dim))

    def to_record(self) -> DyadicSetRecord:
        """Return the JSON record."""
        return DyadicSetRecord(self.dim, self.scale, self.cells.tolist())

    @classmethod
    def from_record(cls, record: DyadicSetRecord) -> Self:
        """Build a set from its JSON record."""
        return cls(record.dim, record.scale, np.asarray(record.cells, dtype=np.int64).reshape(-1, record.dim))


def covering_number(cells: DyadicSet, at_scale: int | None = None) -> int:
    """Return the exact number of cells of side `2^-at_scale` meeting the set.

    Raises:
        InvalidScaleError: if `at_scale` is finer than the set's scale.
    """
    if at_scale is None or at_scale == cells.scale:
        return len(cells)
    return len(cells.coarsen(at_scale))


@dataclass(frozen=True, slots=True)
class SpreadReport:
    """Smallest C with `|P ∩ B(x,r)|_δ ≤ C r^s |P|_δ` over the tested balls, and the witness ball."""

    exponent: float
    constant: float
    center: tuple[float, ...]
    radius: float
    cardinality: int
    per_radius: list[tuple[float, float]]


MAX_CENTERS: int = 1 << 18
"""Most ball centers tried per radius; the center grid coarsens beyond it."""

MAX_BALL_WORK: int = 1 << 26
"""Budget for centers times cells per ball at one radius."""


def _center_grid(box: Box, delta: float, radius: float, load: int) -> FloatArray:
    """Return the half-δ grid over `box`, coarsened to stay within the work budgets."""
    budget = max(1, min(MAX_CENTERS, MAX_BALL_WORK // max(1, load)))
    step = delta / 2
    while np.prod(np.rint(box.sides / step) + 1) > budget and step < box.diameter:
        step *= 2
    if step > delta / 2:
        logger.debug("Ball centers at radius %.4g use step %.4g instead of δ/2", radius, step)
    axes = [lo + step * np.arange(int(np.rint(side / step)) + 1) for lo, side in zip(box.lo, box.sides)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _radius_worst(tree: cKDTree, P: DyadicSet, box: Box, j: int, s: float) -> tuple[float, FloatArray, int]:
    radius = 2.0**-j
    reach = radius * (1 + 1e-12)
    parents = P.coarsen(min(P.scale, j + 1)).centers()
    load = int(np.max(tree.query_ball_point(parents, reach, return_length=True)))
    grid = _center_grid(box, P.delta, radius, load)
    nearest, _ = tree.query(grid, distance_upper_bound=reach)
    centers = np.concatenate([parents, grid[np.isfinite(nearest)]])
    counts = np.asarray(tree.query_ball_point(centers, reach, return_length=True))
    i = int(np.argmax(counts))
    return float(counts[i]) / (radius**s * len(P)), centers[i], int(counts[i])


def spread_constant(P: DyadicSet, s: float, *, threads: int = 1) -> SpreadReport:
    """Measure the spread constant of `P` at exponent `s`.

    Balls are closed and Euclidean with radii `2^-j` from 1 down to δ. Centers run over the half-δ grid
    of P's bounding box (every δ-grid vertex and cell center) wherever the ball reaches a cell, plus the
    centers of P's parent cells; very large sets get a coarser grid at wide radii. A cell counts when its
    center lies in the ball.

    Raises:
        InvalidParameterError: if `P` is empty.
    """
    if not len(P):
        raise InvalidParameterError("The spread constant of an empty set is undefined")
    tree = cKDTree(P.centers())
    box = P.bounding_box() or Box.unit(P.dim)
    levels = list(range(P.scale + 1))
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(lambda j: _radius_worst(tree, P, box, j, s), levels))
    per_radius = [(2.0**-j, ratio) for j, (ratio, _, _) in zip(levels, results)]
    best = int(np.argmax([ratio for ratio, _, _ in results]))
    ratio, center, _ = results[best]
    return SpreadReport(s, ratio, tuple(center.tolist()), 2.0**-levels[best], len(P), per_radius)


def _rank_within_groups(groups: IntArray) -> IntArray:
    """Return each element's position inside its run of equal, already sorted group ids."""
    if not len(groups):
        return groups
    starts = np.r_[0, np.flatnonzero(groups[1:] != groups[:-1]) + 1]
    run = np.cumsum(np.r_[0, (groups[1:] != groups[:-1]).astype(np.int64)])
    return np.arange(len(groups)) - starts[run]


def extract_spread_subset(P: DyadicSet, t: float, *, threads: int = 1) -> tuple[DyadicSet, SpreadReport]:
    """Select a subset of `P` that is spread at exponent `t` by top-down dyadic pigeonholing.

    Level `ℓ` keeps at most `⌈2^(tℓ)⌉` cells, split evenly among the surviving parents; each parent
    keeps the children with the most descendants in P. When the selection measures worse than P
    itself, P is returned.

    Raises:
        InvalidParameterError: if `P` is empty.
    """
    if not len(P):
        raise InvalidParameterError("Cannot extract a subset of an empty set")
    survivors = np.zeros(1, dtype=np.int64)
    for level in range(1, P.scale + 1):
        coarse = P.cells >> (P.scale - level)
        children, counts = np.unique(coarse, axis=0, return_counts=True)
        parents = np.ravel_multi_index(tuple((children >> 1).T), (1 << (level - 1),) * P.dim)
        alive = np.isin(parents, survivors)
        children, counts, parents = children[alive], counts[alive], parents[alive]
        quota = int(np.ceil(np.ceil(2.0 ** (t * level)) / len(survivors)))
        order = np.lexsort((-counts, parents))
        keep = order[_rank_within_groups(parents[order]) < max(quota, 1)]
        survivors = np.sort(np.ravel_multi_index(tuple(children[keep].T), (1 << level,) * P.dim))
    subset = DyadicSet.from_keys(P.dim, P.scale, survivors)
    report = spread_constant(subset, t, threads=threads)
    original = spread_constant(P, t, threads=threads)
    logger.debug(
        "Extracted %d of %d cells, spread %.4g vs %.4g", len(subset), len(P), report.constant, original.constant
    )
    if original.constant < report.constant:
        return P, original
    return subset, report


class CantorSetSpec(msgspec.Struct, frozen=True, tag="cantor", tag_field="kind"):
    """Self-similar Cantor set keeping the two end intervals of ratio `ratio` per axis."""

    ratio: float = 0.25
    depth: int = 6
    dim: int = 1


class ProductSetSpec(msgspec.Struct, frozen=True, tag="product", tag_field="kind"):
    """Cartesian product of sets at the same scale."""

    factors: list[SetSpec]


class UniformSetSpec(msgspec.Struct, frozen=True, tag="uniform", tag_field="kind"):
    """Every cell of the unit cube."""

    scale: int
    dim: int = 1


class RandomSpreadSpec(msgspec.Struct, frozen=True, tag="random_spread", tag_field="kind"):
    """A seeded random set branching `2^s` times per level on average."""

    s: float
    scale: int
    dim: int = 1
    seed: int = 0


SetSpec = CantorSetSpec | ProductSetSpec | UniformSetSpec | RandomSpreadSpec


def _cantor(ratio: float, depth: int, dim: int) -> DyadicSet:
    p = -np.log2(ratio)
    if ratio <= 0 or ratio > 0.5 or abs(p - round(p)) > 1e-9:
        raise InvalidParameterError(f"Cantor ratio must be 2^-p with p ≥ 1, got {ratio}")
    p = round(p)
    scale = p * depth
    if dim not in MAX_SCALE or scale > MAX_SCALE[dim]:
        raise TooFineError(f"Cantor set of depth {depth} and ratio {ratio} needs scale {scale} in dimension {dim}")
    if depth < 0:
        raise InvalidParameterError(f"Depth must be non-negative, got {depth}")
    coords = np.zeros(1, dtype=np.int64)
    for _ in range(depth):
        coords = np.concatenate([coords << p, (coords << p) + (1 << p) - 1])
    axes = np.meshgrid(*([coords] * dim), indexing="ij")
    return DyadicSet(dim, scale, np.stack([a.ravel() for a in axes], axis=-1))


def _product(factors: list[DyadicSet]) -> DyadicSet:
    if not factors:
        raise InvalidParameterError("A product needs at least one factor")
    scales = {f.scale for f in factors}
    if len(scales) != 1:
        raise InvalidScaleError(f"Product factors must share one scale, got {sorted(scales)}")
    dim = sum(f.dim for f in factors)
    total = int(np.prod([len(f) for f in factors]))
    if total > MAX_CELLS:
        raise TooFineError(f"Product would hold {total} cells, more than {MAX_CELLS}")
    cells = factors[0].cells
    for factor in factors[1:]:
        left = np.repeat(cells, len(factor), axis=0)
        right = np.tile(factor.cells, (len(cells), 1))
        cells = np.concatenate([left, right], axis=1)
    return DyadicSet(dim, scales.pop(), cells)


def _random_spread(s: float, scale: int, dim: int, seed: int) -> DyadicSet:
    if not 0 <= s <= dim:
        raise InvalidParameterError(f"Spread exponent must lie in [0, {dim}], got {s}")
    if dim not in MAX_SCALE or scale > MAX_SCALE[dim]:
        raise TooFineError(f"Scale {scale} exceeds the cap for dimension {dim}")
    rng = np.random.default_rng(seed)
    branching = 1 << dim
    offsets = np.stack(np.meshgrid(*([np.arange(2)] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    cells = np.zeros((1, dim), dtype=np.int64)
    budget = np.array([2.0 ** (s * scale)])
    for level in range(1, scale + 1):
        remaining = scale - level
        wanted = budget / 2.0 ** (s * remaining)
        counts = np.floor(wanted) + (rng.random(len(wanted)) < wanted - np.floor(wanted))
        counts = np.clip(counts, 1, branching).astype(np.int64)
        ranks = np.argsort(np.argsort(rng.random((len(cells), branching)), axis=1), axis=1)
        keep = ranks < counts[:, None]
        parent, child = np.nonzero(keep)
        cells = (cells[parent] << 1) + offsets[child]
        budget = (budget / counts)[parent]
        if len(cells) > MAX_CELLS:
            raise TooFineError(f"Random set grew beyond {MAX_CELLS} cells")
    return DyadicSet(dim, scale, cells)


def generate_set(spec: SetSpec) -> DyadicSet:
    """Build a test set; deterministic given the spec and its seed.

    Raises:
        TooFineError: if the set needs a scale beyond `MAX_SCALE` or too many cells.
        InvalidScaleError: if product factors disagree in scale.
    """
    match spec:
        case CantorSetSpec(ratio=ratio, depth=depth, dim=dim):
            return _cantor(ratio, depth, dim)
        case ProductSetSpec(factors=factors):
            return _product([generate_set(f) for f in factors])
        case UniformSetSpec(scale=scale, dim=dim):
            return DyadicSet.full(dim, scale)
        case RandomSpreadSpec(s=s, scale=scale, dim=dim, seed=seed):
            return _random_spread(s, scale, dim, seed)
    raise InvalidParameterError(f"Unknown set spec {spec!r}")
