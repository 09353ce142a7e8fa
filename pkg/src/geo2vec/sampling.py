"""Boundary-aware adaptive sampling of signed-distance training points.

Three stages per entity: Gaussian clouds around vertices, stochastic
perpendicular offsets along edges, and a uniform grid over the domain.
Per-vertex and per-edge counts scale with a resolution parameter and a
data-estimated deviation sigma, so sampling effort concentrates where
the field varies fastest.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterator, Sequence

import numpy as np

from .geometry import (
    BBox,
    GeoEntity,
    GeometryError,
    SdfSample,
    min_entity_distance,
    normalize_shape,
    sdf_many,
)

__all__ = [
    "SamplingParams",
    "SampleSet",
    "TrainingSet",
    "SigmaEstimationError",
    "estimate_sigma_loc",
    "estimate_sigma_shp",
    "sample_vertex",
    "sample_edge",
    "sample_space",
    "build_training_set",
    "CANONICAL_BBOX",
]

CANONICAL_BBOX = BBox(-1.0, -1.0, 1.0, 1.0)


class SigmaEstimationError(ValueError):
    pass


@dataclass(frozen=True)
class SamplingParams:
    """Knobs for the three-stage sampler.

    sigma None means "estimate from the dataset" (done by the trainer).
    exact_counts switches the per-vertex/per-edge budgets from the
    simplified linear forms to the quadratic area/band forms.
    """

    sigma: float | None = None
    epsilon: float = 100.0
    n_axis: int = 8
    k: int = 5
    subset: int = 1000
    seed: int = 0
    exact_counts: bool = False

    def __post_init__(self):
        if self.sigma is not None and self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.n_axis < 2:
            raise ValueError("n_axis must be >= 2")
        if self.k < 1:
            raise ValueError("k must be >= 1")

    def with_sigma(self, sigma: float) -> "SamplingParams":
        return replace(self, sigma=sigma)

    def vertex_count(self, sigma: float) -> int:
        if self.exact_counts:
            return max(1, int(np.rint(np.pi * sigma**2 * self.epsilon**2)))
        return max(1, int(np.rint(self.epsilon * sigma)))

    def edge_count(self, sigma: float, edge_len: float) -> int:
        if self.exact_counts:
            return max(1, int(np.rint(2.0 * sigma * edge_len * self.epsilon**2)))
        return max(1, int(np.rint(self.epsilon * edge_len)))


class SampleSet:
    """A batch of SdfSample values stored as arrays.

    Behaves as a sequence of SdfSample while keeping positions and
    distances in contiguous float64 arrays for vectorized consumers.
    """

    def __init__(self, positions: np.ndarray, signed_distances: np.ndarray):
        self.positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
        self.signed_distances = np.asarray(signed_distances, dtype=np.float64).reshape(-1)
        if self.positions.shape[0] != self.signed_distances.shape[0]:
            raise ValueError("positions/distances length mismatch")

    @classmethod
    def empty(cls) -> "SampleSet":
        return cls(np.empty((0, 2)), np.empty(0))

    @classmethod
    def for_entity(cls, positions: np.ndarray, entity: GeoEntity) -> "SampleSet":
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
        return cls(positions, sdf_many(positions, entity) if len(positions) else np.empty(0))

    def __len__(self) -> int:
        return self.positions.shape[0]

    def __getitem__(self, i: int) -> SdfSample:
        return SdfSample(self.positions[i], float(self.signed_distances[i]))

    def __iter__(self) -> Iterator[SdfSample]:
        return (self[i] for i in range(len(self)))

    @staticmethod
    def concat(sets: Sequence["SampleSet"]) -> "SampleSet":
        if not sets:
            return SampleSet.empty()
        return SampleSet(np.concatenate([s.positions for s in sets]),
                         np.concatenate([s.signed_distances for s in sets]))


@dataclass(frozen=True)
class TrainingSet:
    """Per-entity samples partitioned by origin."""

    entity_id: str
    vertex: SampleSet
    edge: SampleSet
    space: SampleSet
    n_per_vertex: int
    n_per_edge: tuple[int, ...]  # one entry per edge

    def combined(self) -> SampleSet:
        return SampleSet.concat([self.vertex, self.edge, self.space])

    def __len__(self) -> int:
        return len(self.vertex) + len(self.edge) + len(self.space)


# -- sigma estimation ----------------------------------------------------------


def _std_with_fallback(distances: np.ndarray, what: str) -> float:
    """Population std of the pooled distances; a degenerate (zero-spread)
    distribution falls back to the mean, and an all-zero pool is an error."""
    if distances.size == 0:
        raise SigmaEstimationError(f"no distances available for {what}")
    std = float(np.std(distances))
    if std > 0.0:
        return std
    mean = float(np.mean(distances))
    if mean > 0.0:
        return mean
    raise SigmaEstimationError(f"all {what} distances are zero")


def _select_subset(n: int, subset: int, rng) -> np.ndarray:
    if subset >= n:
        return np.arange(n)
    return np.sort(rng.choice(n, size=subset, replace=False))


def estimate_sigma_loc(entities: Sequence[GeoEntity], k: int = 5,
                       subset: int = 1000, seed: int = 0) -> float:
    """Sampling deviation for location learning: spread of the pooled
    k-nearest-neighbor distances, by boundary-to-boundary metric."""
    n = len(entities)
    if n < 2:
        raise SigmaEstimationError("need at least 2 entities for sigma_loc")
    rng = _rng(seed, "sigma_loc")
    chosen = _select_subset(n, subset, rng)
    pooled = []
    kk = min(k, n - 1)
    for i in chosen:
        dists = np.array([min_entity_distance(entities[i], entities[j])
                          for j in range(n) if j != i])
        dists.sort()
        pooled.append(dists[:kk])
    return _std_with_fallback(np.concatenate(pooled), "neighbor")


def _edges_with_adjacency(entity: GeoEntity) -> tuple[np.ndarray, list[set[int]]]:
    """Edges of one entity plus, per edge, the indices it shares a vertex
    with.  Ring edges wrap; edges of different rings are never adjacent."""
    segs = []
    adjacency: list[set[int]] = []
    offset = 0

    def add_ring(count: int, closed: bool):
        nonlocal offset
        for i in range(count):
            neigh = set()
            if closed:
                neigh = {offset + (i - 1) % count, offset + (i + 1) % count}
            else:
                if i > 0:
                    neigh.add(offset + i - 1)
                if i < count - 1:
                    neigh.add(offset + i + 1)
            neigh.discard(offset + i)
            adjacency.append(neigh)
        offset += count

    if entity.kind == "polyline":
        v = entity.line
        segs.append(np.stack([v[:-1], v[1:]], axis=1))
        add_ring(v.shape[0] - 1, closed=False)
    elif entity.is_areal:
        for poly in entity.polygons:
            for ring in poly.rings():
                v = ring.vertices
                segs.append(np.stack([v, np.roll(v, -1, axis=0)], axis=1))
                add_ring(v.shape[0], closed=True)
    if not segs:
        return np.empty((0, 2, 2)), []
    return np.concatenate(segs), adjacency


def _seg_min_dist(a: np.ndarray, b: np.ndarray) -> float:
    from .geometry import _segment_pair_min
    return _segment_pair_min(a[None], b[None])


def estimate_sigma_shp(entities: Sequence[GeoEntity], k: int = 5,
                       subset: int = 1000, seed: int = 0) -> float:
    """Sampling deviation for shape learning: spread of each edge's
    distances to its k nearest non-adjacent edges within the same entity,
    measured in the entity's shape-canonical space."""
    eligible = [e for e in entities
                if e.kind != "point" and len(_edges_with_adjacency(e)[1]) >= 2]
    if not eligible:
        raise SigmaEstimationError("no polyline/polygon entities with >= 2 edges")
    rng = _rng(seed, "sigma_shp")
    chosen = _select_subset(len(eligible), subset, rng)
    pooled = []
    for idx in chosen:
        canon, _ = normalize_shape(eligible[idx])
        segs, adjacency = _edges_with_adjacency(canon)
        m = segs.shape[0]
        for i in range(m):
            others = [j for j in range(m) if j != i and j not in adjacency[i]]
            if not others:
                continue
            dists = np.sort(np.array([_seg_min_dist(segs[i], segs[j]) for j in others]))
            pooled.append(dists[: min(k, len(dists))])
    if not pooled:
        raise SigmaEstimationError("no non-adjacent edge pairs in the dataset")
    return _std_with_fallback(np.concatenate(pooled), "edge")


def _rng(seed, label):
    from .seeding import spawn_rng
    return spawn_rng(seed, label)


# -- the three sampling stages ---------------------------------------------------


def sample_vertex(v, entity: GeoEntity, sigma: float, n: int,
                  rng: np.random.Generator) -> SampleSet:
    """n positions from an isotropic Gaussian around the vertex."""
    if n == 0:
        return SampleSet.empty()
    v = np.asarray(v, dtype=np.float64).reshape(2)
    positions = v[None, :] + rng.normal(0.0, sigma, size=(n, 2))
    return SampleSet.for_entity(positions, entity)


def sample_edge(a, b, entity: GeoEntity, sigma: float, n: int,
                rng: np.random.Generator) -> SampleSet:
    """n stochastic perpendicular samples along the edge [a, b]:
    x' = (1-f) a + f b + s * d * n_hat with f ~ U(0,1), d ~ N(0, sigma^2),
    s ~ U{-1,+1} and n_hat the unit normal of b - a."""
    a = np.asarray(a, dtype=np.float64).reshape(2)
    b = np.asarray(b, dtype=np.float64).reshape(2)
    delta = b - a
    length = float(np.linalg.norm(delta))
    if length == 0.0:
        raise GeometryError("degenerate edge: endpoints coincide")
    if n == 0:
        return SampleSet.empty()
    normal = np.array([-delta[1], delta[0]]) / length
    f = rng.uniform(0.0, 1.0, size=n)
    d = rng.normal(0.0, sigma, size=n)
    s = rng.integers(0, 2, size=n) * 2 - 1
    positions = (1.0 - f)[:, None] * a + f[:, None] * b + (s * d)[:, None] * normal
    return SampleSet.for_entity(positions, entity)


def sample_space(domain: BBox, entity: GeoEntity, n_axis: int) -> SampleSet:
    """n_axis^2 uniform grid samples over the domain, endpoints included."""
    if n_axis < 2:
        raise ValueError("n_axis must be >= 2")
    return SampleSet.for_entity(domain.grid(n_axis), entity)


def build_training_set(entity: GeoEntity, params: SamplingParams, mode: str,
                       domain: BBox | None = None,
                       rng: np.random.Generator | None = None) -> TrainingSet:
    """All three stages for one entity (already in its canonical space).

    Per-vertex count is max(1, round(epsilon * sigma)) and per-edge count
    max(1, round(epsilon * edge_length)) unless exact_counts is set.
    mode picks the default space-sampling domain: the canonical square
    for "shape", the dataset canonical bbox (passed via `domain`) for
    "location".
    """
    if mode not in ("shape", "location"):
        raise ValueError(f"unknown sampling mode {mode!r}")
    if params.sigma is None:
        raise ValueError("sampling requires a concrete sigma (estimate it first)")
    if rng is None:
        rng = _rng(params.seed, f"sample:{entity.id}")
    if domain is None:
        domain = CANONICAL_BBOX
    sigma = params.sigma

    n_vertex = params.vertex_count(sigma)
    vertex_sets = [sample_vertex(v, entity, sigma, n_vertex, rng)
                   for v in entity.vertex_array()]

    per_edge: list[int] = []
    edge_sets = []
    for a, b in entity.segment_array():
        n_edge = params.edge_count(sigma, float(np.linalg.norm(b - a)))
        per_edge.append(n_edge)
        edge_sets.append(sample_edge(a, b, entity, sigma, n_edge, rng))

    return TrainingSet(
        entity_id=entity.id,
        vertex=SampleSet.concat(vertex_sets),
        edge=SampleSet.concat(edge_sets),
        space=sample_space(domain, entity, params.n_axis),
        n_per_vertex=n_vertex,
        n_per_edge=tuple(per_edge),
    )
