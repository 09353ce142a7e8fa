"""Planar vector geometry with exact signed-distance evaluation.

Entities are points, polylines, polygons (optionally with holes), and
multipolygons over 2-D float64 coordinates.  The signed distance of a
query point is its Euclidean distance to the entity boundary, negated
inside a filled region.  Everything here is a pure function over
immutable inputs, so concurrent use needs no synchronization.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "GeometryError",
    "Ring",
    "PolygonGeom",
    "GeoEntity",
    "BBox",
    "Transform",
    "SdfSample",
    "point_entity",
    "polyline_entity",
    "polygon_entity",
    "multipolygon_entity",
    "point_segment_distance",
    "point_in_polygon",
    "sdf",
    "sdf_many",
    "brute_force_sdf",
    "brute_force_sdf_many",
    "dense_boundary_points",
    "bbox",
    "dataset_bbox",
    "normalize_shape",
    "normalize_dataset",
    "min_entity_distance",
]

# Point-block size for the vectorized kernels; keeps peak memory for the
# (points x segments) intermediates around a few tens of MB.
_CHUNK = 1 << 16


class GeometryError(ValueError):
    """Invalid geometry: bad coordinates, degenerate rings, etc."""


def _as_coords(values, min_points: int = 1) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1 and arr.size == 2:
        arr = arr.reshape(1, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise GeometryError(f"expected (n, 2) coordinates, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise GeometryError("coordinates must be finite (no NaN/Inf)")
    if arr.shape[0] < min_points:
        raise GeometryError(f"need at least {min_points} coordinates, got {arr.shape[0]}")
    return arr


def _dedup_consecutive(arr: np.ndarray, closed: bool) -> np.ndarray:
    """Drop exactly-repeated consecutive vertices; for closed rings also
    drop a repeated closing vertex."""
    if closed and arr.shape[0] >= 2 and np.array_equal(arr[0], arr[-1]):
        arr = arr[:-1]
    if arr.shape[0] >= 2:
        keep = np.ones(arr.shape[0], dtype=bool)
        keep[1:] = np.any(arr[1:] != arr[:-1], axis=1)
        arr = arr[keep]
    return arr


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=np.float64)
    out.setflags(write=False)
    return out


def _signed_area(vertices: np.ndarray) -> float:
    x, y = vertices[:, 0], vertices[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    return float(0.5 * np.sum(x * yn - xn * y))


@dataclass(frozen=True, eq=False)
class Ring:
    """A simple closed ring; the first vertex is not repeated at the end."""

    vertices: np.ndarray  # (n, 2) float64, read-only

    def __post_init__(self):
        arr = _as_coords(self.vertices)
        arr = _dedup_consecutive(arr, closed=True)
        if arr.shape[0] < 3:
            raise GeometryError("ring needs at least 3 distinct vertices")
        if _signed_area(arr) == 0.0:
            raise GeometryError("ring has zero signed area")
        object.__setattr__(self, "vertices", _freeze(arr))

    @property
    def signed_area(self) -> float:
        return _signed_area(self.vertices)

    def reversed(self) -> "Ring":
        return Ring(self.vertices[::-1])

    def __len__(self) -> int:
        return self.vertices.shape[0]


@dataclass(frozen=True, eq=False)
class PolygonGeom:
    """One polygon: exterior ring plus zero or more hole rings."""

    exterior: Ring
    holes: tuple[Ring, ...] = ()

    def rings(self) -> tuple[Ring, ...]:
        return (self.exterior, *self.holes)


@dataclass(frozen=True, eq=False)
class GeoEntity:
    """A tagged geo-entity.  Exactly one payload field is populated."""

    id: str
    kind: str  # "point" | "polyline" | "polygon" | "multipolygon"
    point: np.ndarray | None = None
    line: np.ndarray | None = None
    polygons: tuple[PolygonGeom, ...] = ()

    # -- accessors ---------------------------------------------------------

    @property
    def is_areal(self) -> bool:
        return self.kind in ("polygon", "multipolygon")

    def vertex_array(self) -> np.ndarray:
        """All vertices as one (V, 2) array."""
        if self.kind == "point":
            return self.point.reshape(1, 2)
        if self.kind == "polyline":
            return self.line
        return np.concatenate([r.vertices for p in self.polygons for r in p.rings()])

    def segment_array(self) -> np.ndarray:
        """All boundary segments as an (S, 2, 2) array; empty for points."""
        if self.kind == "point":
            return np.empty((0, 2, 2))
        if self.kind == "polyline":
            return np.stack([self.line[:-1], self.line[1:]], axis=1)
        segs = []
        for poly in self.polygons:
            for ring in poly.rings():
                v = ring.vertices
                segs.append(np.stack([v, np.roll(v, -1, axis=0)], axis=1))
        return np.concatenate(segs)

    def perimeter(self) -> float:
        segs = self.segment_array()
        if segs.shape[0] == 0:
            return 0.0
        return float(np.sum(np.linalg.norm(segs[:, 1] - segs[:, 0], axis=1)))

    def with_id(self, new_id: str) -> "GeoEntity":
        return GeoEntity(new_id, self.kind, self.point, self.line, self.polygons)


@dataclass(frozen=True)
class SdfSample:
    """A query position paired with its signed distance."""

    position: np.ndarray  # (2,)
    signed_distance: float


# -- construction ------------------------------------------------------------


def point_entity(eid: str, xy) -> GeoEntity:
    arr = _as_coords(xy)
    if arr.shape[0] != 1:
        raise GeometryError("point entity takes exactly one coordinate")
    return GeoEntity(eid, "point", point=_freeze(arr[0]))


def polyline_entity(eid: str, coords) -> GeoEntity:
    arr = _dedup_consecutive(_as_coords(coords, min_points=2), closed=False)
    if arr.shape[0] < 2:
        raise GeometryError("polyline needs at least 2 distinct vertices")
    return GeoEntity(eid, "polyline", line=_freeze(arr))


def _build_polygon(exterior_coords, holes_coords) -> PolygonGeom:
    ext = Ring(_as_coords(exterior_coords))
    if ext.signed_area < 0:  # canonical: exterior CCW
        ext = ext.reversed()
    holes = []
    for hc in holes_coords:
        hole = Ring(_as_coords(hc))
        if hole.signed_area > 0:  # canonical: holes CW
            hole = hole.reversed()
        if np.any(_winding(hole.vertices, ext.vertices) == 0):
            raise GeometryError("hole ring must lie strictly inside the exterior ring")
        holes.append(hole)
    return PolygonGeom(ext, tuple(holes))


def polygon_entity(eid: str, exterior, holes: Iterable = ()) -> GeoEntity:
    return GeoEntity(eid, "polygon", polygons=(_build_polygon(exterior, holes),))


def multipolygon_entity(eid: str, members: Sequence) -> GeoEntity:
    """members: sequence of (exterior_coords, holes_coords) pairs."""
    if len(members) == 0:
        raise GeometryError("multipolygon needs at least one member polygon")
    polys = tuple(_build_polygon(ext, holes) for ext, holes in members)
    return GeoEntity(eid, "multipolygon", polygons=polys)


# -- distance kernels --------------------------------------------------------


def _point_to_segments_min(points: np.ndarray, segs: np.ndarray) -> np.ndarray:
    """Min distance from each point to a set of segments.  (N,2),(S,2,2)->(N,)"""
    a, b = segs[:, 0], segs[:, 1]
    d = b - a
    len2 = np.sum(d * d, axis=1)
    safe = np.where(len2 > 0.0, len2, 1.0)
    out = np.empty(points.shape[0])
    for lo in range(0, points.shape[0], _CHUNK):
        p = points[lo : lo + _CHUNK]
        w = p[:, None, :] - a[None, :, :]
        t = np.clip(np.sum(w * d[None, :, :], axis=2) / safe, 0.0, 1.0)
        t[:, len2 == 0.0] = 0.0
        diff = w - t[:, :, None] * d[None, :, :]
        out[lo : lo + _CHUNK] = np.sqrt(np.min(np.sum(diff * diff, axis=2), axis=1))
    return out


def point_segment_distance(p, a, b) -> float:
    """Euclidean distance from p to the closed segment [a, b].

    A degenerate segment (a == b) is treated as a point.
    """
    seg = np.stack([_as_coords(a)[0], _as_coords(b)[0]])[None]
    return float(_point_to_segments_min(_as_coords(p), seg)[0])


def _winding(points: np.ndarray, ring_xy: np.ndarray) -> np.ndarray:
    """Winding numbers of a ring around each point.  (N,2),(M,2)->(N,) int."""
    out = np.empty(points.shape[0], dtype=np.int64)
    nxt = np.roll(ring_xy, -1, axis=0)
    x1, y1 = ring_xy[:, 0], ring_xy[:, 1]
    x2, y2 = nxt[:, 0], nxt[:, 1]
    for lo in range(0, points.shape[0], _CHUNK):
        x = points[lo : lo + _CHUNK, 0:1]
        y = points[lo : lo + _CHUNK, 1:2]
        left = (x2 - x1) * (y - y1) - (x - x1) * (y2 - y1)
        up = (y1 <= y) & (y2 > y) & (left > 0)
        down = (y1 > y) & (y2 <= y) & (left < 0)
        out[lo : lo + _CHUNK] = up.sum(axis=1) - down.sum(axis=1)
    return out


def _inside_mask(points: np.ndarray, entity: GeoEntity) -> np.ndarray:
    """True where a point is in the filled region (nonzero winding on the
    exterior and zero winding on every hole, any member polygon)."""
    inside = np.zeros(points.shape[0], dtype=bool)
    for poly in entity.polygons:
        m = _winding(points, poly.exterior.vertices) != 0
        for hole in poly.holes:
            m &= _winding(points, hole.vertices) == 0
        inside |= m
    return inside


def point_in_polygon(p, poly) -> bool:
    """Nonzero-winding inside test for a polygon (exterior minus holes).

    `poly` may be a PolygonGeom or a polygon/multipolygon GeoEntity.
    Boundary points may report either value.
    """
    if isinstance(poly, PolygonGeom):
        poly = GeoEntity("_", "polygon", polygons=(poly,))
    if not poly.is_areal:
        raise GeometryError("inside test needs a polygon or multipolygon")
    return bool(_inside_mask(_as_coords(p), poly)[0])


def sdf_many(points, entity: GeoEntity) -> np.ndarray:
    """Signed distances from each point to the entity boundary."""
    pts = _as_coords(points)
    if entity.kind == "point":
        dist = np.linalg.norm(pts - entity.point[None, :], axis=1)
    else:
        dist = _point_to_segments_min(pts, entity.segment_array())
    if entity.is_areal:
        dist = np.where(_inside_mask(pts, entity), -dist, dist)
    return dist


def sdf(p, entity: GeoEntity) -> float:
    """Signed distance from a single point; negative inside filled regions."""
    return float(sdf_many(p, entity)[0])


# -- brute-force oracle ------------------------------------------------------


def dense_boundary_points(entity: GeoEntity, n: int) -> np.ndarray:
    """At least n points along the boundary at uniform arc-length spacing.

    Spacing never exceeds perimeter / n, and every vertex is included.
    """
    if entity.kind == "point":
        return entity.point.reshape(1, 2)
    segs = entity.segment_array()
    lengths = np.linalg.norm(segs[:, 1] - segs[:, 0], axis=1)
    total = lengths.sum()
    pieces = []
    for (a, b), ln in zip(segs, lengths):
        m = max(2, int(np.ceil(n * ln / total)) + 1)
        t = np.linspace(0.0, 1.0, m)[:, None]
        pieces.append(a[None, :] * (1.0 - t) + b[None, :] * t)
    return np.concatenate(pieces)


def _even_odd_inside(points: np.ndarray, entity: GeoEntity) -> np.ndarray:
    """Even-odd ray-casting inside test, independent of the winding test."""
    segs = entity.segment_array()
    x1, y1 = segs[:, 0, 0], segs[:, 0, 1]
    x2, y2 = segs[:, 1, 0], segs[:, 1, 1]
    inside = np.zeros(points.shape[0], dtype=bool)
    for lo in range(0, points.shape[0], _CHUNK):
        px = points[lo : lo + _CHUNK, 0:1]
        py = points[lo : lo + _CHUNK, 1:2]
        straddles = (y1 > py) != (y2 > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
        crossings = np.sum(straddles & (px < xint), axis=1)
        inside[lo : lo + _CHUNK] = (crossings % 2) == 1
    return inside


def brute_force_sdf_many(points, entity: GeoEntity, n: int = 100_000) -> np.ndarray:
    """Independent SDF oracle: nearest of >= n dense boundary samples,
    signed by an even-odd ray cast.  Converges to sdf() as n grows; the
    discretization error is bounded by perimeter / (2 n).
    """
    if n < 1000:
        raise ValueError("brute-force oracle needs n >= 1000")
    pts = _as_coords(points)
    if entity.kind == "point":
        return np.linalg.norm(pts - entity.point[None, :], axis=1)
    samples = dense_boundary_points(entity, n)
    dist, _ = cKDTree(samples).query(pts)
    dist = np.atleast_1d(dist).astype(np.float64)
    if entity.is_areal:
        dist = np.where(_even_odd_inside(pts, entity), -dist, dist)
    return dist


def brute_force_sdf(p, entity: GeoEntity, n: int = 100_000) -> float:
    return float(brute_force_sdf_many(p, entity, n)[0])


# -- bounding boxes and normalization ----------------------------------------


@dataclass(frozen=True)
class BBox:
    min_x: float
    min_y: float
    max_x: float
    max_y: float

    def __post_init__(self):
        if self.min_x > self.max_x or self.min_y > self.max_y:
            raise GeometryError("bbox min must not exceed max")

    @property
    def width(self) -> float:
        return self.max_x - self.min_x

    @property
    def height(self) -> float:
        return self.max_y - self.min_y

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.min_x + self.max_x), 0.5 * (self.min_y + self.max_y))

    def grid(self, n: int) -> np.ndarray:
        """n x n grid positions, inclusive endpoints, row-major from the
        min corner (y varies slowest)."""
        if n < 2:
            raise GeometryError("grid needs n >= 2 per axis")
        xs = np.linspace(self.min_x, self.max_x, n)
        ys = np.linspace(self.min_y, self.max_y, n)
        gx, gy = np.meshgrid(xs, ys)  # gy[i, :] == ys[i]
        return np.column_stack([gx.ravel(), gy.ravel()])


def bbox(entity: GeoEntity) -> BBox:
    """Tight axis-aligned bounds over all vertices."""
    v = entity.vertex_array()
    return BBox(float(v[:, 0].min()), float(v[:, 1].min()),
                float(v[:, 0].max()), float(v[:, 1].max()))


def dataset_bbox(entities: Sequence[GeoEntity]) -> BBox:
    if len(entities) == 0:
        raise GeometryError("empty dataset has no bbox")
    boxes = [bbox(e) for e in entities]
    return BBox(min(b.min_x for b in boxes), min(b.min_y for b in boxes),
                max(b.max_x for b in boxes), max(b.max_y for b in boxes))


@dataclass(frozen=True)
class Transform:
    """Uniform scale about a center: q = (p - center) * scale."""

    center_x: float
    center_y: float
    scale: float

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return (pts - np.array([self.center_x, self.center_y])) * self.scale

    def invert(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts / self.scale + np.array([self.center_x, self.center_y])

    def apply_entity(self, entity: GeoEntity) -> GeoEntity:
        if entity.kind == "point":
            return point_entity(entity.id, self.apply(entity.point))
        if entity.kind == "polyline":
            return polyline_entity(entity.id, self.apply(entity.line))
        members = [
            (self.apply(p.exterior.vertices), [self.apply(h.vertices) for h in p.holes])
            for p in entity.polygons
        ]
        if entity.kind == "polygon":
            ext, holes = members[0]
            return polygon_entity(entity.id, ext, holes)
        return multipolygon_entity(entity.id, members)


def _fit_transform(box: BBox) -> Transform:
    extent = max(box.width, box.height)
    if extent == 0.0:
        raise GeometryError("shape normalization undefined for zero-extent entities (points)")
    cx, cy = box.center
    return Transform(cx, cy, 2.0 / extent)


def normalize_shape(entity: GeoEntity) -> tuple[GeoEntity, Transform]:
    """Center the entity bbox at the origin and scale uniformly so the
    larger side spans exactly [-1, 1]."""
    t = _fit_transform(bbox(entity))
    return t.apply_entity(entity), t


def normalize_dataset(entities: Sequence[GeoEntity]) -> tuple[list[GeoEntity], Transform]:
    """One shared transform mapping the union bbox into [-1, 1]^2."""
    t = _fit_transform(dataset_bbox(entities))
    return [t.apply_entity(e) for e in entities], t


# -- entity-to-entity distance -----------------------------------------------


def _segments_or_point(entity: GeoEntity) -> np.ndarray:
    if entity.kind == "point":
        return np.stack([entity.point, entity.point])[None]
    return entity.segment_array()


def _cross(ux, uy, vx, vy):
    return ux * vy - uy * vx


def _segment_pair_min(sa: np.ndarray, sb: np.ndarray) -> float:
    """Min distance over all segment pairs; 0 when any pair intersects."""
    a1, a2 = sa[:, None, 0, :], sa[:, None, 1, :]
    b1, b2 = sb[None, :, 0, :], sb[None, :, 1, :]
    d1 = _cross(b2[..., 0] - b1[..., 0], b2[..., 1] - b1[..., 1],
                a1[..., 0] - b1[..., 0], a1[..., 1] - b1[..., 1])
    d2 = _cross(b2[..., 0] - b1[..., 0], b2[..., 1] - b1[..., 1],
                a2[..., 0] - b1[..., 0], a2[..., 1] - b1[..., 1])
    d3 = _cross(a2[..., 0] - a1[..., 0], a2[..., 1] - a1[..., 1],
                b1[..., 0] - a1[..., 0], b1[..., 1] - a1[..., 1])
    d4 = _cross(a2[..., 0] - a1[..., 0], a2[..., 1] - a1[..., 1],
                b2[..., 0] - a1[..., 0], b2[..., 1] - a1[..., 1])
    proper = (d1 * d2 < 0) & (d3 * d4 < 0)
    if np.any(proper):
        return 0.0

    def endpoint_min(pts, segs):
        return _point_to_segments_min(pts, segs).min()

    return float(min(
        endpoint_min(sa[:, 0, :], sb), endpoint_min(sa[:, 1, :], sb),
        endpoint_min(sb[:, 0, :], sa), endpoint_min(sb[:, 1, :], sa),
    ))


def min_entity_distance(a: GeoEntity, b: GeoEntity) -> float:
    """Minimum boundary-to-boundary distance (0 when boundaries touch)."""
    return _segment_pair_min(_segments_or_point(a), _segments_or_point(b))
