"""Dataset ingestion: WKT / GeoJSON parsing and synthetic data generation.

The synthetic generators stand in for labeled real-world data at desk
scale: `synthesize_shapes` emits polygons from five parameterized
families for shape tasks, `synthesize_scattered` emits a mixed
point/polyline/polygon scene with controlled overlap for location
tasks.  Both are deterministic for a given spec and seed.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    BBox,
    GeometryError,
    GeoEntity,
    Transform,
    min_entity_distance,
    point_entity,
    polygon_entity,
    polyline_entity,
    multipolygon_entity,
    sdf_many,
)
from .seeding import spawn_rng

__all__ = [
    "ParseError",
    "WktSyntaxError",
    "UnsupportedGeometryError",
    "InvalidGeometryError",
    "SynthesisError",
    "Dataset",
    "SynthesisSpec",
    "parse_wkt",
    "parse_geojson",
    "serialize_geojson",
    "synthesize_shapes",
    "synthesize_scattered",
    "SHAPE_FAMILIES",
    "SCATTER_CLASSES",
]


class ParseError(ValueError):
    """Base class for ingestion failures."""


class WktSyntaxError(ParseError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class UnsupportedGeometryError(ParseError):
    pass


class InvalidGeometryError(ParseError):
    """Input parsed but violates geometry invariants after cleaning."""


class SynthesisError(ValueError):
    pass


@dataclass
class Dataset:
    """Geo-entities plus optional integer class labels."""

    entities: list[GeoEntity]
    labels: dict[str, int] = field(default_factory=dict)
    name: str = ""
    transform: Transform | None = None  # set once normalized to canonical space

    def __post_init__(self):
        ids = [e.id for e in self.entities]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ParseError(f"duplicate entity ids: {dupes[:5]}")
        known = set(ids)
        missing = sorted(set(self.labels) - known)
        if missing:
            raise ParseError(f"labels reference unknown ids: {missing[:5]}")
        self._by_id = {e.id: e for e in self.entities}

    def __len__(self) -> int:
        return len(self.entities)

    def by_id(self, eid: str) -> GeoEntity:
        return self._by_id[eid]

    @property
    def ids(self) -> list[str]:
        return [e.id for e in self.entities]


# -- WKT ----------------------------------------------------------------------

_WKT_TOKEN = re.compile(r"[A-Za-z]+|[(),]|[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?")


class _WktScanner:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def _skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str | None:
        self._skip_ws()
        m = _WKT_TOKEN.match(self.text, self.pos)
        return m.group(0) if m else None

    def take(self) -> str:
        self._skip_ws()
        m = _WKT_TOKEN.match(self.text, self.pos)
        if m is None:
            raise WktSyntaxError("unexpected character or end of input", self.pos)
        self.pos = m.end()
        return m.group(0)

    def expect(self, token: str):
        at = self.pos
        got = self.take()
        if got != token:
            raise WktSyntaxError(f"expected {token!r}, got {got!r}", at)

    def number(self) -> float:
        at = self.pos
        tok = self.take()
        try:
            return float(tok)
        except ValueError:
            raise WktSyntaxError(f"expected number, got {tok!r}", at) from None


def _wkt_coord_list(sc: _WktScanner) -> list[tuple[float, float]]:
    sc.expect("(")
    coords = [(sc.number(), sc.number())]
    while True:
        tok = sc.take()
        if tok == ")":
            return coords
        if tok != ",":
            raise WktSyntaxError(f"expected ',' or ')', got {tok!r}", sc.pos)
        coords.append((sc.number(), sc.number()))


def _wkt_ring_list(sc: _WktScanner) -> list[list[tuple[float, float]]]:
    sc.expect("(")
    rings = [_wkt_coord_list(sc)]
    while True:
        tok = sc.take()
        if tok == ")":
            return rings
        if tok != ",":
            raise WktSyntaxError(f"expected ',' or ')', got {tok!r}", sc.pos)
        rings.append(_wkt_coord_list(sc))


def parse_wkt(text: str, eid: str = "wkt-0") -> GeoEntity:
    """Parse one WKT geometry (POINT, LINESTRING, POLYGON, MULTIPOLYGON).

    Repeated closing vertices and duplicate consecutive vertices are
    cleaned; anything still violating the geometry invariants is
    rejected.  No EMPTY geometries, no Z/M coordinates.
    """
    sc = _WktScanner(text)
    at = sc.pos
    tag = sc.take().upper()
    try:
        if tag == "POINT":
            sc.expect("(")
            xy = (sc.number(), sc.number())
            sc.expect(")")
            ent = point_entity(eid, xy)
        elif tag == "LINESTRING":
            ent = polyline_entity(eid, _wkt_coord_list(sc))
        elif tag == "POLYGON":
            rings = _wkt_ring_list(sc)
            ent = polygon_entity(eid, rings[0], rings[1:])
        elif tag == "MULTIPOLYGON":
            sc.expect("(")
            members = [_wkt_ring_list(sc)]
            while True:
                tok = sc.take()
                if tok == ")":
                    break
                if tok != ",":
                    raise WktSyntaxError(f"expected ',' or ')', got {tok!r}", sc.pos)
                members.append(_wkt_ring_list(sc))
            ent = multipolygon_entity(eid, [(m[0], m[1:]) for m in members])
        else:
            raise UnsupportedGeometryError(
                f"unsupported WKT geometry type {tag!r} (at byte {at})")
    except GeometryError as exc:
        raise InvalidGeometryError(str(exc)) from exc
    trailing = sc.peek()
    if trailing is not None:
        raise WktSyntaxError(f"trailing content {trailing!r}", sc.pos)
    return ent


# -- GeoJSON ------------------------------------------------------------------

_GEOJSON_KINDS = {"Point", "LineString", "Polygon", "MultiPolygon"}


def _geojson_entity(eid: str, geom: dict) -> GeoEntity:
    gtype = geom.get("type")
    if gtype not in _GEOJSON_KINDS:
        raise UnsupportedGeometryError(f"unsupported GeoJSON geometry type {gtype!r}")
    coords = geom.get("coordinates")
    if coords is None:
        raise ParseError(f"geometry {eid!r} has no coordinates")
    try:
        if gtype == "Point":
            return point_entity(eid, coords)
        if gtype == "LineString":
            return polyline_entity(eid, coords)
        if gtype == "Polygon":
            return polygon_entity(eid, coords[0], coords[1:])
        return multipolygon_entity(eid, [(m[0], m[1:]) for m in coords])
    except (GeometryError, IndexError, TypeError) as exc:
        raise InvalidGeometryError(f"feature {eid!r}: {exc}") from exc


def parse_geojson(text: str) -> Dataset:
    """Parse a FeatureCollection into a Dataset.

    Feature ids come from the "id" member, falling back to the feature
    index; an integer "label" property populates the label map.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise ParseError("expected a GeoJSON FeatureCollection")
    features = doc.get("features")
    if not isinstance(features, list):
        raise ParseError("FeatureCollection has no feature list")
    entities, labels = [], {}
    for i, feat in enumerate(features):
        if not isinstance(feat, dict) or feat.get("type") != "Feature":
            raise ParseError(f"feature {i} is not a Feature object")
        geom = feat.get("geometry")
        if not isinstance(geom, dict):
            raise ParseError(f"feature {i} has no geometry object")
        eid = str(feat.get("id", i))
        entities.append(_geojson_entity(eid, geom))
        props = feat.get("properties") or {}
        if "label" in props:
            label = props["label"]
            if not isinstance(label, int) or isinstance(label, bool):
                raise ParseError(f"feature {eid!r} label must be an integer")
            labels[eid] = label
    return Dataset(entities, labels, name=str(doc.get("name", "")))


def _coords_json(arr: np.ndarray) -> list:
    return [[float(x), float(y)] for x, y in arr]


def _entity_geojson(e: GeoEntity) -> dict:
    if e.kind == "point":
        return {"type": "Point", "coordinates": [float(e.point[0]), float(e.point[1])]}
    if e.kind == "polyline":
        return {"type": "LineString", "coordinates": _coords_json(e.line)}

    def poly_coords(p):
        # GeoJSON rings repeat the first vertex at the end
        return [_coords_json(np.vstack([r.vertices, r.vertices[:1]])) for r in p.rings()]

    if e.kind == "polygon":
        return {"type": "Polygon", "coordinates": poly_coords(e.polygons[0])}
    return {"type": "MultiPolygon", "coordinates": [poly_coords(p) for p in e.polygons]}


def serialize_geojson(dataset: Dataset) -> str:
    """Serialize to a FeatureCollection; float repr round-trips exactly."""
    features = []
    for e in dataset.entities:
        props = {}
        if e.id in dataset.labels:
            props["label"] = dataset.labels[e.id]
        features.append({
            "type": "Feature",
            "id": e.id,
            "properties": props,
            "geometry": _entity_geojson(e),
        })
    doc = {"type": "FeatureCollection", "name": dataset.name, "features": features}
    return json.dumps(doc, separators=(",", ":"))


# -- synthesis ----------------------------------------------------------------


@dataclass(frozen=True)
class SynthesisSpec:
    """Parameters for the synthetic generators.

    classes: family names (shape families for synthesize_shapes; any of
    "point"/"polyline"/"polygon" for synthesize_scattered).
    scale_range: half-extent of generated shapes, in bbox units.
    rotation_range: radians.  vertex_noise: jitter std dev applied to
    template vertices before rotation, in template units.
    """

    classes: tuple[str, ...]
    count_per_class: int
    vertex_noise: float = 0.0
    rotation_range: tuple[float, float] = (0.0, 2.0 * math.pi)
    scale_range: tuple[float, float] = (0.5, 1.5)
    bbox: BBox = BBox(-10.0, -10.0, 10.0, 10.0)
    seed: int = 0
    overlap_fraction: float = 0.0

    def __post_init__(self):
        if self.count_per_class < 1:
            raise SynthesisError("count_per_class must be >= 1")
        if len(self.classes) == 0:
            raise SynthesisError("classes must be nonempty")
        for name, (lo, hi) in (("rotation_range", self.rotation_range),
                               ("scale_range", self.scale_range)):
            if hi < lo:
                raise SynthesisError(f"{name} is not well-ordered")
        if self.scale_range[0] <= 0:
            raise SynthesisError("scale_range must be positive")
        if not 0.0 <= self.overlap_fraction <= 1.0:
            raise SynthesisError("overlap_fraction must be in [0, 1]")
        if self.vertex_noise < 0:
            raise SynthesisError("vertex_noise must be >= 0")


# Templates are CCW vertex loops with half-extent ~1; each returns the
# loop for one random parameterization.  Edge counts are fixed per family.


def _tmpl_rectangle(rng) -> np.ndarray:
    a = rng.uniform(0.35, 0.75)
    return np.array([(-1, -a), (1, -a), (1, a), (-1, a)], dtype=float)


def _tmpl_l_shape(rng) -> np.ndarray:
    t = rng.uniform(0.35, 0.6)
    v = np.array([(0, 0), (1, 0), (1, t), (t, t), (t, 1), (0, 1)], dtype=float)
    return (v - 0.5) * 2.0


def _tmpl_t_shape(rng) -> np.ndarray:
    t = rng.uniform(0.25, 0.4)   # bar thickness (of full height 2)
    s = rng.uniform(0.15, 0.3)   # stem half-width
    return np.array([
        (-s, -1), (s, -1), (s, 1 - 2 * t), (1, 1 - 2 * t),
        (1, 1), (-1, 1), (-1, 1 - 2 * t), (-s, 1 - 2 * t),
    ], dtype=float)


def _tmpl_e_shape(rng) -> np.ndarray:
    t = rng.uniform(0.22, 0.3)    # arm thickness (unit square units)
    w = rng.uniform(0.25, 0.38)   # spine width
    h = t / 2.0
    v = np.array([
        (0, -1), (1, -1), (1, -1 + 2 * t), (w, -1 + 2 * t),
        (w, -h * 2), (1, -h * 2), (1, h * 2), (w, h * 2),
        (w, 1 - 2 * t), (1, 1 - 2 * t), (1, 1), (0, 1),
    ], dtype=float)
    return v


def _tmpl_cross(rng) -> np.ndarray:
    w = rng.uniform(0.25, 0.45)
    return np.array([
        (-w, -1), (w, -1), (w, -w), (1, -w), (1, w), (w, w),
        (w, 1), (-w, 1), (-w, w), (-1, w), (-1, -w), (-w, -w),
    ], dtype=float)


SHAPE_FAMILIES = {
    "rectangle": (_tmpl_rectangle, 4),
    "l_shape": (_tmpl_l_shape, 6),
    "t_shape": (_tmpl_t_shape, 8),
    "e_shape": (_tmpl_e_shape, 12),
    "cross": (_tmpl_cross, 12),
}

SCATTER_CLASSES = ("point", "polyline", "polygon")


def _rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def _jitter_template(verts: np.ndarray, noise: float, rng) -> np.ndarray:
    """Jitter vertices, resampling until the ring stays valid (no merged
    vertices, no area collapse).  Noise is applied before rotation so the
    family edge count is exact ground truth."""
    if noise == 0.0:
        return verts
    for _ in range(100):
        out = verts + rng.normal(0.0, noise, verts.shape)
        gaps = np.linalg.norm(np.roll(out, -1, axis=0) - out, axis=1)
        if gaps.min() > 1e-6 and abs(_signed_area_of(out)) > 1e-6:
            return out
    raise SynthesisError("vertex_noise too large for the template geometry")


def _signed_area_of(v: np.ndarray) -> float:
    x, y = v[:, 0], v[:, 1]
    return float(0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def synthesize_shapes(spec: SynthesisSpec) -> Dataset:
    """Labeled polygons from the requested shape families.

    Each instance is vertex-jittered, rotated, scaled, and placed inside
    the spec bbox; label = index of its family in spec.classes.
    """
    unknown = [c for c in spec.classes if c not in SHAPE_FAMILIES]
    if unknown:
        raise SynthesisError(f"unknown shape families: {unknown} "
                             f"(available: {sorted(SHAPE_FAMILIES)})")
    rng = spawn_rng(spec.seed, "synthesize_shapes")
    box = spec.bbox
    entities, labels = [], {}
    for ci, cname in enumerate(spec.classes):
        template, _ = SHAPE_FAMILIES[cname]
        for i in range(spec.count_per_class):
            verts = _jitter_template(template(rng), spec.vertex_noise, rng)
            theta = rng.uniform(*spec.rotation_range)
            scale = rng.uniform(*spec.scale_range)
            center = np.array([rng.uniform(box.min_x, box.max_x),
                               rng.uniform(box.min_y, box.max_y)])
            placed = (verts @ _rotation(theta).T) * scale + center
            eid = f"{cname}-{i:04d}"
            entities.append(polygon_entity(eid, placed))
            labels[eid] = ci
    return Dataset(entities, labels, name="synthetic-shapes")


# -- scattered scene ----------------------------------------------------------


def _scatter_polygon_verts(rng, radius: float) -> np.ndarray:
    n = int(rng.integers(5, 10))
    angles = np.sort(rng.uniform(0.0, 2.0 * math.pi, n))
    radii = radius * rng.uniform(0.6, 1.0, n)
    return np.column_stack([radii * np.cos(angles), radii * np.sin(angles)])


def _scatter_polyline_verts(rng, radius: float) -> np.ndarray:
    n = int(rng.integers(2, 11))
    heading = rng.uniform(0.0, 2.0 * math.pi)
    step = 2.0 * radius / max(n - 1, 1)
    pts = [np.zeros(2)]
    for _ in range(n - 1):
        heading += rng.uniform(-1.0, 1.0)
        pts.append(pts[-1] + step * np.array([math.cos(heading), math.sin(heading)]))
    v = np.array(pts)
    return v - v.mean(axis=0)


class _Scene:
    """Incremental placement helper with a center/radius prefilter."""

    def __init__(self, margin: float):
        self.entities: list[GeoEntity] = []
        self.centers: list[np.ndarray] = []
        self.radii: list[float] = []
        self.margin = margin

    def conflicts(self, candidate: GeoEntity) -> bool:
        from .geometry import bbox as ent_bbox
        b = ent_bbox(candidate)
        c = np.array(b.center)
        r = 0.5 * math.hypot(b.width, b.height)
        for e, ec, er in zip(self.entities, self.centers, self.radii):
            if np.linalg.norm(c - ec) > r + er + self.margin:
                continue
            if min_entity_distance(candidate, e) <= self.margin:
                return True
        return False

    def add(self, entity: GeoEntity):
        from .geometry import bbox as ent_bbox
        b = ent_bbox(entity)
        self.entities.append(entity)
        self.centers.append(np.array(b.center))
        self.radii.append(0.5 * math.hypot(b.width, b.height))


def _place_disjoint(scene: _Scene, rng, box: BBox, build) -> GeoEntity:
    for _ in range(300):
        center = np.array([rng.uniform(box.min_x, box.max_x),
                           rng.uniform(box.min_y, box.max_y)])
        candidate = build(center)
        if not scene.conflicts(candidate):
            scene.add(candidate)
            return candidate
    raise SynthesisError("could not place a disjoint entity; "
                         "reduce counts or scale_range")


def _point_inside(rng, host: GeoEntity, margin: float) -> np.ndarray | None:
    from .geometry import bbox as ent_bbox
    b = ent_bbox(host)
    for _ in range(200):
        p = np.array([rng.uniform(b.min_x, b.max_x), rng.uniform(b.min_y, b.max_y)])
        if sdf_many(p[None], host)[0] < -margin:
            return p
    return None


def synthesize_scattered(spec: SynthesisSpec) -> Dataset:
    """A mixed scene of points, polylines, and polygons.

    With overlap_fraction 0 all entities keep a positive boundary
    separation.  A positive fraction routes that share of entities into
    constructed interactions: points inside polygons or exactly on
    polylines, polylines crossing or contained in polygons, polylines
    crossing polylines, and polygon pairs that overlap or nest.  These
    give the pairwise topology tasks nontrivial classes.
    """
    unknown = [c for c in spec.classes if c not in SCATTER_CLASSES]
    if unknown:
        raise SynthesisError(f"unknown scatter classes: {unknown} "
                             f"(available: {list(SCATTER_CLASSES)})")
    rng = spawn_rng(spec.seed, "synthesize_scattered")
    box = spec.bbox
    extent = max(box.width, box.height)
    margin = 0.004 * extent
    scene = _Scene(margin)
    counts = {c: spec.count_per_class for c in spec.classes}
    entities: list[GeoEntity] = []

    def radius() -> float:
        return rng.uniform(*spec.scale_range)

    polygons: list[GeoEntity] = []
    polylines: list[GeoEntity] = []

    # Polygons first so later entities have hosts to interact with.
    for i in range(counts.get("polygon", 0)):
        eid = f"pg-{i:04d}"
        hosted = polygons and rng.random() < spec.overlap_fraction
        ent = None
        if hosted:
            host = polygons[int(rng.integers(len(polygons)))]
            nested = rng.random() < 0.5
            for _ in range(200):
                if nested:
                    center = _point_inside(rng, host, 2.0 * margin)
                    if center is None:
                        break
                    from .geometry import bbox as ent_bbox
                    hb = ent_bbox(host)
                    r = min(radius(), 0.25 * min(hb.width, hb.height))
                    cand = polygon_entity(eid, _scatter_polygon_verts(rng, r) + center)
                    inside = np.all(sdf_many(cand.vertex_array(), host) < -margin)
                    if inside and min_entity_distance(cand, host) > margin:
                        ent = cand
                        break
                else:
                    edge_pts = host.vertex_array()
                    anchor = edge_pts[int(rng.integers(len(edge_pts)))]
                    cand = polygon_entity(eid, _scatter_polygon_verts(rng, radius()) + anchor)
                    if min_entity_distance(cand, host) <= 1e-12:
                        ent = cand
                        break
            if ent is not None:
                scene.add(ent)
        if ent is None:
            ent = _place_disjoint(scene, rng, box,
                                  lambda c: polygon_entity(eid, _scatter_polygon_verts(rng, radius()) + c))
        polygons.append(ent)
        entities.append(ent)

    for i in range(counts.get("polyline", 0)):
        eid = f"pl-{i:04d}"
        hosts = polygons + polylines
        hosted = hosts and rng.random() < spec.overlap_fraction
        ent = None
        if hosted:
            host = hosts[int(rng.integers(len(hosts)))]
            want_within = host.kind == "polygon" and rng.random() < 0.4
            for _ in range(200):
                if want_within:
                    center = _point_inside(rng, host, 2.0 * margin)
                    if center is None:
                        break
                    from .geometry import bbox as ent_bbox
                    hb = ent_bbox(host)
                    r = min(radius(), 0.2 * min(hb.width, hb.height))
                    cand = polyline_entity(eid, _scatter_polyline_verts(rng, r) + center)
                    inside = np.all(sdf_many(cand.line, host) < -margin)
                    if inside and min_entity_distance(cand, host) > margin:
                        ent = cand
                        break
                else:
                    segs = host.segment_array()
                    if segs.shape[0] == 0:
                        break
                    s = segs[int(rng.integers(segs.shape[0]))]
                    t = rng.uniform(0.2, 0.8)
                    anchor = (1.0 - t) * s[0] + t * s[1]
                    cand = polyline_entity(eid, _scatter_polyline_verts(rng, radius()) + anchor)
                    if min_entity_distance(cand, host) <= 1e-12:
                        ent = cand
                        break
            if ent is not None:
                scene.add(ent)
        if ent is None:
            ent = _place_disjoint(scene, rng, box,
                                  lambda c: polyline_entity(eid, _scatter_polyline_verts(rng, radius()) + c))
        polylines.append(ent)
        entities.append(ent)

    for i in range(counts.get("point", 0)):
        eid = f"pt-{i:04d}"
        hosts = polygons + polylines
        hosted = hosts and rng.random() < spec.overlap_fraction
        ent = None
        if hosted:
            host = hosts[int(rng.integers(len(hosts)))]
            if host.kind == "polygon":
                p = _point_inside(rng, host, margin)
                if p is not None:
                    ent = point_entity(eid, p)
            else:
                segs = host.segment_array()
                s = segs[int(rng.integers(segs.shape[0]))]
                t = rng.uniform(0.0, 1.0)
                ent = point_entity(eid, (1.0 - t) * s[0] + t * s[1])
            if ent is not None:
                scene.add(ent)
        if ent is None:
            ent = _place_disjoint(scene, rng, box, lambda c: point_entity(eid, c))
        entities.append(ent)

    return Dataset(entities, {}, name="synthetic-scattered")
