"""Shared generators for randomized oracle tests."""

import numpy as np

from geo2vec.geometry import (
    GeoEntity,
    multipolygon_entity,
    point_entity,
    polygon_entity,
    polyline_entity,
)

KINDS = ("point", "polyline", "polygon", "holed", "multipolygon")


def star_vertices(rng, center, radius, n=None):
    # evenly spaced angles with bounded jitter keep the polygon
    # star-shaped about its center (so shrunk copies are valid holes)
    n = n or int(rng.integers(5, 11))
    spacing = 2 * np.pi / n
    angles = np.arange(n) * spacing + rng.uniform(-0.4, 0.4, n) * spacing
    radii = radius * rng.uniform(0.5, 1.0, n)
    return np.column_stack([radii * np.cos(angles), radii * np.sin(angles)]) + center


def random_entity(rng, kind=None, eid="e") -> GeoEntity:
    kind = kind or KINDS[int(rng.integers(len(KINDS)))]
    center = rng.uniform(-2.0, 2.0, 2)
    if kind == "point":
        return point_entity(eid, center)
    if kind == "polyline":
        n = int(rng.integers(2, 9))
        steps = rng.uniform(-0.8, 0.8, (n - 1, 2))
        return polyline_entity(eid, center + np.vstack([np.zeros(2), np.cumsum(steps, 0)]))
    if kind == "polygon":
        return polygon_entity(eid, star_vertices(rng, center, rng.uniform(0.5, 1.5)))
    if kind == "holed":
        outer = star_vertices(rng, center, rng.uniform(1.0, 1.6), n=8)
        hole = center + 0.3 * (outer - center)
        return polygon_entity(eid, outer, [hole])
    first = star_vertices(rng, center, rng.uniform(0.4, 0.8), n=6)
    second = star_vertices(rng, center + np.array([4.0, 0.0]), rng.uniform(0.4, 0.8), n=7)
    return multipolygon_entity(eid, [(first, []), (second, [])])


def query_points(rng, entity, n):
    from geo2vec.geometry import bbox
    b = bbox(entity)
    pad = 0.5 * max(b.width, b.height) + 0.5
    return np.column_stack([
        rng.uniform(b.min_x - pad, b.max_x + pad, n),
        rng.uniform(b.min_y - pad, b.max_y + pad, n),
    ])
