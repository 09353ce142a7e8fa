import json

import numpy as np
import pytest

from geo2vec import geometry as g
from geo2vec import ingest as ing
from geo2vec.seeding import spawn_rng

SHAPE_CLASSES = ("rectangle", "l_shape", "t_shape", "e_shape", "cross")
FAMILY_EDGE_COUNTS = {"rectangle": 4, "l_shape": 6, "t_shape": 8,
                      "e_shape": 12, "cross": 12}


class TestParseWkt:
    def test_point(self):
        e = ing.parse_wkt("POINT (1 2)")
        assert e.kind == "point"
        assert np.array_equal(e.point, [1.0, 2.0])

    def test_linestring(self):
        e = ing.parse_wkt("LINESTRING (0 0, 1 0, 1 1)")
        assert e.kind == "polyline"
        assert e.line.shape == (3, 2)

    def test_polygon_square(self):
        e = ing.parse_wkt("POLYGON ((0 0, 2 0, 2 2, 0 2, 0 0))")
        assert e.kind == "polygon"
        assert len(e.polygons[0].exterior) == 4  # closing vertex dropped

    def test_polygon_with_hole_sdf_positive_inside_hole(self):
        e = ing.parse_wkt(
            "POLYGON ((0 0, 4 0, 4 4, 0 4, 0 0), (1 1, 1 3, 3 3, 3 1, 1 1))")
        assert g.sdf((2, 2), e) > 0

    def test_multipolygon(self):
        e = ing.parse_wkt(
            "MULTIPOLYGON (((0 0, 1 0, 1 1, 0 1, 0 0)), ((3 0, 4 0, 4 1, 3 1, 3 0)))")
        assert e.kind == "multipolygon"
        assert len(e.polygons) == 2

    def test_scientific_notation_and_whitespace(self):
        e = ing.parse_wkt("  POINT\t( 1.5e2   -2.5E-1 )  ")
        assert np.allclose(e.point, [150.0, -0.25])

    def test_unsupported_type(self):
        with pytest.raises(ing.UnsupportedGeometryError):
            ing.parse_wkt("MULTILINESTRING ((0 0, 1 1))")

    def test_syntax_error_reports_offset(self):
        with pytest.raises(ing.WktSyntaxError) as err:
            ing.parse_wkt("POINT (1 ")
        assert err.value.offset >= 8

    def test_invariant_violation_after_cleaning(self):
        with pytest.raises(ing.InvalidGeometryError):
            ing.parse_wkt("POLYGON ((0 0, 1 1, 0 0, 1 1, 0 0))")

    def test_trailing_garbage(self):
        with pytest.raises(ing.WktSyntaxError):
            ing.parse_wkt("POINT (1 2) POINT (3 4)")

    def test_fuzz_total(self):
        # any mutated input parses or raises a structured error; no
        # invalid geometry may slip through
        rng = spawn_rng(99, "fuzz")
        bases = [
            "POINT (1 2)",
            "LINESTRING (0 0, 1 0, 1 1)",
            "POLYGON ((0 0, 2 0, 2 2, 0 2, 0 0))",
            "POLYGON ((0 0, 4 0, 4 4, 0 4, 0 0), (1 1, 1 3, 3 3, 3 1, 1 1))",
            "MULTIPOLYGON (((0 0, 1 0, 1 1, 0 1, 0 0)))",
        ]
        alphabet = list("0123456789.,() -EPOINTLYGMU")
        parsed = errors = 0
        for i in range(100_000):
            text = list(bases[i % len(bases)])
            for _ in range(int(rng.integers(1, 4))):
                op = rng.integers(3)
                pos = int(rng.integers(len(text))) if text else 0
                if op == 0 and text:
                    text[pos] = alphabet[int(rng.integers(len(alphabet)))]
                elif op == 1 and text:
                    del text[pos]
                else:
                    text.insert(pos, alphabet[int(rng.integers(len(alphabet)))])
            try:
                ent = ing.parse_wkt("".join(text))
            except ing.ParseError:
                errors += 1
                continue
            parsed += 1
            assert np.all(np.isfinite(ent.vertex_array()))
        assert parsed + errors == 100_000
        assert parsed > 0 and errors > 0


class TestGeoJson:
    def make_doc(self):
        return {
            "type": "FeatureCollection",
            "features": [
                {"type": "Feature", "id": "a", "properties": {"label": 3},
                 "geometry": {"type": "Point", "coordinates": [1, 2]}},
                {"type": "Feature", "id": "b", "properties": {},
                 "geometry": {"type": "Point", "coordinates": [3, 4]}},
            ],
        }

    def test_two_point_features(self):
        ds = ing.parse_geojson(json.dumps(self.make_doc()))
        assert len(ds) == 2
        assert ds.by_id("a").kind == "point"

    def test_label_property(self):
        ds = ing.parse_geojson(json.dumps(self.make_doc()))
        assert ds.labels == {"a": 3}

    def test_ids_default_to_index(self):
        doc = self.make_doc()
        for f in doc["features"]:
            del f["id"]
        ds = ing.parse_geojson(json.dumps(doc))
        assert ds.ids == ["0", "1"]

    def test_duplicate_ids_rejected(self):
        doc = self.make_doc()
        doc["features"][1]["id"] = "a"
        with pytest.raises(ing.ParseError):
            ing.parse_geojson(json.dumps(doc))

    def test_malformed_json(self):
        with pytest.raises(ing.ParseError):
            ing.parse_geojson("{not json")

    def test_unsupported_geometry(self):
        doc = self.make_doc()
        doc["features"][0]["geometry"] = {"type": "GeometryCollection", "geometries": []}
        with pytest.raises(ing.UnsupportedGeometryError):
            ing.parse_geojson(json.dumps(doc))

    def test_non_integer_label_rejected(self):
        doc = self.make_doc()
        doc["features"][0]["properties"]["label"] = "three"
        with pytest.raises(ing.ParseError):
            ing.parse_geojson(json.dumps(doc))

    def test_round_trip_bit_exact(self):
        spec = ing.SynthesisSpec(classes=SHAPE_CLASSES, count_per_class=3,
                                 vertex_noise=0.01, seed=5)
        ds = ing.synthesize_shapes(spec)
        text = ing.serialize_geojson(ds)
        back = ing.parse_geojson(text)
        assert back.labels == ds.labels
        for a, b in zip(ds.entities, back.entities):
            assert a.id == b.id
            assert np.array_equal(a.vertex_array(), b.vertex_array())
        assert ing.serialize_geojson(back) == text


class TestSynthesizeShapes:
    def spec(self, **kw):
        defaults = dict(classes=SHAPE_CLASSES, count_per_class=40,
                        vertex_noise=0.02, seed=11)
        defaults.update(kw)
        return ing.SynthesisSpec(**defaults)

    def test_counts(self):
        ds = ing.synthesize_shapes(self.spec())
        assert len(ds) == 200
        assert sorted(set(ds.labels.values())) == [0, 1, 2, 3, 4]

    def test_determinism(self):
        a = ing.synthesize_shapes(self.spec())
        b = ing.synthesize_shapes(self.spec())
        for ea, eb in zip(a.entities, b.entities):
            assert np.array_equal(ea.vertex_array(), eb.vertex_array())
        assert ing.serialize_geojson(a) == ing.serialize_geojson(b)

    def test_family_edge_counts_exact(self):
        ds = ing.synthesize_shapes(self.spec(count_per_class=10))
        for e in ds.entities:
            family = e.id.rsplit("-", 1)[0]
            assert len(e.polygons[0].exterior) == FAMILY_EDGE_COUNTS[family]

    def test_ring_invariants_hold(self):
        ds = ing.synthesize_shapes(self.spec(count_per_class=10, vertex_noise=0.03))
        for e in ds.entities:
            ring = e.polygons[0].exterior
            assert ring.signed_area > 0
            assert np.all(np.isfinite(ring.vertices))

    def test_unknown_family_rejected(self):
        with pytest.raises(ing.SynthesisError):
            ing.synthesize_shapes(self.spec(classes=("hexagon",)))

    def test_label_integrity(self):
        ds = ing.synthesize_shapes(self.spec(count_per_class=5))
        assert set(ds.labels) == set(ds.ids)


class TestSynthesizeScattered:
    def spec(self, **kw):
        defaults = dict(classes=("point", "polyline", "polygon"),
                        count_per_class=25, scale_range=(0.05, 0.12),
                        bbox=g.BBox(-1, -1, 1, 1), seed=3)
        defaults.update(kw)
        return ing.SynthesisSpec(**defaults)

    def test_counts_and_kinds(self):
        ds = ing.synthesize_scattered(self.spec())
        assert len(ds) == 75
        kinds = {e.kind for e in ds.entities}
        assert kinds == {"point", "polyline", "polygon"}

    def test_zero_overlap_separates_everything(self):
        ds = ing.synthesize_scattered(self.spec(overlap_fraction=0.0))
        ents = ds.entities
        for i, a in enumerate(ents):
            for b in ents[i + 1:]:
                assert g.min_entity_distance(a, b) > 0.0

    def test_positive_overlap_creates_contacts(self):
        ds = ing.synthesize_scattered(self.spec(overlap_fraction=0.5))
        ents = ds.entities
        touching = sum(
            1 for i, a in enumerate(ents) for b in ents[i + 1:]
            if g.min_entity_distance(a, b) <= 1e-9)
        assert touching >= 5

    def test_determinism(self):
        a = ing.synthesize_scattered(self.spec(overlap_fraction=0.3))
        b = ing.synthesize_scattered(self.spec(overlap_fraction=0.3))
        assert ing.serialize_geojson(a) == ing.serialize_geojson(b)

    def test_polyline_vertex_budget(self):
        ds = ing.synthesize_scattered(self.spec())
        for e in ds.entities:
            if e.kind == "polyline":
                assert 2 <= e.line.shape[0] <= 10

    def test_unknown_class_rejected(self):
        with pytest.raises(ing.SynthesisError):
            ing.synthesize_scattered(self.spec(classes=("blob",)))


class TestDataset:
    def test_duplicate_ids_rejected(self):
        e = g.point_entity("x", (0, 0))
        with pytest.raises(ing.ParseError):
            ing.Dataset([e, e])

    def test_label_for_unknown_id_rejected(self):
        e = g.point_entity("x", (0, 0))
        with pytest.raises(ing.ParseError):
            ing.Dataset([e], labels={"y": 1})
