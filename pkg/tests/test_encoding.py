import numpy as np
import pytest

from geo2vec import encoding as enc
from geo2vec import geometry as g
from geo2vec.seeding import spawn_rng


def square(side=2.0, eid="sq"):
    h = side / 2
    return g.polygon_entity(eid, [(-h, -h), (h, -h), (h, h), (-h, h)])


class TestFrequencyBounds:
    def test_canonical_dataset(self):
        assert enc.frequency_bounds([square()], "location") == (0.0, 0.0)
        assert enc.frequency_bounds([square()], "shape") == (0.0, 6.0)

    def test_rectangular_dataset(self):
        r = g.polygon_entity("r", [(0, 0), (4, 0), (4, 2), (0, 2)])
        assert enc.frequency_bounds([r], "location") == (-1.0, 0.0)

    def test_shrink_by_two_shifts_bounds_up_one(self):
        lo1, hi1 = enc.frequency_bounds([square(2.0)], "location")
        lo2, hi2 = enc.frequency_bounds([square(1.0)], "location")
        assert (lo2, hi2) == (lo1 + 1.0, hi1 + 1.0)
        lo1s, hi1s = enc.frequency_bounds([square(2.0)], "shape")
        lo2s, hi2s = enc.frequency_bounds([square(1.0)], "shape")
        assert (lo2s, hi2s) == (lo1s + 1.0, hi1s + 1.0)

    def test_accepts_dataset_object(self):
        from geo2vec.ingest import Dataset
        assert enc.frequency_bounds(Dataset([square()]), "location") == (0.0, 0.0)

    def test_zero_extent_rejected(self):
        with pytest.raises(g.GeometryError):
            enc.frequency_bounds([g.point_entity("p", (1, 1))], "location")

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            enc.frequency_bounds([square()], "both")


class TestPe:
    def test_origin_all_sin_zero_cos_one(self):
        cfg = enc.EncodingConfig(0.0, 3.0, 4)
        out = enc.pe((0.0, 0.0), cfg)
        assert np.allclose(out[0::2], 0.0)
        assert np.allclose(out[1::2], 1.0)

    def test_single_frequency_closed_form(self):
        cfg = enc.EncodingConfig(0.0, 0.0, 1)
        out = enc.pe((0.5, 0.0), cfg)
        assert np.allclose(out, [1.0, 0.0, 0.0, 1.0], atol=1e-12)

    def test_width_contract(self):
        for count in (1, 3, 8):
            for dim in (1, 2, 3):
                cfg = enc.EncodingConfig(-1.0, 2.0, count)
                out = enc.pe(np.zeros(dim), cfg)
                assert out.shape == (2 * count * dim,)

    def test_component_major_frequency_minor_order(self):
        cfg = enc.EncodingConfig(0.0, 1.0, 2)
        x, ycoord = 0.3, -0.7
        out = enc.pe((x, ycoord), cfg)
        expect = []
        for c in (x, ycoord):
            for f in (1.0, 2.0):
                expect += [np.sin(f * np.pi * c), np.cos(f * np.pi * c)]
        assert np.allclose(out, expect)

    def test_exponent_spacing_exact(self):
        cfg = enc.EncodingConfig(-1.0, 5.0, 7)
        exps = cfg.exponents()
        assert np.allclose(np.diff(exps), (5.0 - -1.0) / 6)
        single = enc.EncodingConfig(2.0, 5.0, 1)
        assert single.exponents().tolist() == [2.0]

    def test_outputs_bounded_by_one(self):
        cfg = enc.EncodingConfig(0.0, 6.0, 8)
        pts = spawn_rng(0).uniform(-50, 50, (100_000, 2))
        out = enc.pe(pts, cfg)
        assert np.abs(out).max() <= 1.0 + 1e-12

    def test_batched_matches_single(self):
        cfg = enc.EncodingConfig(0.0, 4.0, 5)
        pts = spawn_rng(1).uniform(-1, 1, (10, 2))
        batch = enc.pe(pts, cfg)
        for i in range(10):
            assert np.array_equal(batch[i], enc.pe(pts[i], cfg))


class TestPeR:
    def cfg(self, count=8):
        return enc.EncodingConfig(0.0, 6.0, count, rotation_invariant=True)

    def test_origin_matches_pe_of_zero_triple(self):
        cfg = self.cfg()
        assert np.array_equal(enc.pe_r((0.0, 0.0), cfg), enc.pe(np.zeros(3), cfg))

    def test_radius_is_pythagorean(self):
        cfg = self.cfg(count=1)
        out = enc.pe_r((3.0, 4.0), cfg)
        r_block = out[4:6]
        assert np.allclose(r_block, [np.sin(5 * np.pi), np.cos(5 * np.pi)], atol=1e-9)

    def test_r_block_rotation_invariant(self):
        cfg = self.cfg()
        rng = spawn_rng(2)
        pts = rng.uniform(-1, 1, (1000, 2))
        block = 2 * cfg.count
        for theta in rng.uniform(0, 2 * np.pi, 5):
            rot = np.array([[np.cos(theta), -np.sin(theta)],
                            [np.sin(theta), np.cos(theta)]])
            a = enc.pe_r(pts, cfg)
            b = enc.pe_r(pts @ rot.T, cfg)
            assert np.abs(a[:, 2 * block:] - b[:, 2 * block:]).max() < 1e-12
            assert np.abs(a[:, :2 * block] - b[:, :2 * block]).max() > 0.1

    def test_width_includes_radius_component(self):
        cfg = self.cfg()
        assert cfg.width == 2 * 8 * 3
        assert enc.pe_r((0.1, 0.2), cfg).shape == (48,)

    def test_encode_dispatch(self):
        plain = enc.EncodingConfig(0.0, 1.0, 2, rotation_invariant=False)
        rot = enc.EncodingConfig(0.0, 1.0, 2, rotation_invariant=True)
        p = (0.3, 0.4)
        assert np.array_equal(enc.encode(p, plain), enc.pe(p, plain))
        assert np.array_equal(enc.encode(p, rot), enc.pe_r(p, rot))


class TestConfigValidation:
    def test_bad_bounds(self):
        with pytest.raises(ValueError):
            enc.EncodingConfig(1.0, 0.0, 4)

    def test_bad_count(self):
        with pytest.raises(ValueError):
            enc.EncodingConfig(0.0, 1.0, 0)

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            enc.EncodingConfig(0.0, 1.0, 4, mode="frequency")
