import hashlib

import numpy as np
import pytest

from geo2vec import evaluation as ev
from geo2vec import geometry as g
from geo2vec import training as tr
from geo2vec.ingest import BBox, Dataset, SynthesisSpec, synthesize_scattered
from geo2vec.seeding import spawn_rng

from helpers import random_entity


def scattered(seed=3, overlap=0.5, count=25):
    spec = SynthesisSpec(classes=("point", "polyline", "polygon"),
                         count_per_class=count, scale_range=(0.05, 0.12),
                         bbox=BBox(-1, -1, 1, 1), seed=seed,
                         overlap_fraction=overlap)
    return synthesize_scattered(spec)


class TestTrainProbe:
    def test_linear_target_fits_to_high_precision(self):
        rng = spawn_rng(0)
        x = rng.normal(0, 1, (300, 16))
        y = 2.5 * x[:, 3] + 1.0
        res = ev.train_probe(x, y, ev.ProbeConfig(seed=1), classify=False)
        assert res.value <= 1e-3
        assert res.extras["r2"] > 0.999

    def test_random_labels_near_chance(self):
        rng = spawn_rng(1)
        x = rng.normal(0, 1, (400, 16))
        y = rng.integers(0, 5, 400)
        res = ev.train_probe(x, y, ev.ProbeConfig(seed=1), classify=True)
        assert abs(res.value - 0.2) <= 0.1

    def test_seeded_determinism(self):
        rng = spawn_rng(2)
        x = rng.normal(0, 1, (200, 8))
        y = np.sin(x[:, 0])
        a = ev.train_probe(x, y, ev.ProbeConfig(seed=9), classify=False)
        b = ev.train_probe(x, y, ev.ProbeConfig(seed=9), classify=False)
        assert abs(a.value - b.value) <= 1e-12

    def test_never_mutates_inputs(self):
        rng = spawn_rng(3)
        x = rng.normal(0, 1, (150, 8))
        y = x[:, 0].copy()
        digest = hashlib.sha256(x.tobytes()).hexdigest()
        ev.train_probe(x, y, ev.ProbeConfig(seed=4), classify=False)
        assert hashlib.sha256(x.tobytes()).hexdigest() == digest

    def test_class_without_test_examples(self):
        x = np.zeros((20, 4))
        y = np.array([0] * 19 + [1])
        with pytest.raises(ev.ClassStarvationError):
            ev.train_probe(x, y, ev.ProbeConfig(seed=0, split=0.95), classify=True)

    def test_non_finite_rejected(self):
        x = np.zeros((10, 2))
        y = np.full(10, np.nan)
        with pytest.raises(ev.ProbeError):
            ev.train_probe(x, y, ev.ProbeConfig(seed=0), classify=False)

    def test_baseline_reported(self):
        rng = spawn_rng(4)
        x = rng.normal(0, 1, (100, 4))
        y = rng.normal(3.0, 1.0, 100)
        res = ev.train_probe(x, y, ev.ProbeConfig(seed=0), classify=False)
        assert res.baseline > 0


class TestTopologyGroundTruth:
    def setup_method(self):
        self.sq = g.polygon_entity("a", [(0, 0), (2, 0), (2, 2), (0, 2)])
        self.far = g.polygon_entity("b", [(5, 0), (7, 0), (7, 2), (5, 2)])
        self.inner = g.polygon_entity("c", [(0.5, 0.5), (1.5, 0.5), (1.5, 1.5), (0.5, 1.5)])
        self.neighbor = g.polygon_entity("d", [(2, 0), (4, 0), (4, 2), (2, 2)])

    def test_disjoint(self):
        assert ev.topology_ground_truth(self.sq, self.far) == "disjoint"

    def test_contains_and_within_by_argument_order(self):
        assert ev.topology_ground_truth(self.sq, self.inner) == "contains"
        assert ev.topology_ground_truth(self.inner, self.sq) == "within"

    def test_edge_sharing_squares_touch(self):
        assert ev.topology_ground_truth(self.sq, self.neighbor) == "touches-or-crosses"

    def test_point_cases(self):
        inside = g.point_entity("p", (1, 1))
        outside = g.point_entity("q", (9, 9))
        assert ev.topology_ground_truth(inside, self.sq) == "intersects"
        assert ev.topology_ground_truth(outside, self.sq) == "disjoint"

    def test_point_exactly_on_polyline(self):
        line = g.polyline_entity("l", [(0, 0), (2, 1)])
        t = 0.37
        on = g.point_entity("p", ((1 - t) * np.array([0, 0]) + t * np.array([2, 1])))
        off = g.point_entity("q", (0.5, 0.9))
        assert ev.topology_ground_truth(on, line) == "intersects"
        assert ev.topology_ground_truth(off, line) == "disjoint"

    def test_polyline_within_vs_crossing(self):
        inside = g.polyline_entity("li", [(0.5, 1.0), (1.5, 1.0)])
        crossing = g.polyline_entity("lc", [(1, -1), (1, 3)])
        assert ev.topology_ground_truth(inside, self.sq) == "within"
        assert ev.topology_ground_truth(crossing, self.sq) == "touches-or-crosses"

    def test_polygon_inside_hole_is_disjoint(self):
        holed = g.polygon_entity("h", [(-3, -3), (3, -3), (3, 3), (-3, 3)],
                                 [[(-2, -2), (-2, 2), (2, 2), (2, -2)]])
        assert ev.topology_ground_truth(self.inner, holed) == "disjoint"

    def test_agrees_with_dense_brute_force_on_random_pairs(self):
        rng = spawn_rng(55)
        ds = scattered(seed=8, overlap=0.4, count=20)
        ents = ds.entities
        checked = 0
        for _ in range(500):
            i, j = rng.integers(0, len(ents), 2)
            if i == j:
                continue
            a, b = ents[i], ents[j]
            lhs = ev.topology_ground_truth(a, b)
            rhs = ev.topology_ground_truth_dense(a, b, n=4096)
            assert lhs == rhs, (a.id, b.id, lhs, rhs)
            checked += 1
        assert checked > 400

    def test_dense_stable_at_higher_resolution(self):
        rng = spawn_rng(56)
        ds = scattered(seed=9, overlap=0.4, count=12)
        ents = ds.entities
        for _ in range(60):
            i, j = rng.integers(0, len(ents), 2)
            if i == j:
                continue
            a, b = ents[i], ents[j]
            assert (ev.topology_ground_truth_dense(a, b, n=1024)
                    == ev.topology_ground_truth_dense(a, b, n=10240))


class TestPairConstruction:
    def test_distance_pairs_symmetric_targets(self):
        ds = scattered()
        task = ev.make_distance_pairs(ds, 30, seed=4)
        canon, _ = g.normalize_dataset(ds.entities)
        by_id = {e.id: e for e in canon}
        for (a, b), t in zip(task.pairs[:20], task.targets[:20]):
            assert g.min_entity_distance(by_id[b], by_id[a]) == pytest.approx(t)

    def test_distance_pairs_cover_requested_combos(self):
        ds = scattered()
        task = ev.make_distance_pairs(ds, 10, seed=4)
        kinds = {(p[0].split("-")[0], p[1].split("-")[0]) for p in task.pairs}
        assert kinds == {("pt", "pg"), ("pl", "pg"), ("pg", "pg")}

    def test_topology_pairs_balanced_and_labeled(self):
        ds = scattered(overlap=0.6, count=40)
        task = ev.make_topology_pairs(ds, "pt-pg", 60, seed=5)
        labels = np.array(task.targets)
        assert set(labels) == {0, 1}
        counts = np.bincount(labels)
        assert counts.min() >= 10
        by_id = {e.id: e for e in ds.entities}
        for (a, b), lab in zip(task.pairs[:30], labels[:30]):
            assert ev.topology_ground_truth(by_id[a], by_id[b]) == task.vocab[lab]

    def test_starvation_raises(self):
        ds = scattered(overlap=0.0, count=8)  # nothing ever intersects
        with pytest.raises(ev.ClassStarvationError):
            ev.make_topology_pairs(ds, "pt-pg", 40, seed=6)

    def test_unknown_combo(self):
        ds = scattered()
        with pytest.raises(ev.ProbeError):
            ev.make_topology_pairs(ds, "pg-qq", 10, seed=0)


class TestTasksOnConstructedEmbeddings:
    """Tasks evaluated with synthetic embeddings that plainly encode the
    answer, isolating the task plumbing from representation quality."""

    def test_shape_classification_on_separable_embeddings(self):
        from geo2vec.ingest import synthesize_shapes
        spec = SynthesisSpec(classes=("rectangle", "cross"), count_per_class=30,
                             vertex_noise=0.01, seed=4)
        ds = synthesize_shapes(spec)
        rng = spawn_rng(7)
        vectors = {}
        for e in ds.entities:
            center = np.zeros(8)
            center[ds.labels[e.id]] = 3.0
            vectors[e.id] = (center + rng.normal(0, 0.3, 8)).astype(np.float32)
        emb = tr.EmbeddingSet(vectors, mode="shape")
        res = ev.task_shape_classification(ds, emb, ev.ProbeConfig(seed=1))
        assert res.value >= 0.95
        assert res.baseline <= 0.7

    def test_shuffled_labels_fall_to_chance(self):
        from geo2vec.ingest import synthesize_shapes
        spec = SynthesisSpec(classes=("rectangle", "cross"), count_per_class=40,
                             vertex_noise=0.01, seed=4)
        ds = synthesize_shapes(spec)
        rng = spawn_rng(8)
        vectors = {e.id: rng.normal(0, 1, 8).astype(np.float32) for e in ds.entities}
        shuffled = list(ds.labels.values())
        rng.shuffle(shuffled)
        ds_shuffled = Dataset(ds.entities, dict(zip(ds.labels.keys(), shuffled)))
        emb = tr.EmbeddingSet(vectors, mode="shape")
        res = ev.task_shape_classification(ds_shuffled, emb, ev.ProbeConfig(seed=1))
        assert abs(res.value - 0.5) <= 0.15

    def test_edge_count_beats_constant_baseline_on_informative_embeddings(self):
        from geo2vec.ingest import synthesize_shapes
        spec = SynthesisSpec(classes=("rectangle", "l_shape", "t_shape"),
                             count_per_class=30, vertex_noise=0.0, seed=5)
        ds = synthesize_shapes(spec)
        rng = spawn_rng(9)
        vectors = {}
        for e in ds.entities:
            n_edges = len(e.polygons[0].exterior)
            v = rng.normal(0, 0.05, 6)
            v[0] = n_edges / 10.0
            vectors[e.id] = v.astype(np.float32)
        emb = tr.EmbeddingSet(vectors, mode="shape")
        res = ev.task_edge_count(ds, emb, ev.ProbeConfig(seed=2))
        assert res.value < res.baseline
        assert res.value <= 0.5

    def test_line_length_canonical_scaling(self):
        ds = scattered(count=30)
        lines = [e for e in ds.entities if e.kind == "polyline"]
        _, t = g.normalize_dataset(ds.entities)
        rng = spawn_rng(10)
        vectors = {}
        for e in ds.entities:
            v = rng.normal(0, 0.01, 4)
            v[0] = e.perimeter() * t.scale if e.kind == "polyline" else 0.0
            vectors[e.id] = v.astype(np.float64)
        emb = tr.EmbeddingSet(vectors, mode="combined")
        res = ev.task_line_length(ds, emb, ev.ProbeConfig(seed=3))
        assert res.value <= 0.01
        # doubling the scene leaves canonical-space lengths unchanged
        doubled = Dataset([_scale_entity(e, 2.0) for e in ds.entities])
        res2 = ev.task_line_length(doubled, emb, ev.ProbeConfig(seed=3))
        assert res2.value == pytest.approx(res.value, abs=1e-9)

    def test_distance_probe_on_coordinate_embeddings(self):
        ds = scattered(overlap=0.0, count=30)
        canon, _ = g.normalize_dataset(ds.entities)
        vectors = {}
        for e in canon:
            b = g.bbox(e)
            radius = 0.5 * np.hypot(b.width, b.height)
            vectors[e.id] = np.array([*b.center, radius], dtype=np.float64)
        emb = tr.EmbeddingSet(vectors, mode="location")
        pairs = ev.make_distance_pairs(ds, 400, seed=11)
        res = ev.task_distance(ds, emb, pairs, ev.ProbeConfig(seed=4))
        assert res.value < 0.05
        assert res.value < res.baseline

    def test_topology_probe_on_oracle_embeddings(self):
        ds = scattered(overlap=0.6, count=40)
        pairs = ev.make_topology_pairs(ds, "pt-pg", 80, seed=12)
        canon, _ = g.normalize_dataset(ds.entities)
        vectors = {}
        for e in canon:
            b = g.bbox(e)
            radius = 0.5 * max(b.width, b.height)
            vectors[e.id] = np.array([*b.center, radius], dtype=np.float64)
        emb = tr.EmbeddingSet(vectors, mode="location")
        res = ev.task_topology(ds, emb, pairs, ev.ProbeConfig(seed=5))
        assert res.value >= 0.8
        assert res.extras["vocab"] == ["disjoint", "intersects"]


def _scale_entity(e, factor):
    t = g.Transform(0.0, 0.0, factor)
    return t.apply_entity(e)


class TestBudgetSweep:
    def test_epsilon_fit_hits_budgets(self):
        from geo2vec.ingest import synthesize_shapes
        from geo2vec.sampling import SamplingParams
        spec = SynthesisSpec(classes=("rectangle", "cross"), count_per_class=5,
                             vertex_noise=0.01, seed=6)
        ds = synthesize_shapes(spec)
        from geo2vec.training import _prepare_entities
        entities, _ = _prepare_entities(ds, "shape")
        params = SamplingParams(sigma=0.3, n_axis=6)
        for budget in (64, 100, 200):
            eps = ev._fit_epsilon(entities, params, 0.3, budget)
            got = ev._mean_total_samples(entities,
                                          params.with_sigma(0.3).__class__(
                                              sigma=0.3, epsilon=eps, n_axis=6),
                                          0.3)
            assert abs(got - budget) <= 8

    def test_infeasible_budget_rejected(self):
        from geo2vec.ingest import synthesize_shapes
        from geo2vec.sampling import SamplingParams
        spec = SynthesisSpec(classes=("cross",), count_per_class=3,
                             vertex_noise=0.01, seed=6)
        ds = synthesize_shapes(spec)
        from geo2vec.training import _prepare_entities
        entities, _ = _prepare_entities(ds, "shape")
        with pytest.raises(ev.ProbeError):
            ev._fit_epsilon(entities, SamplingParams(sigma=0.3, n_axis=8), 0.3, 30)


class TestResultsCsv:
    def test_layout(self):
        rows = [ev.ProbeResult("shape-classification", "accuracy", 0.95, 0.2, 7)]
        text = ev.results_csv(rows)
        lines = text.splitlines()
        assert lines[0] == "task,metric,value,baseline,seed"
        assert lines[1] == "shape-classification,accuracy,0.95,0.2,7"
