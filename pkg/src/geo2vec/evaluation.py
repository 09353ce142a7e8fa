"""Probe-based evaluation of frozen embeddings.

Tasks mirror the standard protocols: shape-family classification and
edge-count regression on shape embeddings, line-length regression on
combined embeddings, and pairwise distance estimation / topological
relationship classification on location embeddings.  Each probe is a
small 2-layer MLP trained on a split of the data; every reported metric
comes with its trivial baseline (majority-class accuracy or
mean-predictor MAE) so embedding quality is always read against chance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import (
    GeoEntity,
    dense_boundary_points,
    min_entity_distance,
    normalize_dataset,
    sdf_many,
)
from .ingest import Dataset
from .sampling import SamplingParams
from .seeding import spawn_rng
from .training import EmbeddingSet, TrainConfig, train

__all__ = [
    "ProbeConfig",
    "ProbeResult",
    "ProbeError",
    "ClassStarvationError",
    "PairTask",
    "train_probe",
    "task_shape_classification",
    "task_edge_count",
    "task_line_length",
    "task_distance",
    "task_topology",
    "topology_ground_truth",
    "topology_ground_truth_dense",
    "make_distance_pairs",
    "make_topology_pairs",
    "sample_budget_sweep",
    "results_csv",
    "BINARY_COMBOS",
    "MULTICLASS_COMBOS",
    "TOPOLOGY_TOL",
]

TOPOLOGY_TOL = 1e-9

BINARY_COMBOS = ("pt-pl", "pt-pg", "pl-pl")
MULTICLASS_COMBOS = ("pl-pg", "pg-pg")
_BINARY_VOCAB = ("disjoint", "intersects")
_MULTI_VOCAB = ("disjoint", "touches-or-crosses", "within", "contains")

_KIND_CODE = {"point": "pt", "polyline": "pl", "polygon": "pg", "multipolygon": "pg"}


class ProbeError(ValueError):
    pass


class ClassStarvationError(ProbeError):
    pass


@dataclass(frozen=True)
class ProbeConfig:
    hidden: int = 128
    epochs: int = 200
    lr: float = 3e-3
    batch_size: int = 32
    split: float = 0.7
    seed: int = 0
    metric: str = "auto"  # accuracy | mae | auto

    def __post_init__(self):
        if not 0.0 < self.split < 1.0:
            raise ValueError("split must be in (0, 1)")


@dataclass
class ProbeResult:
    task: str
    metric: str
    value: float
    baseline: float
    seed: int
    extras: dict = field(default_factory=dict)

    def row(self) -> tuple:
        return (self.task, self.metric, self.value, self.baseline, self.seed)


@dataclass
class PairTask:
    combo: str
    pairs: list[tuple[str, str]]
    targets: np.ndarray  # class indices or distances
    vocab: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.pairs) != len(self.targets):
            raise ValueError("pairs/targets length mismatch")


# -- the probe ----------------------------------------------------------------


def _leaky(a):
    return np.where(a >= 0, a, 0.01 * a)


def _leaky_grad(a):
    return np.where(a >= 0, 1.0, 0.01)


class _ProbeNet:
    """2-layer MLP head with a linear skip path, trained by its own Adam.

    The skip term picks up linearly-decodable structure within the short
    probe budget; the hidden path handles the rest.  Deterministic under
    the seed.
    """

    def __init__(self, d_in: int, d_out: int, hidden: int, lr: float, seed: int):
        rng = spawn_rng(seed, "probe-init")
        self.w1 = rng.uniform(-1, 1, (d_in, hidden)) / math.sqrt(d_in)
        self.b1 = np.zeros(hidden)
        self.w2 = rng.uniform(-1, 1, (hidden, d_out)) / math.sqrt(hidden)
        self.b2 = np.zeros(d_out)
        self.w_skip = np.zeros((d_in, d_out))
        self.params = [self.w1, self.b1, self.w2, self.b2, self.w_skip]
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.lr = lr
        self.t = 0

    def forward(self, x):
        a1 = x @ self.w1 + self.b1
        h = _leaky(a1)
        return h @ self.w2 + x @ self.w_skip + self.b2, (x, a1, h)

    def step(self, grad_out, cache, lr_scale: float):
        x, a1, h = cache
        d2 = grad_out
        gw2 = h.T @ d2
        gb2 = d2.sum(axis=0)
        g_skip = x.T @ d2
        dh = d2 @ self.w2.T
        d1 = dh * _leaky_grad(a1)
        gw1 = x.T @ d1
        gb1 = d1.sum(axis=0)
        self.t += 1
        lr = self.lr * lr_scale
        for p, g, m, v in zip(self.params, [gw1, gb1, gw2, gb2, g_skip], self.m, self.v):
            m *= 0.9
            m += 0.1 * g
            v *= 0.999
            v += 0.001 * g * g
            mhat = m / (1 - 0.9**self.t)
            vhat = v / (1 - 0.999**self.t)
            p -= lr * mhat / (np.sqrt(vhat) + 1e-8)


def _standardize(train, full):
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    return (full - mean) / std, mean, std


def _softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def train_probe(features: np.ndarray, targets: np.ndarray, cfg: ProbeConfig,
                classify: bool | None = None, task: str = "probe") -> ProbeResult:
    """Fit the probe on a train split, report the metric on the test split.

    Classification reports accuracy against the majority-class baseline;
    regression reports MAE (plus R^2 in extras) against the train-mean
    predictor.  The inputs are copied, never mutated.
    """
    x = np.array(features, dtype=np.float64)
    y = np.array(targets)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ProbeError("features must be (N, D) aligned with targets")
    if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y.astype(np.float64))):
        raise ProbeError("non-finite features or targets")
    if classify is None:
        classify = cfg.metric == "accuracy" or (
            cfg.metric == "auto" and np.issubdtype(y.dtype, np.integer))

    n = x.shape[0]
    rng = spawn_rng(cfg.seed, "probe-split")
    order = rng.permutation(n)
    n_train = max(1, int(round(cfg.split * n)))
    if n_train >= n:
        n_train = n - 1
    tr_idx, te_idx = order[:n_train], order[n_train:]

    if classify:
        classes = np.unique(y)
        class_index = {c: i for i, c in enumerate(classes)}
        yi = np.array([class_index[v] for v in y])
        present_test = set(yi[te_idx])
        missing = [int(classes[i]) for i in range(len(classes)) if i not in present_test]
        if missing:
            raise ClassStarvationError(f"classes with no test examples: {missing}")
        d_out = len(classes)
    else:
        yf = y.astype(np.float64)
        y_std, y_mean, y_scale = _standardize(yf[tr_idx], yf)
        d_out = 1

    x_std, _, _ = _standardize(x[tr_idx], x)
    net = _ProbeNet(x.shape[1], d_out, cfg.hidden, cfg.lr, cfg.seed)
    shuffle_rng = spawn_rng(cfg.seed, "probe-shuffle")
    b = cfg.batch_size
    for epoch in range(cfg.epochs):
        lr_scale = 0.5 * (1.0 + math.cos(math.pi * epoch / cfg.epochs))
        perm = shuffle_rng.permutation(n_train)
        for lo in range(0, n_train, b):
            sel = tr_idx[perm[lo : lo + b]]
            out, cache = net.forward(x_std[sel])
            if classify:
                probs = _softmax(out)
                grad = probs
                grad[np.arange(len(sel)), yi[sel]] -= 1.0
                grad /= len(sel)
            else:
                grad = 2.0 * (out[:, 0] - y_std[sel])[:, None] / len(sel)
            net.step(grad, cache, lr_scale)

    out, _ = net.forward(x_std[te_idx])
    if classify:
        pred = out.argmax(axis=1)
        value = float((pred == yi[te_idx]).mean())
        counts = np.bincount(yi[tr_idx], minlength=d_out)
        baseline = float((yi[te_idx] == counts.argmax()).mean())
        return ProbeResult(task, "accuracy", value, baseline, cfg.seed,
                           extras={"classes": len(classes)})

    # Regression readout: refit the output layer in closed form on the
    # trained hidden features plus the raw inputs.  SGD alone cannot pin
    # down realizable linear targets within the probe's epoch budget.
    def readout_features(idx):
        h = _leaky(x_std[idx] @ net.w1 + net.b1)
        return np.concatenate([h, x_std[idx], np.ones((len(idx), 1))], axis=1)

    phi = readout_features(tr_idx)
    # Penalize the hidden block harder than the raw-input block so
    # linearly-decodable targets resolve through the inputs alone.
    lam = np.concatenate([np.full(cfg.hidden, 1e-3), np.full(x.shape[1], 1e-8),
                          [1e-12]]) * len(tr_idx)
    gram = phi.T @ phi + np.diag(lam)
    w_out = np.linalg.solve(gram, phi.T @ y_std[tr_idx])
    pred = readout_features(te_idx) @ w_out * y_scale + y_mean
    true = yf[te_idx]
    value = float(np.abs(pred - true).mean())
    baseline = float(np.abs(true - yf[tr_idx].mean()).mean())
    ss_res = float(np.sum((pred - true) ** 2))
    ss_tot = float(np.sum((true - true.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    return ProbeResult(task, "mae", value, baseline, cfg.seed, extras={"r2": r2})


# -- single-entity tasks --------------------------------------------------------


def task_shape_classification(dataset: Dataset, shp: EmbeddingSet,
                              cfg: ProbeConfig) -> ProbeResult:
    """Probe shape embeddings against the dataset's family labels."""
    ids = [e.id for e in dataset.entities if e.id in dataset.labels]
    if not ids:
        raise ProbeError("dataset has no labels")
    x = shp.matrix(ids)
    y = np.array([dataset.labels[i] for i in ids], dtype=np.int64)
    return train_probe(x, y, cfg, classify=True, task="shape-classification")


def task_edge_count(dataset: Dataset, shp: EmbeddingSet,
                    cfg: ProbeConfig) -> ProbeResult:
    """Regression probe against exact polygon edge counts."""
    polys = [e for e in dataset.entities if e.kind == "polygon"]
    if not polys:
        raise ProbeError("dataset has no polygons")
    x = shp.matrix([e.id for e in polys])
    y = np.array([len(e.polygons[0].exterior) for e in polys], dtype=np.float64)
    return train_probe(x, y, cfg, classify=False, task="edge-count")


def task_line_length(dataset: Dataset, combined: EmbeddingSet,
                     cfg: ProbeConfig) -> ProbeResult:
    """Regression probe against polyline lengths in dataset-canonical units."""
    lines = [e for e in dataset.entities if e.kind == "polyline"]
    if not lines:
        raise ProbeError("dataset has no polylines")
    _, transform = normalize_dataset(dataset.entities)
    x = combined.matrix([e.id for e in lines])
    y = np.array([e.perimeter() * transform.scale for e in lines])
    return train_probe(x, y, cfg, classify=False, task="line-length")


# -- pairwise ground truth -------------------------------------------------------


def _combo_of(a: GeoEntity, b: GeoEntity) -> str:
    return f"{_KIND_CODE[a.kind]}-{_KIND_CODE[b.kind]}"


def topology_ground_truth(a: GeoEntity, b: GeoEntity,
                          tol: float = TOPOLOGY_TOL) -> str:
    """Exact topology label from segment distances and sdf signs.

    Binary combos (pt-pl, pt-pg, pl-pl) yield disjoint/intersects; combos
    with an areal operand yield disjoint / touches-or-crosses / within /
    contains.  "touches" and "crosses" are merged: both mean boundary
    contact.
    """
    combo = _combo_of(a, b)
    touch = min_entity_distance(a, b) <= tol

    def strictly_inside(inner: GeoEntity, outer: GeoEntity) -> bool:
        if not outer.is_areal:
            return False
        return bool(np.all(sdf_many(inner.vertex_array(), outer) < -tol))

    if combo in ("pt-pl", "pl-pt", "pl-pl", "pt-pt"):
        return "intersects" if touch else "disjoint"
    if combo in ("pt-pg", "pg-pt"):
        point, areal = (a, b) if combo == "pt-pg" else (b, a)
        inside = sdf_many(point.vertex_array(), areal)[0] < tol
        return "intersects" if (touch or inside) else "disjoint"
    if touch:
        return "touches-or-crosses"
    if strictly_inside(a, b):
        return "within"
    if strictly_inside(b, a):
        return "contains"
    return "disjoint"


def topology_ground_truth_dense(a: GeoEntity, b: GeoEntity,
                                n: int = 4096) -> str:
    """Brute-force counterpart built only from dense boundary samples and
    their sdf values; used to cross-check topology_ground_truth."""
    combo = _combo_of(a, b)
    pa = dense_boundary_points(a, n) if a.kind != "point" else a.point[None]
    pb = dense_boundary_points(b, n) if b.kind != "point" else b.point[None]
    s_ab = sdf_many(pa, b)
    s_ba = sdf_many(pb, a)
    ha = a.perimeter() / n
    hb = b.perimeter() / n
    touch = (np.abs(s_ab).min() <= max(ha, TOPOLOGY_TOL)
             or np.abs(s_ba).min() <= max(hb, TOPOLOGY_TOL))
    if combo in ("pt-pl", "pl-pt", "pl-pl", "pt-pt"):
        return "intersects" if touch else "disjoint"
    if combo in ("pt-pg", "pg-pt"):
        s = s_ab if combo == "pt-pg" else s_ba
        return "intersects" if (touch or s[0] < 0) else "disjoint"
    if touch:
        return "touches-or-crosses"
    if b.is_areal and np.all(s_ab < 0):
        return "within"
    if a.is_areal and np.all(s_ba < 0):
        return "contains"
    return "disjoint"


# -- pair construction -----------------------------------------------------------


def _entities_by_code(dataset: Dataset) -> dict[str, list[GeoEntity]]:
    out: dict[str, list[GeoEntity]] = {"pt": [], "pl": [], "pg": []}
    for e in dataset.entities:
        out[_KIND_CODE[e.kind]].append(e)
    return out


def make_distance_pairs(dataset: Dataset, n_per_combo: int, seed: int,
                        combos=("pt-pg", "pl-pg", "pg-pg")) -> PairTask:
    """Random cross-type pairs with boundary-distance targets measured in
    the dataset's canonical space."""
    normalized, _ = normalize_dataset(dataset.entities)
    canon = {e.id: e for e in normalized}
    groups = _entities_by_code(Dataset(normalized))
    rng = spawn_rng(seed, "distance-pairs")
    pairs, targets = [], []
    for combo in combos:
        ka, kb = combo.split("-")
        ga, gb = groups[ka], groups[kb]
        if not ga or not gb:
            raise ProbeError(f"no entities for combo {combo}")
        for _ in range(n_per_combo):
            while True:
                a = ga[int(rng.integers(len(ga)))]
                b = gb[int(rng.integers(len(gb)))]
                if a.id != b.id:
                    break
            pairs.append((a.id, b.id))
            targets.append(min_entity_distance(canon[a.id], canon[b.id]))
    return PairTask("distance", pairs, np.array(targets))


def make_topology_pairs(dataset: Dataset, combo: str, n_pairs: int, seed: int,
                        min_per_class: int = 10,
                        candidate_cap: int = 20000) -> PairTask:
    """Class-balanced labeled pairs for one type combination.

    Scans a candidate pool, labels it with topology_ground_truth, and
    samples evenly across the classes that occur.  Raises
    ClassStarvationError when a required class is too rare; regenerate
    the scene with a higher overlap fraction in that case.
    """
    combo = combo.lower()
    if combo in BINARY_COMBOS:
        vocab = _BINARY_VOCAB
    elif combo in MULTICLASS_COMBOS:
        vocab = _MULTI_VOCAB
    else:
        raise ProbeError(f"unknown combo {combo!r} "
                         f"(use one of {BINARY_COMBOS + MULTICLASS_COMBOS})")
    ka, kb = combo.split("-")
    groups = _entities_by_code(dataset)
    ga, gb = groups[ka], groups[kb]
    if not ga or not gb:
        raise ProbeError(f"no entities for combo {combo}")
    rng = spawn_rng(seed, "topology-pairs", combo)

    candidates = [(a, b) for a in ga for b in gb if a.id != b.id]
    if len(candidates) > candidate_cap:
        idx = rng.choice(len(candidates), size=candidate_cap, replace=False)
        candidates = [candidates[i] for i in idx]

    by_label: dict[str, list[tuple[str, str]]] = {}
    for a, b in candidates:
        label = topology_ground_truth(a, b)
        by_label.setdefault(label, []).append((a.id, b.id))

    present = [v for v in vocab if v in by_label]
    starved = {v: len(by_label.get(v, [])) for v in present
               if len(by_label[v]) < min_per_class}
    if len(present) < 2 or starved:
        raise ClassStarvationError(
            f"{combo}: class counts {({v: len(by_label.get(v, [])) for v in vocab})}; "
            f"resample pairs or raise the scene overlap fraction")

    per_class = max(min_per_class, n_pairs // len(present))
    pairs, labels = [], []
    for label in present:
        pool = by_label[label]
        take = min(per_class, len(pool))
        sel = rng.choice(len(pool), size=take, replace=False)
        for i in sel:
            pairs.append(pool[i])
            labels.append(vocab.index(label))
    order = rng.permutation(len(pairs))
    pairs = [pairs[i] for i in order]
    targets = np.array(labels, dtype=np.int64)[order]
    return PairTask(combo, pairs, targets, vocab)


def _pair_features(emb: EmbeddingSet, pairs) -> np.ndarray:
    return np.concatenate([emb.matrix([p[0] for p in pairs]),
                           emb.matrix([p[1] for p in pairs])], axis=1)


def task_distance(dataset: Dataset, loc: EmbeddingSet, pairs: PairTask,
                  cfg: ProbeConfig) -> ProbeResult:
    """Regression probe: concatenated pair embeddings -> boundary distance."""
    x = _pair_features(loc, pairs.pairs)
    res = train_probe(x, pairs.targets, cfg, classify=False, task="distance")
    return res


def task_topology(dataset: Dataset, loc: EmbeddingSet, pairs: PairTask,
                  cfg: ProbeConfig) -> ProbeResult:
    """Classification probe over the pair task's topology labels."""
    x = _pair_features(loc, pairs.pairs)
    res = train_probe(x, pairs.targets, cfg, classify=True,
                      task=f"topology-{pairs.combo}")
    res.extras["vocab"] = list(pairs.vocab)
    return res


# -- sample-budget sweep -----------------------------------------------------------


def _mean_total_samples(entities, params: SamplingParams, sigma: float) -> float:
    totals = []
    for e in entities:
        segs = e.segment_array()
        lengths = np.linalg.norm(segs[:, 1] - segs[:, 0], axis=1)
        n_v = params.vertex_count(sigma) * e.vertex_array().shape[0]
        n_e = sum(params.edge_count(sigma, float(l)) for l in lengths)
        totals.append(n_v + n_e + params.n_axis**2)
    return float(np.mean(totals))


def _fit_epsilon(entities, params: SamplingParams, sigma: float,
                 budget: int) -> float:
    floor_params = replace(params, epsilon=1e-9)
    floor = _mean_total_samples(entities, floor_params, sigma)
    if budget < params.n_axis**2 or budget < floor:
        raise ProbeError(f"budget {budget} infeasible: minimum mean total "
                         f"is {floor:.1f} with n_axis={params.n_axis}")
    lo, hi = 1e-9, 1.0
    while _mean_total_samples(entities, replace(params, epsilon=hi), sigma) < budget:
        hi *= 2.0
        if hi > 1e9:
            raise ProbeError("epsilon search diverged")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if _mean_total_samples(entities, replace(params, epsilon=mid), sigma) < budget:
            lo = mid
        else:
            hi = mid
    total_lo = _mean_total_samples(entities, replace(params, epsilon=lo), sigma)
    total_hi = _mean_total_samples(entities, replace(params, epsilon=hi), sigma)
    return lo if abs(total_lo - budget) < abs(total_hi - budget) else hi


def sample_budget_sweep(dataset: Dataset, budgets, train_cfg: TrainConfig,
                        probe_cfg: ProbeConfig) -> list[dict]:
    """Train shape embeddings at several per-entity sample budgets and
    report (budget, epsilon, mean samples, shape accuracy, edge MAE)."""
    from .training import _prepare_entities, _resolve_sigma

    entities, domain = _prepare_entities(dataset, "shape")
    sigma = _resolve_sigma(train_cfg, entities, domain)
    rows = []
    for budget in budgets:
        eps = _fit_epsilon(entities, train_cfg.sampling, sigma, int(budget))
        sampling = replace(train_cfg.sampling, epsilon=eps, sigma=sigma)
        cfg = replace(train_cfg, sampling=sampling)
        result = train(dataset, cfg)
        acc = task_shape_classification(dataset, result.embeddings, probe_cfg)
        mae = task_edge_count(dataset, result.embeddings, probe_cfg)
        rows.append({
            "budget": int(budget),
            "epsilon": eps,
            "mean_samples": _mean_total_samples(entities, sampling, sigma),
            "shape_accuracy": acc.value,
            "shape_baseline": acc.baseline,
            "edge_mae": mae.value,
            "edge_baseline": mae.baseline,
        })
    return rows


def results_csv(results) -> str:
    lines = ["task,metric,value,baseline,seed"]
    for r in results:
        lines.append(f"{r.task},{r.metric},{r.value:.9g},{r.baseline:.9g},{r.seed}")
    return "\n".join(lines) + "\n"
