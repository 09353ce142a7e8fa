"""End-to-end embedding training.

Samples every entity, pools the tagged samples into one global set,
shuffles, and mini-batches joint updates of the network and the touched
latent codes.  Shape mode trains per-entity-canonical fields with the
rotation-invariant encoding; location mode trains dataset-canonical
fields with the plain encoding and no latent prior.  Runs are bitwise
reproducible for a fixed config and seed at any worker count, because
every random stream is derived from (seed, purpose, entity) rather than
from execution order.
"""

from __future__ import annotations

import io
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodecoder as ad
from .encoding import EncodingConfig, SHAPE_HEADROOM_OCTAVES, encode, frequency_bounds
from .geometry import (
    BBox,
    GeoEntity,
    dataset_bbox,
    normalize_dataset,
    normalize_shape,
)
from .ingest import Dataset
from .sampling import CANONICAL_BBOX, SamplingParams, build_training_set
from .seeding import spawn_rng

__all__ = [
    "TrainConfig",
    "TrainResult",
    "TrainingDivergedError",
    "CheckpointError",
    "Checkpoint",
    "EmbeddingSet",
    "train",
    "embed_points",
    "combine",
    "reconstruct_field",
    "save_checkpoint",
    "load_checkpoint",
    "save_embeddings",
    "load_embeddings",
    "write_loss_csv",
    "worker_count",
]

CHECKPOINT_MAGIC = b"G2V1"
EMBEDDING_MAGIC = b"G2VE"
_MODE_TAGS = {"shape": 0, "location": 1}
_TAG_MODES = {v: k for k, v in _MODE_TAGS.items()}


class TrainingDivergedError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


def worker_count() -> int:
    """Sampling worker cap; GEO2VEC_THREADS overrides the default."""
    env = os.environ.get("GEO2VEC_THREADS")
    if env:
        return max(1, int(env))
    return min(4, os.cpu_count() or 1)


# Estimated sigmas are capped at this fraction of the domain extent.
# The encoding's base frequency has period 2, so samples far outside the
# canonical space alias onto interior feature vectors and corrupt the
# learned field (degenerate single-entity datasets estimate sigma = 2).
SIGMA_DOMAIN_FRACTION = 0.375

# Desk-scale training headroom: 3 octaves interpolates cleanly between
# the sparse space-grid anchors, where 6 octaves leaves the interior
# under-constrained at these sample budgets.
TRAIN_HEADROOM_OCTAVES = 3.0


@dataclass(frozen=True)
class TrainConfig:
    mode: str
    sampling: SamplingParams = SamplingParams()
    batch_size: int = 128
    epochs: int | None = None          # default: 50 shape / 30 location
    hidden: tuple[int, ...] = (256, 256, 256, 256)
    latent_dim: int = 64
    freq_count: int = 8
    rotation_invariant: bool | None = None  # default: True for shape only
    headroom: float = TRAIN_HEADROOM_OCTAVES
    encoding: EncodingConfig | None = None  # overrides derived bounds
    loss_cfg: ad.LossConfig | None = None   # default per mode
    lr_net: float = 1e-3
    lr_latent: float = 1e-3
    seed: int = 0
    resample_each_epoch: bool = False
    checkpoint_path: str | None = None
    checkpoint_every: int = 1          # epochs between periodic saves

    def __post_init__(self):
        if self.mode not in _MODE_TAGS:
            raise ValueError(f"mode must be one of {sorted(_MODE_TAGS)}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs is not None and self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    def resolved_epochs(self) -> int:
        if self.epochs is not None:
            return self.epochs
        return 50 if self.mode == "shape" else 30

    def resolved_loss(self) -> ad.LossConfig:
        if self.loss_cfg is not None:
            return self.loss_cfg
        if self.mode == "shape":
            return ad.LossConfig(clamp=None, gamma=1e-4, sigma_z=0.1)
        return ad.LossConfig(clamp=None, gamma=0.0, sigma_z=0.1)

    def resolved_rotation(self) -> bool:
        if self.rotation_invariant is not None:
            return self.rotation_invariant
        return self.mode == "shape"


@dataclass
class Checkpoint:
    mode: str
    encoding: EncodingConfig
    params: ad.MlpParams
    table: ad.LatentTable
    opt: ad.OptimizerState | None = None
    epochs_done: int = 0
    loss_cfg: ad.LossConfig | None = None


@dataclass
class EmbeddingSet:
    """Entity id -> embedding vector, all of one dimension."""

    vectors: dict[str, np.ndarray]
    mode: str = "unknown"

    def __post_init__(self):
        dims = {v.shape[0] for v in self.vectors.values()}
        if len(dims) > 1:
            raise ValueError(f"mixed embedding dimensions: {sorted(dims)}")

    @property
    def dim(self) -> int:
        return next(iter(self.vectors.values())).shape[0] if self.vectors else 0

    def matrix(self, ids) -> np.ndarray:
        return np.stack([self.vectors[i] for i in ids])


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    embeddings: EmbeddingSet
    history: list[tuple[int, int, float]]  # (epoch, batch, mean objective)


def _prepare_entities(dataset: Dataset, mode: str) -> tuple[list[GeoEntity], BBox]:
    if len(dataset.entities) == 0:
        raise ValueError("cannot train on an empty dataset")
    if mode == "shape":
        non_points = [e for e in dataset.entities if e.kind != "point"]
        if not non_points:
            raise ValueError("shape mode needs at least one non-point entity")
        return [normalize_shape(e)[0] for e in non_points], CANONICAL_BBOX
    normalized, _ = normalize_dataset(dataset.entities)
    return normalized, dataset_bbox(normalized)


def _resolve_sigma(cfg: TrainConfig, entities, domain: BBox) -> float:
    if cfg.sampling.sigma is not None:
        return cfg.sampling.sigma
    from .sampling import estimate_sigma_loc, estimate_sigma_shp
    if cfg.mode == "shape":
        sigma = estimate_sigma_shp(entities, cfg.sampling.k, cfg.sampling.subset, cfg.seed)
    else:
        sigma = estimate_sigma_loc(entities, cfg.sampling.k, cfg.sampling.subset, cfg.seed)
    return min(sigma, SIGMA_DOMAIN_FRACTION * max(domain.width, domain.height))


def _sample_pool(entities, params: SamplingParams, mode: str, domain: BBox,
                 seed: int, epoch_tag: int | None):
    """Sample every entity (parallel, order-preserving) and pool."""

    def one(entity):
        tokens = [seed, "sample", entity.id]
        if epoch_tag is not None:
            tokens.append(epoch_tag)
        rng = spawn_rng(*tokens)
        return build_training_set(entity, params, mode, domain, rng).combined()

    workers = worker_count()
    if workers > 1 and len(entities) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            sets = list(pool.map(one, entities))
    else:
        sets = [one(e) for e in entities]
    positions = np.concatenate([s.positions for s in sets])
    targets = np.concatenate([s.signed_distances for s in sets])
    rows = np.concatenate([np.full(len(s), i, dtype=np.int64)
                           for i, s in enumerate(sets)])
    return positions, targets, rows


def train(dataset: Dataset, cfg: TrainConfig,
          resume_from: Checkpoint | None = None) -> TrainResult:
    """Run the full training loop and return checkpoint + embeddings.

    With resume_from, continues the exact run that produced the
    checkpoint (same dataset, config, and seed), picking up after its
    recorded epoch count.
    """
    entities, domain = _prepare_entities(dataset, cfg.mode)
    ids = [e.id for e in entities]
    sigma = _resolve_sigma(cfg, entities, domain)
    params_s = cfg.sampling.with_sigma(sigma)
    loss_cfg = cfg.resolved_loss()

    if cfg.encoding is not None:
        enc_cfg = cfg.encoding
    else:
        l_min, l_max = frequency_bounds(entities, cfg.mode, cfg.headroom)
        enc_cfg = EncodingConfig(l_min, l_max, cfg.freq_count,
                                 cfg.resolved_rotation(), cfg.mode)

    if resume_from is not None:
        if resume_from.mode != cfg.mode:
            raise CheckpointError(
                f"checkpoint mode {resume_from.mode!r} does not match "
                f"configured mode {cfg.mode!r}")
        if list(resume_from.table.ids) != ids:
            raise CheckpointError("checkpoint latent table does not cover this dataset")
        if resume_from.opt is None:
            raise CheckpointError("checkpoint has no optimizer state; cannot resume")
        params, table, opt = resume_from.params, resume_from.table, resume_from.opt
        start_epoch = resume_from.epochs_done
    else:
        params, table, opt = ad.init(cfg.hidden, enc_cfg.width, cfg.latent_dim,
                                     ids, loss_cfg.sigma_z, cfg.seed)
        opt.lr_net, opt.lr_latent = cfg.lr_net, cfg.lr_latent
        start_epoch = 0

    epochs = cfg.resolved_epochs()
    history: list[tuple[int, int, float]] = []

    positions = targets = rows = feats = None

    def ensure_pool(epoch_tag):
        nonlocal positions, targets, rows, feats
        positions, targets, rows = _sample_pool(
            entities, params_s, cfg.mode, domain, cfg.seed, epoch_tag)
        feats = encode(positions, enc_cfg).astype(np.float32)
        targets = targets.astype(np.float32)

    ensure_pool(0 if cfg.resample_each_epoch else None)

    checkpoint = Checkpoint(cfg.mode, enc_cfg, params, table, opt,
                            epochs_done=start_epoch, loss_cfg=loss_cfg)
    n = feats.shape[0]
    b = cfg.batch_size
    for epoch in range(start_epoch, epochs):
        if cfg.resample_each_epoch and epoch > start_epoch:
            ensure_pool(epoch)
        perm = spawn_rng(cfg.seed, "shuffle", epoch).permutation(n)
        for bi, lo in enumerate(range(0, n, b)):
            sel = perm[lo : lo + b]
            grads = ad.batch_gradients(params, table, feats[sel], targets[sel],
                                       rows[sel], loss_cfg)
            if not np.isfinite(grads.objective):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch} batch {bi} "
                    f"(step {opt.step}); aborting")
            ad.adam_step(params, table, grads, opt)
            history.append((epoch, bi, grads.objective / len(sel)))
        checkpoint.epochs_done = epoch + 1
        if (cfg.checkpoint_path and cfg.checkpoint_every > 0
                and (epoch + 1) % cfg.checkpoint_every == 0):
            save_checkpoint(checkpoint, cfg.checkpoint_path)

    if cfg.checkpoint_path:
        save_checkpoint(checkpoint, cfg.checkpoint_path)

    vectors = {eid: table.values[i].copy() for i, eid in enumerate(table.ids)}
    if cfg.mode == "shape":
        points = [e for e in dataset.entities if e.kind == "point"]
        if points:
            vectors.update(embed_points(points, cfg.latent_dim).vectors)
    embeddings = EmbeddingSet(vectors, mode=cfg.mode)
    return TrainResult(checkpoint, embeddings, history)


def embed_points(entities, d_shp: int) -> EmbeddingSet:
    """Constant unit-norm shape vector (1/sqrt(d) per component) for
    point entities, which have no shape of their own."""
    if hasattr(entities, "entities"):
        entities = entities.entities
    points = [e for e in entities if e.kind == "point"]
    if not points:
        raise ValueError("no point entities to embed")
    value = np.full(d_shp, 1.0 / np.sqrt(d_shp), dtype=np.float32)
    return EmbeddingSet({e.id: value.copy() for e in points}, mode="shape")


def combine(loc: EmbeddingSet, shp: EmbeddingSet) -> EmbeddingSet:
    """Concatenate per id, location block first."""
    if set(loc.vectors) != set(shp.vectors):
        missing = sorted(set(loc.vectors) ^ set(shp.vectors))
        raise ValueError(f"embedding id sets differ: {missing[:5]}")
    vectors = {eid: np.concatenate([loc.vectors[eid], shp.vectors[eid]])
               for eid in loc.vectors}
    return EmbeddingSet(vectors, mode="combined")


def reconstruct_field(checkpoint: Checkpoint, entity_id: str, resolution: int,
                      domain: BBox = CANONICAL_BBOX) -> np.ndarray:
    """Evaluate the learned field on a uniform grid.

    Returns a (resolution, resolution) float array, row-major from the
    domain's min corner (row i fixes y, column j fixes x).
    """
    if entity_id not in checkpoint.table.index:
        raise KeyError(f"unknown entity id {entity_id!r}")
    grid = domain.grid(resolution)
    feats = encode(grid, checkpoint.encoding).astype(np.float32)
    z = checkpoint.table.vector(entity_id)
    zs = np.broadcast_to(z, (grid.shape[0], z.shape[0]))
    pred = ad.forward_batch(checkpoint.params, zs, feats)
    return pred.astype(np.float64).reshape(resolution, resolution)


# -- binary formats -----------------------------------------------------------


class _Writer:
    def __init__(self):
        self.buf = io.BytesIO()

    def pack(self, fmt: str, *vals):
        self.buf.write(struct.pack("<" + fmt, *vals))

    def array_f32(self, arr: np.ndarray):
        self.buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())

    def getvalue(self) -> bytes:
        return self.buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def pack(self, fmt: str):
        fmt = "<" + fmt
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise CheckpointError("truncated file")
        vals = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return vals if len(vals) > 1 else vals[0]

    def array_f32(self, shape) -> np.ndarray:
        count = int(np.prod(shape))
        size = 4 * count
        if self.pos + size > len(self.data):
            raise CheckpointError("truncated file")
        arr = np.frombuffer(self.data, dtype="<f4", count=count, offset=self.pos)
        self.pos += size
        return arr.reshape(shape).astype(np.float32)


def _write_id(w: _Writer, eid: str):
    raw = eid.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise CheckpointError(f"entity id too long: {eid[:32]!r}...")
    w.pack("H", len(raw))
    w.buf.write(raw)


def _read_id(r: _Reader) -> str:
    n = r.pack("H")
    if r.pos + n > len(r.data):
        raise CheckpointError("truncated file")
    raw = r.data[r.pos : r.pos + n]
    r.pos += n
    return raw.decode("utf-8")


def save_checkpoint(checkpoint: Checkpoint, path: str) -> None:
    """Serialize to the G2V1 format (all tensors little-endian float32)."""
    w = _Writer()
    w.buf.write(CHECKPOINT_MAGIC)
    w.pack("B", _MODE_TAGS[checkpoint.mode])
    e = checkpoint.encoding
    w.pack("ddIB", e.l_min, e.l_max, e.count, int(e.rotation_invariant))
    p = checkpoint.params
    w.pack("I", len(p.hidden))
    for width in p.hidden:
        w.pack("I", width)
    w.pack("d", p.negative_slope)
    w.pack("I", len(p.weights))
    for weight, bias in zip(p.weights, p.biases):
        w.pack("II", weight.shape[0], weight.shape[1])
        w.array_f32(weight)
        w.pack("I", bias.shape[0])
        w.array_f32(bias)
    t = checkpoint.table
    w.pack("II", len(t.ids), t.dim)
    for eid in t.ids:
        _write_id(w, eid)
    w.array_f32(t.values)
    opt = checkpoint.opt
    w.pack("B", 0 if opt is None else 1)
    if opt is not None:
        w.pack("QI", opt.step, checkpoint.epochs_done)
        w.pack("ddddd", opt.lr_net, opt.lr_latent, opt.beta1, opt.beta2, opt.eps)
        lc = checkpoint.loss_cfg or ad.LossConfig()
        w.pack("Bddd", int(lc.clamp is not None), lc.clamp or 0.0, lc.gamma, lc.sigma_z)
        for k in range(len(p.weights)):
            w.array_f32(opt.m_weights[k])
            w.array_f32(opt.v_weights[k])
            w.array_f32(opt.m_biases[k])
            w.array_f32(opt.v_biases[k])
        w.array_f32(opt.m_latents)
        w.array_f32(opt.v_latents)
    with open(path, "wb") as fh:
        fh.write(w.getvalue())


def load_checkpoint(path: str, expect_mode: str | None = None) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad magic {data[:4]!r}; expected {CHECKPOINT_MAGIC!r}")
    r = _Reader(data)
    r.pos = 4
    tag = r.pack("B")
    if tag not in _TAG_MODES:
        raise CheckpointError(f"unknown mode tag {tag}")
    mode = _TAG_MODES[tag]
    if expect_mode is not None and mode != expect_mode:
        raise CheckpointError(
            f"checkpoint mode {mode!r} does not match requested {expect_mode!r}")
    l_min, l_max, count, rot = r.pack("ddIB")
    enc_cfg = EncodingConfig(l_min, l_max, count, bool(rot), mode)
    n_hidden = r.pack("I")
    hidden = tuple(r.pack("I") for _ in range(n_hidden))
    slope = r.pack("d")
    n_layers = r.pack("I")
    weights, biases = [], []
    for _ in range(n_layers):
        rows, cols = r.pack("II")
        weights.append(r.array_f32((rows, cols)))
        blen = r.pack("I")
        biases.append(r.array_f32((blen,)))
    if not weights:
        raise CheckpointError("checkpoint has no layers")
    cond = weights[0].shape[0] // 2
    params = ad.MlpParams(weights, biases, hidden, cond, slope)
    n_ent, dim = r.pack("II")
    ids = tuple(_read_id(r) for _ in range(n_ent))
    table = ad.LatentTable(ids, r.array_f32((n_ent, dim)))
    opt = None
    epochs_done = 0
    loss_cfg = None
    if r.pack("B"):
        step, epochs_done = r.pack("QI")
        lr_net, lr_latent, b1, b2, eps = r.pack("ddddd")
        has_clamp, clamp, gamma, sigma_z = r.pack("Bddd")
        loss_cfg = ad.LossConfig(clamp if has_clamp else None, gamma, sigma_z)
        mw, vw, mb, vb = [], [], [], []
        for k in range(n_layers):
            mw.append(r.array_f32(weights[k].shape))
            vw.append(r.array_f32(weights[k].shape))
            mb.append(r.array_f32(biases[k].shape))
            vb.append(r.array_f32(biases[k].shape))
        opt = ad.OptimizerState(mw, vw, mb, vb,
                                r.array_f32((n_ent, dim)), r.array_f32((n_ent, dim)),
                                step=step, lr_net=lr_net, lr_latent=lr_latent,
                                beta1=b1, beta2=b2, eps=eps)
    if r.pos != len(data):
        raise CheckpointError(f"trailing bytes after checkpoint ({len(data) - r.pos})")
    return Checkpoint(mode, enc_cfg, params, table, opt, epochs_done, loss_cfg)


def save_embeddings(embeddings: EmbeddingSet, path: str) -> None:
    """G2VE format: magic, version byte, count, dim, then per entity the
    id (u16 length + UTF-8) and dim little-endian float32 values."""
    w = _Writer()
    w.buf.write(EMBEDDING_MAGIC)
    w.pack("B", 1)
    w.pack("II", len(embeddings.vectors), embeddings.dim)
    for eid, vec in embeddings.vectors.items():
        _write_id(w, eid)
        w.array_f32(vec)
    with open(path, "wb") as fh:
        fh.write(w.getvalue())


def load_embeddings(path: str) -> EmbeddingSet:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != EMBEDDING_MAGIC:
        raise CheckpointError(f"bad magic {data[:4]!r}; expected {EMBEDDING_MAGIC!r}")
    r = _Reader(data)
    r.pos = 4
    version = r.pack("B")
    if version != 1:
        raise CheckpointError(f"unsupported embedding file version {version}")
    count, dim = r.pack("II")
    vectors = {}
    for _ in range(count):
        eid = _read_id(r)
        vectors[eid] = r.array_f32((dim,))
    if r.pos != len(data):
        raise CheckpointError(f"trailing bytes after embeddings ({len(data) - r.pos})")
    return EmbeddingSet(vectors)


def write_loss_csv(history, path: str) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,batch,loss\n")
        for epoch, batch, value in history:
            fh.write(f"{epoch},{batch},{value:.9g}\n")
