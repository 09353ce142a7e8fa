"""Command-line entry point: synth | train | eval | render.

Every command requires an explicit --seed and writes a fully-resolved
config echo next to its outputs, so any artifact can be regenerated
bit-for-bit.  Exit codes: 0 success, 1 usage error, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import evaluation as ev
from . import training as tr
from .encoding import EncodingConfig
from .geometry import BBox, GeometryError, normalize_shape, sdf_many
from .ingest import (
    Dataset,
    ParseError,
    SynthesisError,
    SynthesisSpec,
    parse_geojson,
    serialize_geojson,
    synthesize_scattered,
    synthesize_shapes,
)
from .sampling import SamplingParams

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

RENDER_MARGIN = 0.25  # canonical units beyond [-1, 1] so corners read as exterior


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="geo2vec", description=__doc__,
                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    sy = sub.add_parser("synth", help="generate a synthetic GeoJSON dataset")
    sy.add_argument("specfile", help="JSON synthesis spec")
    sy.add_argument("--seed", type=int, required=True, help="generator seed")
    sy.add_argument("--out", required=True, help="output GeoJSON path")

    t = sub.add_parser("train", help="train embeddings on a GeoJSON dataset")
    t.add_argument("dataset", help="GeoJSON dataset path")
    t.add_argument("--mode", choices=["shape", "location"], required=True)
    t.add_argument("--seed", type=int, required=True)
    t.add_argument("--out", required=True, help="checkpoint output path")
    t.add_argument("--epsilon", type=float, default=100.0,
                   help="samples per canonical unit (default 100)")
    t.add_argument("--sigma", type=float, default=None,
                   help="sampling deviation; default: estimate from the data")
    t.add_argument("--n-axis", type=int, default=8, help="uniform grid per axis")
    t.add_argument("--batch", type=int, default=128, help="mini-batch size")
    t.add_argument("--epochs", type=int, default=None,
                   help="default: 50 shape / 30 location")
    t.add_argument("--latent-dim", type=int, default=64)
    t.add_argument("--freq-count", type=int, default=8,
                   help="encoding frequencies per input component")
    t.add_argument("--no-rotation-invariant", action="store_true",
                   help="disable the radial encoding block (shape mode ablation)")
    t.add_argument("--resume", metavar="CHECKPOINT", default=None,
                   help="continue a previous run from its checkpoint")
    t.add_argument("--embeddings-out", default=None,
                   help="default: <out> with .g2ve extension")
    t.add_argument("--loss-out", default=None, help="default: <out>.loss.csv")

    e = sub.add_parser("eval", help="probe embeddings on a downstream task")
    e.add_argument("task", choices=["shape", "edge-count", "line-length",
                                    "distance", "topology"])
    e.add_argument("dataset", help="GeoJSON dataset path")
    e.add_argument("--emb", action="append", default=[], metavar="FILE",
                   help="embedding file; give twice (location then shape) "
                        "for tasks on combined embeddings")
    e.add_argument("--seed", type=int, required=True)
    e.add_argument("--out", required=True, help="metrics CSV path")
    e.add_argument("--pairs", type=int, default=600,
                   help="pair count for distance/topology tasks")
    e.add_argument("--combo", default=None,
                   help="topology type combination (default: all feasible)")
    e.add_argument("--probe-epochs", type=int, default=200)

    r = sub.add_parser("render", help="render an SDF grid to a PGM image")
    src = r.add_mutually_exclusive_group(required=True)
    src.add_argument("--truth", metavar="DATASET",
                     help="render the exact field of a dataset entity")
    src.add_argument("--learned", metavar="CHECKPOINT",
                     help="render the learned field from a checkpoint")
    r.add_argument("--entity-id", required=True)
    r.add_argument("--resolution", type=int, required=True)
    r.add_argument("--seed", type=int, required=True)
    r.add_argument("--out", required=True, help="output PGM path")
    return p


def _echo_config(out_path: str, payload: dict):
    path = out_path + ".config.json"
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_dataset(path: str) -> Dataset:
    with open(path, "r") as fh:
        return parse_geojson(fh.read())


# -- synth ---------------------------------------------------------------------

_SPEC_FIELDS = {
    "kind": str,
    "classes": list,
    "count_per_class": int,
    "vertex_noise": (int, float),
    "rotation_range": list,
    "scale_range": list,
    "bbox": list,
    "overlap_fraction": (int, float),
    "seed": int,
}


def _read_spec(path: str, seed: int) -> tuple[str, SynthesisSpec]:
    with open(path, "r") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"spec file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError("spec must be a JSON object")
    unknown = sorted(set(doc) - set(_SPEC_FIELDS))
    if unknown:
        raise ParseError(f"unknown spec field(s): {unknown}")
    for key, typ in _SPEC_FIELDS.items():
        if key in doc and not isinstance(doc[key], typ):
            raise ParseError(f"spec field {key!r} has the wrong type")
    kind = doc.get("kind", "shapes")
    if kind not in ("shapes", "scattered"):
        raise ParseError(f"spec field 'kind' must be 'shapes' or 'scattered', got {kind!r}")
    if "classes" not in doc or "count_per_class" not in doc:
        raise ParseError("spec needs 'classes' and 'count_per_class'")
    kwargs = dict(
        classes=tuple(doc["classes"]),
        count_per_class=doc["count_per_class"],
        seed=seed,
    )
    if "vertex_noise" in doc:
        kwargs["vertex_noise"] = float(doc["vertex_noise"])
    if "rotation_range" in doc:
        kwargs["rotation_range"] = tuple(float(v) for v in doc["rotation_range"])
    if "scale_range" in doc:
        kwargs["scale_range"] = tuple(float(v) for v in doc["scale_range"])
    if "overlap_fraction" in doc:
        kwargs["overlap_fraction"] = float(doc["overlap_fraction"])
    if "bbox" in doc:
        vals = [float(v) for v in doc["bbox"]]
        if len(vals) != 4:
            raise ParseError("spec field 'bbox' must be [min_x, min_y, max_x, max_y]")
        kwargs["bbox"] = BBox(*vals)
    try:
        return kind, SynthesisSpec(**kwargs)
    except (SynthesisError, GeometryError) as exc:
        raise ParseError(f"invalid spec: {exc}") from exc


def cmd_synth(args) -> int:
    kind, spec = _read_spec(args.specfile, args.seed)
    dataset = synthesize_shapes(spec) if kind == "shapes" else synthesize_scattered(spec)
    with open(args.out, "w") as fh:
        fh.write(serialize_geojson(dataset))
    _echo_config(args.out, {
        "command": "synth", "kind": kind, "seed": args.seed,
        "classes": list(spec.classes), "count_per_class": spec.count_per_class,
        "vertex_noise": spec.vertex_noise,
        "rotation_range": list(spec.rotation_range),
        "scale_range": list(spec.scale_range),
        "bbox": [spec.bbox.min_x, spec.bbox.min_y, spec.bbox.max_x, spec.bbox.max_y],
        "overlap_fraction": spec.overlap_fraction,
        "entities": len(dataset),
    })
    print(f"wrote {len(dataset)} entities to {args.out}")
    return EXIT_OK


# -- train ---------------------------------------------------------------------


def cmd_train(args) -> int:
    dataset = _load_dataset(args.dataset)
    emb_path = args.embeddings_out or os.path.splitext(args.out)[0] + ".g2ve"
    loss_path = args.loss_out or os.path.splitext(args.out)[0] + ".loss.csv"
    cfg = tr.TrainConfig(
        mode=args.mode,
        sampling=SamplingParams(sigma=args.sigma, epsilon=args.epsilon,
                                n_axis=args.n_axis, seed=args.seed),
        batch_size=args.batch,
        epochs=args.epochs,
        latent_dim=args.latent_dim,
        freq_count=args.freq_count,
        rotation_invariant=False if args.no_rotation_invariant else None,
        seed=args.seed,
        checkpoint_path=args.out,
        checkpoint_every=1,
    )
    resume_from = tr.load_checkpoint(args.resume, expect_mode=args.mode) \
        if args.resume else None
    _echo_config(args.out, {
        "command": "train", "mode": args.mode, "seed": args.seed,
        "dataset": args.dataset, "epsilon": args.epsilon, "sigma": args.sigma,
        "n_axis": args.n_axis, "batch": args.batch,
        "epochs": cfg.resolved_epochs(), "latent_dim": args.latent_dim,
        "freq_count": args.freq_count,
        "rotation_invariant": cfg.resolved_rotation(),
        "lr_net": cfg.lr_net, "lr_latent": cfg.lr_latent,
        "resume": args.resume, "out": args.out,
        "embeddings_out": emb_path, "loss_out": loss_path,
    })
    try:
        result = tr.train(dataset, cfg, resume_from=resume_from)
    except tr.TrainingDivergedError as exc:
        # the per-epoch checkpoint written before the failing epoch survives
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    tr.save_embeddings(result.embeddings, emb_path)
    tr.write_loss_csv(result.history, loss_path)
    print(f"trained {len(result.embeddings.vectors)} embeddings "
          f"({result.checkpoint.epochs_done} epochs); "
          f"checkpoint {args.out}, embeddings {emb_path}")
    return EXIT_OK


# -- eval ----------------------------------------------------------------------


def _check_ids(dataset: Dataset, emb: tr.EmbeddingSet, needed_ids) -> None:
    missing = sorted(set(needed_ids) - set(emb.vectors))
    if missing:
        raise ParseError(f"embeddings missing {len(missing)} dataset ids "
                         f"(first: {missing[:5]})")


def cmd_eval(args) -> int:
    dataset = _load_dataset(args.dataset)
    if not args.emb:
        raise UsageError("eval requires at least one --emb file")
    embs = [tr.load_embeddings(p) for p in args.emb]
    pc = ev.ProbeConfig(seed=args.seed, epochs=args.probe_epochs)
    results: list[ev.ProbeResult] = []

    if args.task in ("shape", "edge-count"):
        emb = embs[-1]  # shape embeddings
        ids = [e.id for e in dataset.entities if e.kind != "point"]
        _check_ids(dataset, emb, ids)
        if args.task == "shape":
            results.append(ev.task_shape_classification(dataset, emb, pc))
        else:
            results.append(ev.task_edge_count(dataset, emb, pc))
    elif args.task == "line-length":
        if len(embs) == 2:
            emb = tr.combine(embs[0], embs[1])
        else:
            emb = embs[0]
        _check_ids(dataset, emb, [e.id for e in dataset.entities if e.kind == "polyline"])
        results.append(ev.task_line_length(dataset, emb, pc))
    elif args.task == "distance":
        emb = embs[0]
        _check_ids(dataset, emb, dataset.ids)
        pairs = ev.make_distance_pairs(dataset, max(1, args.pairs // 3), args.seed)
        results.append(ev.task_distance(dataset, emb, pairs, pc))
    else:  # topology
        emb = embs[0]
        _check_ids(dataset, emb, dataset.ids)
        combos = [args.combo.lower()] if args.combo else \
            list(ev.BINARY_COMBOS + ev.MULTICLASS_COMBOS)
        for combo in combos:
            try:
                pairs = ev.make_topology_pairs(dataset, combo, args.pairs, args.seed)
            except ev.ClassStarvationError as exc:
                if args.combo:
                    raise
                print(f"skipping {combo}: {exc}", file=sys.stderr)
                continue
            results.append(ev.task_topology(dataset, emb, pairs, pc))
    if not results:
        raise ParseError("no feasible task/combo produced a result")

    csv_text = ev.results_csv(results)
    with open(args.out, "w") as fh:
        fh.write(csv_text)
    _echo_config(args.out, {
        "command": "eval", "task": args.task, "seed": args.seed,
        "dataset": args.dataset, "embeddings": list(args.emb),
        "pairs": args.pairs, "combo": args.combo,
        "probe_epochs": args.probe_epochs, "out": args.out,
    })
    print(csv_text, end="")
    return EXIT_OK


# -- render ---------------------------------------------------------------------


def _field_to_pgm(field: np.ndarray) -> bytes:
    """Affine map of the field to [0, 255] with the zero level set at 128."""
    peak = float(np.abs(field).max())
    if peak == 0.0:
        pixels = np.full(field.shape, 128, dtype=np.uint8)
    else:
        pixels = np.clip(np.rint(128.0 + 127.0 * field / peak), 0, 255).astype(np.uint8)
    header = f"P5\n{field.shape[1]} {field.shape[0]}\n255\n".encode("ascii")
    return header + pixels.tobytes()


def cmd_render(args) -> int:
    if args.resolution < 2:
        raise UsageError("resolution must be >= 2")
    domain = BBox(-1.0 - RENDER_MARGIN, -1.0 - RENDER_MARGIN,
                  1.0 + RENDER_MARGIN, 1.0 + RENDER_MARGIN)
    if args.truth:
        dataset = _load_dataset(args.truth)
        try:
            entity = dataset.by_id(args.entity_id)
        except KeyError:
            raise ParseError(f"unknown entity id {args.entity_id!r}") from None
        canon, _ = normalize_shape(entity)
        field = sdf_many(domain.grid(args.resolution), canon) \
            .reshape(args.resolution, args.resolution)
        source = args.truth
    else:
        checkpoint = tr.load_checkpoint(args.learned)
        try:
            field = tr.reconstruct_field(checkpoint, args.entity_id,
                                         args.resolution, domain)
        except KeyError as exc:
            raise ParseError(str(exc)) from None
        source = args.learned
    with open(args.out, "wb") as fh:
        fh.write(_field_to_pgm(field))
    _echo_config(args.out, {
        "command": "render", "source": source, "entity_id": args.entity_id,
        "resolution": args.resolution, "seed": args.seed, "out": args.out,
        "domain": [domain.min_x, domain.min_y, domain.max_x, domain.max_y],
    })
    print(f"rendered {args.resolution}x{args.resolution} field to {args.out}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        handler = {"synth": cmd_synth, "train": cmd_train,
                   "eval": cmd_eval, "render": cmd_render}[args.command]
        return handler(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, GeometryError, SynthesisError, tr.CheckpointError,
            ev.ProbeError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except tr.TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
