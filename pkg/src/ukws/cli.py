"""Command-line pipeline: build-dataset, train, enroll, evaluate, det, synth."""

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import dataset as ds
from .embedder import (
    LOSSES,
    Embedder,
    EmbedderConfig,
    TrainSchedule,
    load_checkpoint,
    save_checkpoint,
    train_stage,
)
from .enrollment import enroll, load_prototypes, prototypes_to_json, save_prototypes
from .evaluation import FAR_LEVELS, det_curve, evaluate, read_trials, write_det_csv, write_trials
from .features import MfccConfig, load_features
from .losses import AmSoftmaxConfig

PROG = "ukws"
SEED_ENV = "UKWS_SEED"


class CliError(Exception):
    pass


def _csv_list(text):
    return [t.strip().lower() for t in text.split(",") if t.strip()]


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _load_all(entries, threads, mfcc_cfg=MfccConfig()):
    paths = [e.audio_path for e in entries]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            feats = list(pool.map(lambda p: load_features(p, mfcc_cfg), paths))
    else:
        feats = [load_features(p, mfcc_cfg) for p in paths]
    return feats


def _features_by_label(entries, threads, label_fn=lambda e: e.keyword):
    feats = _load_all(entries, threads)
    groups = {}
    for e, f in zip(entries, feats):
        groups.setdefault(label_fn(e), []).append(f)
    shapes = {f.shape for f in feats}
    if len(shapes) > 1:
        raise CliError(f"feature matrices have mixed shapes: {sorted(shapes)}")
    return {k: np.stack(v) for k, v in groups.items()}


def _emit(obj):
    print(json.dumps(obj, sort_keys=True))


def cmd_build_dataset(args):
    entries = ds.read_manifest(args.manifest)
    cfg = ds.FilterConfig(
        cer_threshold=args.cer_threshold,
        drop_top_frequent=args.drop_top,
        drop_single_letter=not args.keep_single_letter,
        excluded_keywords=frozenset(_csv_list(args.exclude)),
        inventory_size=args.inventory_size,
        samples_per_keyword=args.samples_per_keyword,
        seed=args.seed,
    )
    kept, stats = ds.filter_with_stats(entries, cfg)
    ds.write_manifest(args.out, kept)
    summary = {"input": len(entries), "kept": stats.kept, "dropped": stats.dropped,
               "top_frequent": stats.top_frequent}
    if args.inventory:
        inv = ds.build_inventory(kept, cfg)
        ds.write_inventory(args.inventory, inv)
        summary["inventory_keywords"] = len(inv)
        summary["inventory_entries"] = sum(len(v) for v in inv.values())
    _emit(summary)


def cmd_train(args):
    if args.stage == "finetune" and not args.init:
        raise argparse.ArgumentTypeError("--stage finetune requires --init CHECKPOINT")
    entries = ds.read_manifest(args.data)
    label_fn = (lambda e: ds.finetune_label(e.keyword)) if args.merge_unknown else (lambda e: e.keyword)
    try:
        inventory = _features_by_label(entries, args.threads, label_fn)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    if not inventory:
        raise CliError(f"{args.data}: no training entries")
    frames, coeffs = next(iter(inventory.values())).shape[1:]
    if args.init:
        model = load_checkpoint(args.init)
        if (model.config.n_frames, model.config.n_coeffs) != (frames, coeffs):
            raise CliError(
                f"checkpoint expects ({model.config.n_frames}, {model.config.n_coeffs}) features, "
                f"data has ({frames}, {coeffs})"
            )
    else:
        model = Embedder(EmbedderConfig(
            n_frames=frames, n_coeffs=coeffs, pooling=not args.no_pooling,
            hidden_sizes=tuple(int(h) for h in args.hidden.split(",") if h),
            embedding_dim=args.embedding_dim, seed=args.seed,
        ))
    base = TrainSchedule.pretrain if args.stage == "pretrain" else TrainSchedule.finetune
    overrides = {"epochs": args.epochs, "decay": args.decay, "per_class": args.per_class}
    if args.batch_size:
        overrides["batch_size"] = args.batch_size
    if args.lr:
        overrides["initial_lr"] = args.lr
    schedule = base(**overrides)
    am = AmSoftmaxConfig(margin=args.margin, scale=args.scale)
    result = train_stage(model, inventory, args.loss, schedule, seed=args.seed, am_cfg=am)
    save_checkpoint(args.out, result.model)
    if args.log:
        with open(args.log, "w", encoding="utf-8", newline="\n") as fh:
            for rec in result.log:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    _emit({"checkpoint": args.out, "epochs": len(result.log),
           "final_loss": result.log[-1]["train_loss"] if result.log else None,
           "classes": len(inventory)})


def cmd_enroll(args):
    model = load_checkpoint(args.checkpoint)
    before = model.checksum()
    groups = ds.group_by_keyword(ds.read_manifest(args.manifest))
    wanted = _csv_list(args.keywords) if args.keywords else sorted(groups)
    chosen = []
    for kw in wanted:
        have = len(groups.get(kw, []))
        if have < args.k:
            raise CliError(f"missing samples for keyword {kw!r}: need {args.k}, have {have}")
        chosen.extend(groups[kw][: args.k])
    feats = _features_by_label(chosen, args.threads)
    protos = enroll({kw: model.embed(f) for kw, f in feats.items()}, normalize=args.normalize)
    save_prototypes(args.out, protos)
    if args.json:
        Path(args.json).write_text(prototypes_to_json(protos) + "\n", encoding="utf-8")
    if model.checksum() != before:
        raise CliError("model parameters changed during enrollment")
    _emit({"prototypes": args.out, "keywords": len(protos), "shots": args.k,
           "param_sha256": before})


def _embed_entries(model, entries, threads):
    feats = _load_all(entries, threads)
    if not feats:
        return []
    emb = model.embed(np.stack(feats))
    return [(e.keyword, v) for e, v in zip(entries, emb)]


def cmd_evaluate(args):
    model = load_checkpoint(args.checkpoint)
    protos = load_prototypes(args.prototypes)
    if protos and protos[0].vector.shape[0] != model.config.embedding_dim:
        raise CliError(
            f"prototype dimension {protos[0].vector.shape[0]} does not match checkpoint "
            f"embedding_dim {model.config.embedding_dim}"
        )
    queries = _embed_entries(model, ds.read_manifest(args.queries), args.threads)
    impostors = []
    if args.impostors:
        imp = ds.read_manifest(args.impostors)
        impostors = [(f"impostor:{kw}", v) for kw, v in _embed_entries(model, imp, args.threads)]
    try:
        report, trials, curve = evaluate(queries, protos, impostors, f1_mode=args.f1_mode)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    report.config = {
        "checkpoint_sha256": _sha256(args.checkpoint),
        "prototypes_sha256": _sha256(args.prototypes),
        "queries": Path(args.queries).name,
        "impostors": Path(args.impostors).name if args.impostors else None,
        "far_levels": list(FAR_LEVELS),
        "shots": sorted({p.shots for p in protos}),
        "seed": args.seed,
    }
    Path(args.report).write_text(report.to_json(), encoding="utf-8")
    if args.det:
        write_det_csv(args.det, curve)
    if args.trials:
        write_trials(args.trials, trials)
    _emit({"eer": report.eer, "frr_at_far": report.frr_at_far, "f1": report.f1,
           "accuracy": report.accuracy})


def cmd_det(args):
    trials = read_trials(args.trials)
    write_det_csv(args.out, det_curve(trials))


def cmd_synth(args):
    from .synthetic import write_tone_corpus

    root = Path(args.out)
    root.mkdir(parents=True, exist_ok=True)
    records = write_tone_corpus(root, _csv_list(args.keywords), args.per_keyword, seed=args.seed)
    manifest = root / "manifest.jsonl"
    with open(manifest, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    _emit({"manifest": str(manifest), "entries": len(records)})


def build_parser():
    default_seed = int(os.environ.get(SEED_ENV, "0"))
    p = argparse.ArgumentParser(prog=PROG, description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=default_seed)
        sp.add_argument("--threads", type=int, default=1)

    b = sub.add_parser("build-dataset", help="CER/frequency filtering and inventory selection")
    b.add_argument("--manifest", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--inventory")
    b.add_argument("--cer-threshold", type=float, default=0.0)
    b.add_argument("--drop-top", type=int, default=13)
    b.add_argument("--keep-single-letter", action="store_true")
    b.add_argument("--exclude", default=",".join(ds.USER_DEFINED),
                   help="comma-separated keywords to drop (default: the user-defined split)")
    b.add_argument("--inventory-size", type=int, default=1000)
    b.add_argument("--samples-per-keyword", type=int, default=1000)
    common(b)
    b.set_defaults(func=cmd_build_dataset)

    t = sub.add_parser("train", help="pretrain or finetune the embedder")
    t.add_argument("--stage", choices=("pretrain", "finetune"), required=True)
    t.add_argument("--loss", choices=LOSSES, default="ap")
    t.add_argument("--data", required=True, help="manifest or inventory JSONL")
    t.add_argument("--out", required=True)
    t.add_argument("--init")
    t.add_argument("--epochs", type=int, default=10)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--decay", type=float, default=0.95)
    t.add_argument("--per-class", type=int, default=2)
    t.add_argument("--margin", type=float, default=0.2)
    t.add_argument("--scale", type=float, default=30.0)
    t.add_argument("--hidden", default="256,128")
    t.add_argument("--embedding-dim", type=int, default=64)
    t.add_argument("--no-pooling", action="store_true")
    t.add_argument("--merge-unknown", action="store_true",
                   help="label GSC unknown-split keywords as one 'unknown' class")
    t.add_argument("--log", help="per-epoch metrics JSONL")
    common(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("enroll", help="build k-shot prototypes")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--k", type=int, required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--keywords")
    e.add_argument("--json")
    e.add_argument("--normalize", action="store_true")
    common(e)
    e.set_defaults(func=cmd_enroll)

    v = sub.add_parser("evaluate", help="EER, FRR@FAR, F1 and accuracy")
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--prototypes", required=True)
    v.add_argument("--queries", required=True)
    v.add_argument("--report", required=True)
    v.add_argument("--det")
    v.add_argument("--trials")
    v.add_argument("--impostors")
    v.add_argument("--f1-mode", choices=("macro", "binary"), default="macro")
    common(v)
    v.set_defaults(func=cmd_evaluate)

    d = sub.add_parser("det", help="export a DET curve from a trials file")
    d.add_argument("--trials", required=True)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_det)

    s = sub.add_parser("synth", help="write a synthetic tone-burst keyword corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--keywords", required=True)
    s.add_argument("--per-keyword", type=int, default=20)
    common(s)
    s.set_defaults(func=cmd_synth)
    return p


INPUTS = {
    "build-dataset": ("manifest",),
    "train": ("data", "init"),
    "enroll": ("checkpoint", "manifest"),
    "evaluate": ("checkpoint", "prototypes", "queries", "impostors"),
    "det": ("trials",),
}


def _fail(message, code):
    print(f"{PROG}: error: {message}", file=sys.stderr)
    return code


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in INPUTS.get(args.command, ()):
        path = getattr(args, name, None)
        if path and not Path(path).exists():
            return _fail(f"input file not found: {path}", 2)
    try:
        args.func(args)
    except argparse.ArgumentTypeError as exc:
        return _fail(str(exc), 2)
    except (CliError, ValueError, OSError) as exc:
        return _fail(str(exc), 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
