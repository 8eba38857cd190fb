"""Command-line entry point.

Exit codes: 0 success, 1 invalid input or configuration, 2 unreadable or
unwritable files. Progress goes to stderr; artifacts go to files.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .augment import augment_sequence
from .config import RunConfig, dump, load
from .descriptors import featurize, layout
from .embed import FileEmbedder, parse_embedder
from .errors import ConfigError, FormatError, InputError
from .metrics import ScoredPredictions, composition_analysis, evaluate_predictions, pr_curve, roc_curve
from .model import export_interpretability, load_checkpoint, save_checkpoint
from .rng import PortableRng
from .seqio import load_labels, parse_labels, read_fasta, serialize_fasta
from .service import Predictor, make_server
from .train import Encoder, TrainConfig, finetune_stage2, fit_stage1


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def log(msg):
    print(msg, file=sys.stderr, flush=True)


def fmt(x):
    return f"{x:.9g}"


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def run_config(args):
    return load(args.config) if getattr(args, "config", None) else RunConfig()


def resolve_embedder(args, cfg, sidecar=None):
    """Explicit flag, then ``paths.embedder``, then a ``.pemb`` sidecar."""
    spec = getattr(args, "embedder", None) or cfg.paths.embedder
    if spec:
        return parse_embedder(spec)
    if sidecar is not None and Path(sidecar).exists():
        log(f"cli: using embeddings from {sidecar}")
        return FileEmbedder(sidecar)
    hint = f" or provide {sidecar}" if sidecar is not None else ""
    raise ConfigError(f"no embedder: pass --embedder (e.g. fallback:dim=64:seed=0){hint}")


def labeled(fasta, labels, class_count=None):
    return load_labels(labels, read_fasta(fasta), class_count)


def model_config(cfg, embedder, ds):
    if embedder.dim != cfg.model.embed_dim:
        raise ConfigError(f"embedder dim {embedder.dim} != model.embed_dim {cfg.model.embed_dim}")
    if ds.class_count != cfg.model.class_count:
        raise ConfigError(f"labels use {ds.class_count} classes but model.class_count is {cfg.model.class_count}")
    return cfg.model


# commands ------------------------------------------------------------------

def cmd_featurize(args):
    cfg = run_config(args)
    records = read_fasta(args.inp)
    cols = ["id"] + [f"{name}.{k}" for name, _, n in layout(cfg.descriptor) for k in range(n)]
    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
        vecs = list(pool.map(lambda r: featurize(r, cfg.descriptor).values, records))
    write_csv(args.out, cols, ([r.id] + [fmt(v) for v in vec] for r, vec in zip(records, vecs)))
    log(f"featurize: {len(records)} sequences x {len(cols) - 1} features -> {args.out}")


def cmd_augment(args):
    cfg = run_config(args)
    records = read_fasta(args.inp)
    rng = PortableRng(cfg.train.seed if args.seed is None else args.seed)
    out = list(records) if args.keep_original else []
    for rec in records:
        for k in range(args.copies):
            out.append(augment_sequence(rec, cfg.augment, rng, suffix=f"_aug{k}"))
    Path(args.out).write_text(serialize_fasta(out), encoding="utf-8")
    log(f"augment: {len(out)} records -> {args.out}")


def _val_set(args, class_count):
    if bool(args.val_in) != bool(args.val_labels):
        raise ConfigError("--val-in and --val-labels go together")
    return labeled(args.val_in, args.val_labels, class_count) if args.val_in else None


def cmd_train(args):
    cfg = run_config(args)
    if cfg.train.stage != 1:
        raise ConfigError("the train command needs train.stage = 1")
    ds = labeled(args.inp, args.labels, cfg.model.class_count)
    embedder = resolve_embedder(args, cfg, Path(args.inp).with_suffix(".pemb"))
    mcfg = model_config(cfg, embedder, ds)
    res = fit_stage1(ds, _val_set(args, ds.class_count), mcfg, cfg.train, Encoder(embedder, cfg.descriptor),
                     cfg.augment, cfg.contrast, log_path=args.dynamics, progress=True)
    save_checkpoint(res.params, res.model_cfg, res.meta, args.out)
    log(f"train: best epoch {res.meta['epoch']} of {res.epochs_run} -> {args.out}")


def stage2_config(tcfg):
    """Keep an explicit stage-2 section; otherwise switch to stage-2 defaults."""
    if tcfg.stage == 2:
        return tcfg
    return TrainConfig(**{**tcfg.to_dict(), "stage": 2, "lr_peak": None, "weight_decay": None})


def cmd_finetune(args):
    cfg = run_config(args)
    ds = labeled(args.inp, args.labels)
    embedder = resolve_embedder(args, cfg, Path(args.inp).with_suffix(".pemb"))
    base = load_checkpoint(args.checkpoint)
    res = finetune_stage2(base, ds, _val_set(args, ds.class_count), stage2_config(cfg.train),
                          Encoder(embedder, cfg.descriptor), cfg.augment, cfg.contrast,
                          log_path=args.dynamics, progress=True)
    save_checkpoint(res.params, res.model_cfg, res.meta, args.out)
    log(f"finetune: best epoch {res.meta['epoch']} of {res.epochs_run} -> {args.out}")


def cmd_predict(args):
    cfg = run_config(args)
    params, mcfg, meta = load_checkpoint(args.checkpoint)
    records = read_fasta(args.inp)
    embedder = resolve_embedder(args, cfg, Path(args.inp).with_suffix(".pemb"))
    seed = cfg.train.seed if args.seed is None else args.seed
    pred = Predictor(params, mcfg, meta, embedder, tta=args.tta, aug_cfg=cfg.augment if args.config else None,
                     seed=seed)
    names = pred.class_names
    rows, outs = [], []
    for rec in records:
        probs, out = pred.run(rec)
        outs.append(out)
        rows.append([rec.id] + [fmt(p) for p in probs] + [names[int(np.argmax(probs))], fmt(out.lam[0])])
    write_csv(args.out, ["id"] + [f"prob_{n}" for n in names] + ["label", "gate_lambda"], rows)
    if args.interpret:
        export_interpretability(outs, args.interpret)
    log(f"predict: {len(rows)} sequences -> {args.out}")


def _read_predictions(path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from None
    if not rows or rows[0][0] != "id":
        raise FormatError(f"{path}: expected a predictions CSV with an 'id' column")
    head = rows[0]
    pcols = [k for k, h in enumerate(head) if h.startswith("prob_")]
    if len(pcols) < 2:
        raise FormatError(f"{path}: needs at least two prob_* columns")
    try:
        probs = {r[0]: [float(r[k]) for k in pcols] for r in rows[1:] if r}
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: {exc}") from None
    return [head[k][5:] for k in pcols], probs


def _clean(doc):
    if isinstance(doc, dict):
        return {k: _clean(v) for k, v in doc.items()}
    if isinstance(doc, (list, tuple)):
        return [_clean(v) for v in doc]
    if isinstance(doc, (float, np.floating)):
        return None if math.isnan(doc) else float(doc)
    if isinstance(doc, np.integer):
        return int(doc)
    if isinstance(doc, np.bool_):
        return bool(doc)
    return doc


def cmd_evaluate(args):
    names, probs = _read_predictions(args.predictions)
    labels = parse_labels(Path(args.labels).read_bytes())
    missing = [i for i in labels if i not in probs]
    if missing:
        raise InputError(f"no prediction for ids {missing[:5]}")
    ids = list(labels)
    P = np.array([probs[i] for i in ids])
    P = P / P.sum(axis=1, keepdims=True)
    sp = ScoredPredictions(ids, [labels[i] for i in ids], P)
    if sp.labels.max(initial=0) >= P.shape[1]:
        raise InputError("labels exceed the number of probability columns")
    doc = evaluate_predictions(sp, P.shape[1])
    doc["class_names"] = names
    Path(args.out).write_text(json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if args.curves and P.shape[1] == 2 and doc.get("AUROC") is not None:
        stem = Path(args.curves)
        fpr, tpr, thr = roc_curve(sp)
        write_csv(f"{stem}_roc.csv", ["fpr", "tpr", "threshold"],
                  ([fmt(a), fmt(b), fmt(c)] for a, b, c in zip(fpr, tpr, thr)))
        rec, pre, thr = pr_curve(sp)
        write_csv(f"{stem}_pr.csv", ["recall", "precision", "threshold"],
                  ([fmt(a), fmt(b), fmt(c)] for a, b, c in zip(rec, pre, thr)))
    log(f"evaluate: {len(ids)} predictions -> {args.out}")


def cmd_compose_stats(args):
    cfg = run_config(args)
    ds = labeled(args.inp, args.labels)
    a = [it for it in ds.items if it.label == args.positive]
    b = [it for it in ds.items if it.label != args.positive]
    rows = composition_analysis(a, b, cfg.metrics.composition_eps)
    cols = ["residue", "mean_a", "mean_b", "log2_fold_change", "t_statistic", "df", "p_value", "significance"]
    write_csv(args.out, cols, ([r[c] if isinstance(r[c], str) else fmt(r[c]) for c in cols] for r in rows))
    log(f"compose-stats: {len(a)} vs {len(b)} sequences -> {args.out}")


def cmd_serve(args):
    cfg = run_config(args)
    embedder = resolve_embedder(args, cfg)
    pred = Predictor.from_checkpoint(args.checkpoint, embedder, tta=args.tta, seed=cfg.train.seed)
    try:
        server = make_server(pred, args.host, args.port)
    except OSError as exc:
        raise FormatError(f"cannot bind {args.host}:{args.port}: {exc}") from None
    log(f"serve: listening on http://{args.host}:{server.server_address[1]}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()


def cmd_config(args):
    sys.stdout.write(dump(run_config(args)))


# parser --------------------------------------------------------------------

def build_parser():
    p = Parser(prog="avpgate", description="Peptide activity prediction toolkit")
    p.add_argument("--version", action="version", version=f"avpgate {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=Parser)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="key=value run configuration")
        sp.set_defaults(fn=fn)
        return sp

    sp = add("featurize", cmd_featurize, "descriptor CSV from a FASTA file")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--threads", type=int, default=1)

    sp = add("augment", cmd_augment, "augmented FASTA")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--copies", type=int, default=1)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--keep-original", action="store_true")

    for name, fn, help_ in (("train", cmd_train, "stage-1 training"), ("finetune", cmd_finetune, "stage-2 fine-tuning")):
        sp = add(name, fn, help_)
        if name == "finetune":
            sp.add_argument("--checkpoint", required=True)
        sp.add_argument("--in", dest="inp", required=True)
        sp.add_argument("--labels", required=True)
        sp.add_argument("--out", required=True)
        sp.add_argument("--val-in")
        sp.add_argument("--val-labels")
        sp.add_argument("--dynamics", help="per-epoch CSV log")
        sp.add_argument("--embedder")

    sp = add("predict", cmd_predict, "per-sequence probabilities")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--embedder")
    sp.add_argument("--tta", action="store_true")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--interpret", help="directory for gate and attention CSVs")

    sp = add("evaluate", cmd_evaluate, "metrics JSON from predictions")
    sp.add_argument("--predictions", required=True)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--curves", help="prefix for ROC and PR curve CSVs")

    sp = add("compose-stats", cmd_compose_stats, "per-residue composition comparison")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--positive", type=int, default=1)

    sp = add("serve", cmd_serve, "JSON prediction service")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--port", type=int, default=8000)
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--embedder")
    sp.add_argument("--tta", action="store_true")

    add("config", cmd_config, "print the effective configuration")
    return p


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage())
        args.fn(args)
    except UsageError as exc:
        sys.stderr.write(str(exc))
        return 1
    except InputError as exc:
        log(f"error: {exc}")
        return 1
    except FormatError as exc:
        log(f"error: {exc}")
        return 2
    except OSError as exc:
        log(f"error: io: {exc}")
        return 2
    return 0


def main():
    sys.exit(run())
