"""Optimisation: AdamW, warmup + cosine schedule, accumulation, early
stopping, stage-1 training, stage-2 fine-tuning and TTA inference."""

from __future__ import annotations

import csv
import math
import sys
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from .augment import AugmentConfig, augment_with_provenance, tta_variants
from .descriptors import DescriptorConfig, featurize, layout
from .diffcore.tensor import Tape, Tensor, concat
from .errors import ConfigError, ShapeError, StratifyError, VersionError
from .metrics import macro_metrics, multiclass_mcc
from .model import (ModelConfig, collate, fit_feature_scaling, forward, init_params, is_classifier,
                    load_checkpoint, reinit_classifier)
from .objective import (ContrastConfig, FocalParams, consistency_loss, contrastive_loss, focal_loss,
                        difficulty_weights, draw_without_replacement, total_loss, update_queues)
from .rng import PortableRng
from .seqio import stratified_split

STAGE_DEFAULTS = {1: (1.2e-4, 1e-2), 2: (8.0e-5, 0.0)}
MONITORS = ("mcc", "acc", "macro_f")


@dataclass(frozen=True)
class TrainConfig:
    stage: int = 1
    lr_peak: float | None = None
    weight_decay: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    warmup_epochs: int = 5
    max_epochs: int = 100
    batch_size: int = 32
    accum_steps: int = 2
    patience: int = 10
    monitor: str = "mcc"
    seed: int = 0
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.stage not in STAGE_DEFAULTS:
            raise ConfigError("train.stage must be 1 or 2")
        lr, wd = STAGE_DEFAULTS[self.stage]
        if self.lr_peak is None:
            object.__setattr__(self, "lr_peak", lr)
        if self.weight_decay is None:
            object.__setattr__(self, "weight_decay", wd)
        if self.lr_peak <= 0 or self.weight_decay < 0:
            raise ConfigError("train.lr_peak must be > 0 and train.weight_decay >= 0")
        if self.patience < 1 or self.accum_steps < 1 or self.batch_size < 1:
            raise ConfigError("train.patience, train.accum_steps and train.batch_size must be >= 1")
        if self.max_epochs < 0 or self.warmup_epochs < 0:
            raise ConfigError("train.max_epochs and train.warmup_epochs must be >= 0")
        if self.monitor not in MONITORS:
            raise ConfigError(f"train.monitor must be one of {MONITORS}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError("train.val_fraction must lie in (0, 1)")

    def to_dict(self):
        return asdict(self)


def lr_at(epoch, cfg):
    """Linear warmup from 0, then half-cosine decay towards 0 at ``max_epochs``."""
    w = cfg.warmup_epochs
    if epoch < w:
        return cfg.lr_peak * epoch / w
    span = cfg.max_epochs - w
    progress = (epoch - w) / span if span > 0 else 0.0
    return cfg.lr_peak * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class OptimizerState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def optimizer_step(params, grads, state, lr, weight_decay, beta1=0.9, beta2=0.999, eps=1e-8):
    """AdamW in place: moment step plus decay applied to the pre-step weights."""
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, theta in params.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {theta.shape}")
        m = state.m.setdefault(name, np.zeros_like(theta))
        v = state.v.setdefault(name, np.zeros_like(theta))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        update = lr * ((m / c1) / (np.sqrt(v / c2) + eps))
        if weight_decay:
            update = update + lr * weight_decay * theta
        theta -= update
    return params


def accumulate(grad_dicts):
    """Average per-micro-batch gradients, matching a mean over micro-batch losses."""
    n = len(grad_dicts)
    out = {k: np.array(v, copy=True) for k, v in grad_dicts[0].items()}
    for g in grad_dicts[1:]:
        for k in out:
            out[k] += g[k]
    return {k: v / n for k, v in out.items()}


class EarlyStopping:
    """Tracks the best monitored value (higher is better).

    An epoch that only ties the best value still counts as an improvement
    when its ``tiebreak`` (lower is better, e.g. validation loss) is smaller.
    """

    def __init__(self, patience):
        self.patience = patience
        self.best = -math.inf
        self.best_tiebreak = math.inf
        self.best_epoch = None
        self.bad_epochs = 0

    def update(self, value, epoch, tiebreak=math.inf):
        if value > self.best or (value == self.best and tiebreak < self.best_tiebreak):
            self.best, self.best_tiebreak, self.best_epoch, self.bad_epochs = value, tiebreak, epoch, 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self):
        return self.bad_epochs >= self.patience


class Encoder:
    """Turns sequences into (embedding rows, descriptor vector) pairs."""

    def __init__(self, embedder, desc_cfg=DescriptorConfig(), cache=True):
        self.embedder = embedder
        self.desc_cfg = desc_cfg
        self._cache = {} if cache else None

    @property
    def dim(self):
        return self.embedder.dim

    def encode(self, seq):
        if self._cache is None:
            return self.embedder.embed(seq), featurize(seq, self.desc_cfg).values
        key = (seq.id, seq.residues)
        if key not in self._cache:
            self._cache[key] = (self.embedder.embed(seq), featurize(seq, self.desc_cfg).values)
        return self._cache[key]

    def encode_derived(self, parent, residues, sources):
        rows = self.embedder.embed_derived(parent, residues, sources)
        return rows, featurize(residues, self.desc_cfg).values

    def batch(self, seqs):
        enc = [self.encode(s) for s in seqs]
        return collate([s.id for s in seqs], [s.residues for s in seqs], [e[0] for e in enc], [e[1] for e in enc])


@dataclass
class FitResult:
    params: object
    model_cfg: ModelConfig
    meta: dict
    dynamics: list
    epochs_run: int


def _log(msg, progress):
    if progress:
        print(msg, file=sys.stderr, flush=True)


def predict_probs(params, cfg, encoder, seqs, batch_size=64):
    out = []
    for i in range(0, len(seqs), batch_size):
        out.append(forward(params, cfg, encoder.batch(seqs[i:i + batch_size])).probs.data)
    return np.concatenate(out) if out else np.zeros((0, cfg.class_count))


def monitor_value(name, labels, probs, class_count):
    pred = probs.argmax(axis=1)
    if name == "mcc":
        return multiclass_mcc(labels, pred, class_count)
    if name == "acc":
        return float((pred == np.asarray(labels)).mean())
    return macro_metrics(labels, pred, class_count)["MacroF"]


def _split_validation(train_ds, tcfg):
    frac = Fraction(tcfg.val_fraction).limit_denominator(1000)
    return stratified_split(train_ds, 1 - frac, tcfg.seed ^ 0x5A17)


def _micro_step(params, mcfg, seqs, encoder, aug_cfg, ccfg, state, fp, rngs):
    """Loss and gradients for one micro-batch; queues updated afterwards."""
    binary = mcfg.class_count == 2
    labels = np.array([s.label for s in seqs])
    twin_of = [k for k, s in enumerate(seqs) if (s.label == 1 or not binary)]
    rows = [encoder.encode(s) for s in seqs]
    for k in twin_of:
        res, src = augment_with_provenance(seqs[k], aug_cfg, rngs["augment"])
        rows.append(encoder.encode_derived(seqs[k], res, src))
    ids = [s.id for s in seqs] + [seqs[k].id + "_aug" for k in twin_of]
    residues = [s.residues for s in seqs] + [None] * len(twin_of)
    batch = collate(ids, residues, [r[0] for r in rows], [r[1] for r in rows])
    n0, nt = len(seqs), len(twin_of)

    stats = {"contrastive": 0.0, "pos_sim": [], "neg_sim": []}
    with Tape() as tape:
        T = params.as_tensors(requires_grad=True)
        out = forward(params, mcfg, batch, training=True, rng=rngs["dropout"], tensors=T)
        l_cls = focal_loss(out.probs[:n0], labels, fp)
        l_cons = 0.0
        if nt:
            twins = np.arange(n0, n0 + nt)
            l_cons = consistency_loss(out.probs[np.array(twin_of)], out.probs[twins])
        l_con = 0.0
        anchors = [j for j, k in enumerate(twin_of) if labels[k] == 1] if binary else []
        live = np.nonzero(labels != 1)[0]
        D = out.e_final.shape[1]
        queued = np.asarray(state.q_neg).reshape(len(state.q_neg), D)
        n_pool = len(queued) + len(live)
        # cold start: no positive prototype before the first enqueue
        if anchors and state.q_pos and n_pool and ccfg.k_neg > 0 and ccfg.lambda1 > 0:
            a_idx = np.array([twin_of[j] for j in anchors])
            p_idx = n0 + np.array(anchors)
            pool_np = np.concatenate([queued, out.e_final.data[live]])
            w, _ = difficulty_weights(pool_np, state.prototype, ccfg.sharpness)
            k = min(ccfg.k_neg, n_pool)
            pick = np.array([draw_without_replacement(w, k, rngs["negatives"]) for _ in anchors])
            parts = ([Tensor(queued)] if len(queued) else []) + ([out.e_final[live]] if len(live) else [])
            pool = concat(parts, axis=0) if len(parts) > 1 else parts[0]
            negs = pool[pick]
            l_con = contrastive_loss(out.e_final[a_idx], out.e_final[p_idx], negs,
                                     log_temperature=T["log_temperature"])
            unit = pool_np / np.linalg.norm(pool_np, axis=1, keepdims=True)
            ea = out.e_final.data[a_idx]
            ea = ea / np.linalg.norm(ea, axis=1, keepdims=True)
            ep = out.e_final.data[p_idx]
            ep = ep / np.linalg.norm(ep, axis=1, keepdims=True)
            stats["contrastive"] = float(l_con.data)
            stats["pos_sim"] = list((ea * ep).sum(axis=1))
            stats["neg_sim"] = list(np.einsum("nd,nkd->nk", ea, unit[pick]).mean(axis=1))
        loss = total_loss(l_con, l_cls, l_cons, ccfg.weights)
        tape.backward(loss)
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in T.items()}
    update_queues(state, out.e_final.data[:n0], labels)
    stats["total"] = float(loss.data)
    return grads, stats


def fit(train_ds, val_ds, mcfg, tcfg, encoder, aug_cfg=AugmentConfig(), ccfg=ContrastConfig(),
        params=None, log_path=None, progress=False, meta=None):
    """Generic training loop shared by both stages.

    Returns the parameters from the best validation epoch (a tie goes to the
    lower validation cross-entropy) together with the per-epoch dynamics rows.
    """
    counts = train_ds.class_counts()
    if min(counts) == 0:
        raise StratifyError(f"training set has an empty class: counts {counts}")
    if train_ds.class_count != mcfg.class_count:
        raise ConfigError(f"dataset has {train_ds.class_count} classes, model {mcfg.class_count}")
    if val_ds is None:
        train_ds, val_ds = _split_validation(train_ds, tcfg)
    if encoder.dim != mcfg.embed_dim:
        raise ConfigError(f"embedder dim {encoder.dim} != model embed_dim {mcfg.embed_dim}")
    root = PortableRng(tcfg.seed)
    rngs = {"shuffle": root.spawn(), "augment": root.spawn(), "dropout": root.spawn(), "negatives": root.spawn()}
    init_seed = root.next_u64()
    if params is None:
        params = init_params(mcfg, init_seed)
        fit_feature_scaling(params, [encoder.encode(s)[1] for s in train_ds.items], layout(encoder.desc_cfg))
    params = params.copy()
    fp = FocalParams.from_counts(train_ds.class_counts(), ccfg.focal_gamma)
    state = ccfg.new_state()
    opt = OptimizerState()
    stopper = EarlyStopping(tcfg.patience)
    val_labels = np.array(val_ds.labels())
    items = list(train_ds.items)
    best = params.copy()
    dynamics = []
    epochs_run = 0

    for epoch in range(tcfg.max_epochs):
        lr = lr_at(epoch, tcfg)
        order = rngs["shuffle"].shuffle(list(range(len(items))))
        micro = [order[i:i + tcfg.batch_size] for i in range(0, len(order), tcfg.batch_size)]
        totals, cons, pos, neg = [], [], [], []
        for g0 in range(0, len(micro), tcfg.accum_steps):
            group = micro[g0:g0 + tcfg.accum_steps]
            parts = []
            for mb in group:
                grads, st = _micro_step(params, mcfg, [items[i] for i in mb], encoder, aug_cfg, ccfg,
                                        state, fp, rngs)
                parts.append(grads)
                totals.append(st["total"])
                if st["pos_sim"]:
                    cons.append(st["contrastive"])
                pos += st["pos_sim"]
                neg += st["neg_sim"]
            optimizer_step(params.tensors, accumulate(parts), opt, lr, tcfg.weight_decay, tcfg.beta1, tcfg.beta2, tcfg.eps)
        probs = predict_probs(params, mcfg, encoder, val_ds.items)
        metric = monitor_value(tcfg.monitor, val_labels, probs, mcfg.class_count)
        val_ce = float(-np.mean(np.log(np.clip(probs[np.arange(len(val_labels)), val_labels], 1e-12, 1.0))))
        row = {"epoch": epoch + 1, "total_loss": float(np.mean(totals)),
               "contrastive_loss": float(np.mean(cons)) if cons else float("nan"),
               "mean_pos_sim": float(np.mean(pos)) if pos else float("nan"),
               "mean_hardneg_sim": float(np.mean(neg)) if neg else float("nan"),
               "val_metric": metric, "val_loss": val_ce, "lr": lr}
        dynamics.append(row)
        epochs_run = epoch + 1
        _log(f"train: stage {tcfg.stage} epoch {epoch + 1} loss {row['total_loss']:.4f} "
             f"val_{tcfg.monitor} {metric:.4f}", progress)
        if stopper.update(metric, epoch + 1, val_ce):
            best = params.copy()
        if stopper.should_stop:
            break

    meta = dict(meta or {})
    meta.update({"stage": tcfg.stage, "epoch": stopper.best_epoch or 0,
                 "metrics": {f"val_{tcfg.monitor}": stopper.best if stopper.best_epoch else None},
                 "train": tcfg.to_dict(), "augment": aug_cfg.to_dict(), "contrast": asdict(ccfg),
                 "descriptor": encoder.desc_cfg.to_dict(), "embedder": encoder.embedder.spec(),
                 "class_names": list(train_ds.class_names)})
    if log_path is not None:
        write_dynamics(dynamics, log_path)
    return FitResult(best, mcfg, meta, dynamics, epochs_run)


DYNAMICS_COLUMNS = ("epoch", "total_loss", "contrastive_loss", "mean_pos_sim", "mean_hardneg_sim", "val_metric")


def write_dynamics(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DYNAMICS_COLUMNS)
        for r in rows:
            w.writerow([r["epoch"]] + [f"{r[c]:.9g}" for c in DYNAMICS_COLUMNS[1:]])


def fit_stage1(train_ds, val_ds, mcfg, tcfg, encoder, aug_cfg=AugmentConfig(), ccfg=ContrastConfig(), **kw):
    if tcfg.stage != 1:
        raise ConfigError("fit_stage1 needs a stage-1 TrainConfig")
    return fit(train_ds, val_ds, mcfg, tcfg, encoder, aug_cfg, ccfg, **kw)


def transfer_params(base_params, base_cfg, class_count, seed):
    """Copy the feature extractor from a checkpoint and attach a fresh head."""
    cfg = ModelConfig.from_dict({**base_cfg.to_dict(), "class_count": class_count})
    return reinit_classifier(base_params, cfg, seed), cfg


def finetune_stage2(base, train_ds, val_ds, tcfg, encoder, aug_cfg=AugmentConfig(), ccfg=ContrastConfig(), **kw):
    """Fine-tune every parameter from ``base`` with a re-initialised classifier.

    ``base`` is a checkpoint path or a ``(params, cfg, meta)`` triple.
    """
    if tcfg.stage != 2:
        raise ConfigError("finetune_stage2 needs a stage-2 TrainConfig")
    base_params, base_cfg, base_meta = load_checkpoint(base) if not isinstance(base, tuple) else base
    expected = {"embed_dim": encoder.dim, "descriptor_dim": len(encoder.encode(train_ds.items[0])[1])}
    for key, val in expected.items():
        if getattr(base_cfg, key) != val:
            raise VersionError(f"checkpoint {key}={getattr(base_cfg, key)} but data gives {val}")
    missing = [n for n in init_params(base_cfg, 0).names() if n not in base_params and not is_classifier(n)]
    if missing:
        raise VersionError(f"checkpoint lacks parameters {missing[:3]}")
    params, cfg = transfer_params(base_params, base_cfg, train_ds.class_count, tcfg.seed)
    meta = {"base_stage": base_meta.get("stage"), "base_epoch": base_meta.get("epoch")}
    return fit(train_ds, val_ds, cfg, tcfg, encoder, aug_cfg, ccfg, params=params, meta=meta, **kw)


def average_probs(prob_rows):
    return np.mean(np.asarray(prob_rows, dtype=np.float64), axis=0)


def tta_predict(params, cfg, seq, encoder, aug_cfg=AugmentConfig(), rng=None):
    """Mean class probabilities over the sequence and its mutation variants."""
    rng = rng if rng is not None else PortableRng(0)
    variants = tta_variants(seq, aug_cfg, rng)
    rows = [encoder.encode(seq)]
    ident = list(range(len(seq)))
    rows += [encoder.encode_derived(seq, v.residues, ident) for v in variants]
    batch = collate([seq.id] + [v.id for v in variants], [seq.residues] + [v.residues for v in variants],
                    [r[0] for r in rows], [r[1] for r in rows])
    return average_probs(forward(params, cfg, batch).probs.data)
