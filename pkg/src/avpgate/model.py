"""Dual-branch gated peptide classifier.

Each position carries its residue embedding concatenated with the global
descriptor vector. A CNN branch (parallel kernel widths, max-merged) and a
BiLSTM branch are each attention-pooled; a learned scalar gate mixes them
and an MLP head produces class probabilities.

Because the descriptor block is identical at every position, its share of
any position-wise linear map is computed once per sample and broadcast
(``factored=True``). This is algebraically the same network as feeding the
literal tiled input; ``factored=False`` runs the literal version.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .diffcore import kernels
from .diffcore.ops import attention_pool, conv1d, dropout, linear, lstm_sequence, lstm_weights
from .diffcore.tensor import Tensor, as_tensor, concat, maximum, relu, reshape, sigmoid, softmax, tanh
from .diffcore.tensor import sum as tsum
from .errors import ConfigError, CorruptionError, FormatError, LengthError, ShapeError, VersionError
from .rng import PortableRng

MAGIC = b"AVPCKPT"
FORMAT_VERSION = 2
GATES = ("f", "i", "C", "o")


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 64
    descriptor_dim: int = 3270
    conv_kernels: tuple = (3, 5)
    conv_channels: int = 64
    lstm_hidden: int = 64
    attn_dim: int = 64
    gate_hidden: int = 32
    mlp_hidden: tuple = (128, 64)
    class_count: int = 2
    dropout: float = 0.3
    fmatch: str = "linear"
    gate_per_dim: bool = False
    init_temperature: float = 0.07

    def __post_init__(self):
        object.__setattr__(self, "conv_kernels", tuple(int(k) for k in self.conv_kernels))
        object.__setattr__(self, "mlp_hidden", tuple(int(k) for k in self.mlp_hidden))
        dims = (self.embed_dim, self.descriptor_dim, self.conv_channels, self.lstm_hidden,
                self.attn_dim, self.gate_hidden)
        if min(dims) < 1 or not self.conv_kernels or min(self.conv_kernels) < 1:
            raise ConfigError("model dimensions and kernel sizes must be >= 1")
        if any(h < 1 for h in self.mlp_hidden):
            raise ConfigError("model.mlp_hidden entries must be >= 1")
        if self.class_count < 2:
            raise ConfigError("model.class_count must be >= 2")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("model.dropout must lie in [0, 1)")
        if self.fmatch not in ("linear", "identity"):
            raise ConfigError("model.fmatch must be 'linear' or 'identity'")
        if self.fmatch == "identity" and self.conv_channels != 2 * self.lstm_hidden:
            raise ConfigError("identity f_match needs conv_channels == 2 * lstm_hidden")
        if not 0.01 <= self.init_temperature <= 1.0:
            raise ConfigError("model.init_temperature must lie in [0.01, 1]")

    @property
    def max_kernel(self):
        return max(self.conv_kernels)

    @property
    def fused_dim(self):
        return 2 * self.lstm_hidden

    def to_dict(self):
        d = asdict(self)
        d["conv_kernels"] = list(self.conv_kernels)
        d["mlp_hidden"] = list(self.mlp_hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class ModelParams:
    """Named trainable arrays plus non-trainable feature-scaling buffers."""

    def __init__(self, tensors, buffers=None):
        self.tensors = dict(tensors)
        self.buffers = dict(buffers or {})

    def __getitem__(self, name):
        return self.tensors[name]

    def __contains__(self, name):
        return name in self.tensors

    def names(self):
        return list(self.tensors)

    def copy(self):
        return ModelParams({k: v.copy() for k, v in self.tensors.items()},
                           {k: v.copy() for k, v in self.buffers.items()})

    def as_tensors(self, requires_grad=False):
        return {k: Tensor(v, requires_grad=requires_grad, name=k) for k, v in self.tensors.items()}

    def n_values(self):
        return sum(v.size for v in self.tensors.values())


def is_classifier(name):
    return name.startswith(("mlp", "head."))


def _uniform(rng, shape, fan_in, fan_out):
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return (2.0 * rng.uniform_array(shape) - 1.0) * a


def _init_classifier(cfg, rng, out):
    prev = cfg.fused_dim
    for k, h in enumerate(cfg.mlp_hidden):
        out[f"mlp{k}.W"] = _uniform(rng, (prev, h), prev, h)
        out[f"mlp{k}.b"] = np.zeros(h)
        prev = h
    out["head.W"] = _uniform(rng, (prev, cfg.class_count), prev, cfg.class_count)
    out["head.b"] = np.zeros(cfg.class_count)
    return out


def init_params(cfg, seed=0):
    rng = PortableRng(seed)
    din = cfg.embed_dim + cfg.descriptor_dim
    K, Dh = cfg.conv_channels, cfg.lstm_hidden
    p = {}
    for h in cfg.conv_kernels:
        p[f"conv{h}.W"] = _uniform(rng, (h, din, K), h * din, K)
        p[f"conv{h}.b"] = np.zeros(K)
    for d in ("fwd", "bwd"):
        for g in GATES:
            p[f"lstm_{d}.W_{g}"] = _uniform(rng, (Dh + din, Dh), Dh + din, Dh)
            p[f"lstm_{d}.b_{g}"] = np.ones(Dh) if g == "f" else np.zeros(Dh)
    for name, dim in (("attn_cnn", K), ("attn_lstm", 2 * Dh)):
        p[f"{name}.W"] = _uniform(rng, (dim, cfg.attn_dim), dim, cfg.attn_dim)
        p[f"{name}.w"] = _uniform(rng, (cfg.attn_dim,), cfg.attn_dim, 1)
    if cfg.fmatch == "linear":
        p["fmatch.W"] = _uniform(rng, (K, 2 * Dh), K, 2 * Dh)
        p["fmatch.b"] = np.zeros(2 * Dh)
    gate_out = 2 * Dh if cfg.gate_per_dim else 1
    p["gate.W1"] = _uniform(rng, (K + 2 * Dh, cfg.gate_hidden), K + 2 * Dh, cfg.gate_hidden)
    p["gate.b1"] = np.zeros(cfg.gate_hidden)
    p["gate.W2"] = _uniform(rng, (cfg.gate_hidden, gate_out), cfg.gate_hidden, gate_out)
    p["gate.b2"] = np.zeros(gate_out)
    _init_classifier(cfg, rng, p)
    p["log_temperature"] = np.array([math.log(cfg.init_temperature)])
    buffers = {"feat_mean": np.zeros(cfg.descriptor_dim), "feat_std": np.ones(cfg.descriptor_dim)}
    return ModelParams(p, buffers)


def reinit_classifier(params, cfg, seed):
    """Fresh head for ``cfg.class_count`` classes; everything else copied."""
    fresh = _init_classifier(cfg, PortableRng(seed), {})
    kept = {k: v.copy() for k, v in params.tensors.items() if not is_classifier(k)}
    return ModelParams({**kept, **fresh}, {k: v.copy() for k, v in params.buffers.items()})


def fit_feature_scaling(params, feats, blocks=None):
    """Centre every component; divide each block by one shared scale.

    ``blocks`` is a list of ``(name, offset, size)`` spans (the descriptor
    layout). Sharing the scale within a block keeps near-constant components
    such as rare dipeptide counts from being blown up to unit variance.
    Without blocks each component is its own block.
    """
    feats = np.asarray(feats, dtype=np.float64)
    mean = feats.mean(axis=0)
    centred = feats - mean
    if blocks is None:
        blocks = [(None, j, 1) for j in range(feats.shape[1])]
    std = np.ones(feats.shape[1])
    for _, off, n in blocks:
        s = math.sqrt(float((centred[:, off:off + n] ** 2).mean())) if len(feats) else 0.0
        std[off:off + n] = s if s > 1e-8 else 1.0
    params.buffers["feat_mean"] = mean
    params.buffers["feat_std"] = std
    return params


# batching ------------------------------------------------------------------

@dataclass
class Batch:
    ids: list
    residues: list
    E: np.ndarray          # (B, Lmax, De), zero rows past each length
    F: np.ndarray          # (B, Ds) raw descriptor vectors
    lengths: np.ndarray

    @property
    def mask(self):
        return (np.arange(self.E.shape[1])[None, :] < self.lengths[:, None]).astype(np.float64)

    def __len__(self):
        return len(self.ids)


def collate(ids, residues, embeddings, features):
    lengths = np.array([len(e) for e in embeddings], dtype=np.int64)
    if len(lengths) == 0:
        raise ShapeError("empty batch")
    De = embeddings[0].shape[1]
    E = np.zeros((len(embeddings), int(lengths.max()), De))
    for k, e in enumerate(embeddings):
        if e.shape[1] != De:
            raise ShapeError(f"embedding dim {e.shape[1]} != {De}")
        E[k, :len(e)] = e
    F = np.stack([np.asarray(getattr(f, "values", f), dtype=np.float64) for f in features])
    return Batch(list(ids), list(residues), E, F, lengths)


def build_input(emb, feat):
    """Literal fused input: each row is ``emb[t] ++ feat``."""
    rows = np.asarray(getattr(emb, "rows", emb), dtype=np.float64)
    vals = np.asarray(getattr(feat, "values", feat), dtype=np.float64)
    if rows.ndim != 2 or vals.ndim != 1:
        raise ShapeError(f"build_input expects (L, De) and (Ds,), got {rows.shape} and {vals.shape}")
    if not np.isfinite(vals).all():
        raise ShapeError("descriptor vector has non-finite entries")
    return np.concatenate([rows, np.broadcast_to(vals, (rows.shape[0], vals.size))], axis=1)


# forward -------------------------------------------------------------------

@dataclass
class ForwardOutput:
    v_cnn: Tensor
    v_bilstm: Tensor
    gate_lambda: Tensor
    e_final: Tensor
    logits: Tensor
    probs: Tensor
    attn_cnn: np.ndarray
    attn_bilstm: np.ndarray
    lengths: np.ndarray
    ids: list = field(default_factory=list)
    residues: list = field(default_factory=list)
    max_kernel: int = 1

    @property
    def lam(self):
        """Per-sample gate value (mean over dimensions for a per-dim gate)."""
        return self.gate_lambda.data.mean(axis=-1)

    def residue_attention(self, k):
        """(cnn, bilstm) attention over residues of sample ``k``.

        A merged CNN window covers ``max_kernel`` residues; its weight is
        spread evenly over them so each profile still sums to 1.
        """
        L = int(self.lengths[k])
        H = self.max_kernel
        win = self.attn_cnn[k, :L - H + 1]
        cnn = np.zeros(L)
        for j, a in enumerate(win):
            cnn[j:j + H] += a / H
        return cnn, self.attn_bilstm[k, :L].copy()


def _expand_mid(t):
    """(B, D) -> (B, 1, D)."""
    return reshape(t, (t.shape[0], 1, t.shape[1]))


def forward(params, cfg, batch, training=False, rng=None, tensors=None, factored=True):
    T = tensors if tensors is not None else params.as_tensors()
    B, Lmax, De = batch.E.shape
    if De != cfg.embed_dim or batch.F.shape[1] != cfg.descriptor_dim:
        raise ShapeError(f"input dims ({De}, {batch.F.shape[1]}) != config "
                         f"({cfg.embed_dim}, {cfg.descriptor_dim})")
    Hmax = cfg.max_kernel
    if batch.lengths.min() < Hmax:
        raise LengthError(f"sequence length {batch.lengths.min()} < largest kernel {Hmax}")
    if training and cfg.dropout > 0 and rng is None:
        raise ConfigError("training-mode forward needs an rng for dropout")

    mask = batch.mask
    Fz = (batch.F - params.buffers["feat_mean"]) / params.buffers["feat_std"]
    E = Tensor(batch.E)
    X = None
    if not factored:
        X = Tensor(np.concatenate([batch.E, np.broadcast_to(Fz[:, None, :], (B, Lmax, Fz.shape[1]))], axis=2))
    Fz = Tensor(Fz)

    # CNN branch
    Lm = Lmax - Hmax + 1
    merged = None
    for h in cfg.conv_kernels:
        W, b = T[f"conv{h}.W"], T[f"conv{h}.b"]
        if factored:
            local = conv1d(E, W[:, :De], b, activation=None)
            glob = Fz @ tsum(W[:, De:], axis=0)
            c = relu(local + _expand_mid(glob))
        else:
            c = conv1d(X, W, b)
        off = (Hmax - h) // 2
        c = c[:, off:off + Lm]
        merged = c if merged is None else maximum(merged, c)
    mask_m = (np.arange(Lm)[None, :] < (batch.lengths - Hmax + 1)[:, None]).astype(np.float64)
    v_cnn, a_cnn = attention_pool(merged, T["attn_cnn.W"], T["attn_cnn.w"], mask_m)

    # BiLSTM branch
    halves = []
    for d, rev in (("fwd", False), ("bwd", True)):
        U, Wx, bias = lstm_weights({g: T[f"lstm_{d}.{g}"] for g in
                                    [f"W_{k}" for k in GATES] + [f"b_{k}" for k in GATES]})
        if factored:
            gx = E @ Wx[:De] + _expand_mid(Fz @ Wx[De:]) + bias
        else:
            gx = X @ Wx + bias
        halves.append(lstm_sequence(gx, U, mask, reverse=rev))
    hs = concat(halves, axis=-1)
    v_bilstm, a_lstm = attention_pool(hs, T["attn_lstm.W"], T["attn_lstm.w"], mask)

    e_final, lam = gated_fuse(v_cnn, v_bilstm, T, cfg)

    z = e_final
    for k in range(len(cfg.mlp_hidden)):
        z = relu(linear(z, T[f"mlp{k}.W"], T[f"mlp{k}.b"]))
        z = dropout(z, cfg.dropout, rng, training)
    logits = linear(z, T["head.W"], T["head.b"])
    probs = softmax(logits, axis=-1)
    return ForwardOutput(v_cnn, v_bilstm, lam, e_final, logits, probs, a_cnn.data, a_lstm.data,
                         batch.lengths, batch.ids, batch.residues, Hmax)


def gated_fuse(v_cnn, v_bilstm, T, cfg):
    """``e = lam * f_match(v_cnn) + (1 - lam) * v_bilstm`` with a learned gate."""
    v_cnn, v_bilstm = as_tensor(v_cnn), as_tensor(v_bilstm)
    if v_bilstm.shape[-1] != cfg.fused_dim or v_cnn.shape[-1] != cfg.conv_channels:
        raise ShapeError(f"branch dims {v_cnn.shape}, {v_bilstm.shape} do not match config")
    hidden = tanh(linear(concat([v_cnn, v_bilstm], axis=-1), T["gate.W1"], T["gate.b1"]))
    lam = sigmoid(linear(hidden, T["gate.W2"], T["gate.b2"]))
    fm = linear(v_cnn, T["fmatch.W"], T["fmatch.b"]) if cfg.fmatch == "linear" else v_cnn
    return lam * fm + (1.0 - lam) * v_bilstm, lam


def predict_proba(params, cfg, batch):
    return forward(params, cfg, batch).probs.data


# persistence ---------------------------------------------------------------

def save_checkpoint(params, cfg, meta, path):
    """``AVPCKPT2`` | u32 version | u32 manifest length | manifest JSON |
    float64 LE payload | u64 CRC-64/XZ of everything before it."""
    entries, chunks, off = [], [], 0
    for group, arrays in (("tensors", params.tensors), ("buffers", params.buffers)):
        for name, arr in arrays.items():
            a = np.ascontiguousarray(arr, dtype="<f8")
            entries.append({"group": group, "name": name, "shape": list(a.shape), "offset": off})
            chunks.append(a.tobytes())
            off += a.size
    manifest = {"config": cfg.to_dict(), "meta": dict(meta, format_version=FORMAT_VERSION),
                "entries": entries, "count": off}
    mbytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    body = MAGIC + str(FORMAT_VERSION).encode() + struct.pack("<II", FORMAT_VERSION, len(mbytes)) + mbytes
    body += b"".join(chunks)
    Path(path).write_bytes(body + struct.pack("<Q", kernels.crc64(body)))


def load_checkpoint(path):
    buf = Path(path).read_bytes()
    if len(buf) < 24 or buf[:7] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    body, (crc,) = buf[:-8], struct.unpack("<Q", buf[-8:])
    if kernels.crc64(body) != crc:
        raise CorruptionError(f"{path}: checksum mismatch")
    version, mlen = struct.unpack("<II", body[8:16])
    if version != FORMAT_VERSION:
        raise VersionError(f"{path}: checkpoint format v{version}, reader supports v{FORMAT_VERSION}")
    manifest = json.loads(body[16:16 + mlen].decode("utf-8"))
    payload = np.frombuffer(body[16 + mlen:], dtype="<f8")
    if payload.size != manifest["count"]:
        raise CorruptionError(f"{path}: payload has {payload.size} values, manifest says {manifest['count']}")
    groups = {"tensors": {}, "buffers": {}}
    for e in manifest["entries"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        groups[e["group"]][e["name"]] = payload[e["offset"]:e["offset"] + n].reshape(e["shape"]).astype(np.float64)
    cfg = ModelConfig.from_dict(manifest["config"])
    return ModelParams(groups["tensors"], groups["buffers"]), cfg, manifest["meta"]


# interpretability ----------------------------------------------------------

def minmax(profile):
    """Scale to [0, 1]; a constant profile maps to all zeros."""
    p = np.asarray(profile, dtype=np.float64)
    lo, hi = p.min(), p.max()
    if hi - lo <= 0:
        return np.zeros_like(p)
    return (p - lo) / (hi - lo)


def export_interpretability(outputs, path, labels=None):
    """Write ``gate_lambda.csv`` and ``attention.csv`` under directory ``path``."""
    outputs = [outputs] if isinstance(outputs, ForwardOutput) else list(outputs)
    if not outputs or not any(len(o.ids) for o in outputs):
        raise ShapeError("nothing to export")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    labels = labels or {}
    with open(out / "gate_lambda.csv", "w", newline="") as fg, open(out / "attention.csv", "w", newline="") as fa:
        wg = csv.writer(fg, lineterminator="\n")
        wa = csv.writer(fa, lineterminator="\n")
        wg.writerow(["id", "gate_lambda", "label"])
        wa.writerow(["id", "position", "residue", "attn_cnn", "attn_bilstm"])
        for o in outputs:
            for k, sid in enumerate(o.ids):
                lab = labels.get(sid, "")
                wg.writerow([sid, f"{o.lam[k]:.9g}", "" if lab is None else lab])
                cnn, lstm = o.residue_attention(k)
                cnn, lstm = minmax(cnn), minmax(lstm)
                for p, aa in enumerate(o.residues[k]):
                    wa.writerow([sid, p + 1, aa, f"{cnn[p]:.9g}", f"{lstm[p]:.9g}"])
