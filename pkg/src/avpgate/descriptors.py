"""The ten handcrafted peptide descriptors and their concatenation.

Layout order is fixed: AAC, DPC, CKSAAGP, DistancePair, PAAC, QSOrder,
ZScale, GTPC, Binary, DDE. Counts are accumulated in sequence order and
normalised once at the end.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from .errors import ConfigError, LengthError
from .seqio import AA_INDEX, ALPHABET, L_MAX, L_MIN

KINDS = ("AAC", "DPC", "CKSAAGP", "DistancePair", "PAAC", "QSOrder", "ZScale", "GTPC", "Binary", "DDE")

GROUPS = {
    "g1": "GAVLMI",   # aliphatic
    "g2": "FYW",      # aromatic
    "g3": "KRH",      # positive
    "g4": "DE",       # negative
    "g5": "STCPNQ",   # uncharged
}
GROUP_NAMES = tuple(GROUPS)
GROUP_OF = np.array([next(i for i, g in enumerate(GROUPS.values()) if aa in g) for aa in ALPHABET])


@dataclass(frozen=True)
class DescriptorConfig:
    cksaagp_max_gap: int = 5
    distpair_max_dist: int = 3
    paac_lambda: int = 4
    paac_weight: float = 0.05
    qso_nlag: int = 3
    qso_weight: float = 0.1
    binary_max_len: int = L_MAX

    def __post_init__(self):
        for name in ("cksaagp_max_gap", "distpair_max_dist", "paac_lambda", "qso_nlag"):
            if getattr(self, name) < 0:
                raise ConfigError(f"descriptor.{name} must be >= 0")
        if self.paac_lambda >= L_MIN or self.qso_nlag >= L_MIN:
            raise ConfigError(f"paac_lambda and qso_nlag must be < {L_MIN}")
        if self.binary_max_len < 1:
            raise ConfigError("descriptor.binary_max_len must be >= 1")
        if self.paac_weight < 0 or self.qso_weight < 0:
            raise ConfigError("descriptor weights must be >= 0")

    def to_dict(self):
        return asdict(self)


@dataclass
class FeatureVector:
    values: np.ndarray
    layout: list[tuple[str, int, int]]

    def segment(self, kind):
        for name, off, n in self.layout:
            if name == kind:
                return self.values[off:off + n]
        raise ConfigError(f"no segment {kind!r}")


def _load_json(name):
    return json.loads(resources.files("avpgate.data").joinpath(name).read_text())


@lru_cache(maxsize=None)
def _tables():
    paac = _load_json("paac_properties.json")
    props = np.array([[paac[k][aa] for aa in ALPHABET]
                      for k in ("hydrophobicity", "hydrophilicity", "side_chain_mass")])
    # standardise each property over the 20 residues (population std)
    props = (props - props.mean(axis=1, keepdims=True)) / props.std(axis=1, keepdims=True)
    # Theta(a, b) = mean over properties of squared difference
    theta = ((props[:, :, None] - props[:, None, :]) ** 2).mean(axis=0)

    qso = _load_json("qso_distances.json")
    sw = np.array([qso["schneider_wrede"][aa] for aa in ALPHABET])
    gr = np.array([qso["grantham"][aa] for aa in ALPHABET], dtype=float)

    z = _load_json("zscales.json")
    zs = np.array([z[aa] for aa in ALPHABET])

    codons = _load_json("codons.json")
    c = np.array([codons[aa] for aa in ALPHABET], dtype=float) / 61.0
    tm = np.outer(c, c).ravel()
    return {"theta": theta, "sw": sw, "grantham": gr, "zscale": zs, "dde_tm": tm}


def descriptor_dim(kind, cfg=DescriptorConfig()):
    dims = {
        "AAC": 20,
        "DPC": 400,
        "CKSAAGP": 25 * (cfg.cksaagp_max_gap + 1),
        "DistancePair": 25 * (cfg.distpair_max_dist + 1),
        "PAAC": 20 + cfg.paac_lambda,
        "QSOrder": 40 + 2 * cfg.qso_nlag,
        "ZScale": 5,
        "GTPC": 125,
        "Binary": 20 * cfg.binary_max_len,
        "DDE": 400,
    }
    if kind not in dims:
        raise ConfigError(f"unknown descriptor kind {kind!r}")
    return dims[kind]


def _encode(residues):
    return np.fromiter((AA_INDEX[c] for c in residues), dtype=np.int64, count=len(residues))


def _pair_freq(codes, offset, n_sym):
    """Frequencies of (codes[i], codes[i+offset]) over all valid i."""
    n = len(codes) - offset
    counts = np.zeros(n_sym * n_sym)
    if n <= 0:
        return counts
    np.add.at(counts, codes[:n] * n_sym + codes[offset:], 1.0)
    return counts / n


def _aac(idx, cfg):
    return np.bincount(idx, minlength=20) / len(idx)


def _dpc(idx, cfg):
    return _pair_freq(idx, 1, 20)


def _cksaagp(idx, cfg):
    g = GROUP_OF[idx]
    # gap k counts pairs (i, i + k + 1)
    return np.concatenate([_pair_freq(g, k + 1, 5) for k in range(cfg.cksaagp_max_gap + 1)])


def _distance_pair(idx, cfg):
    g = GROUP_OF[idx]
    # offset 0 pairs a residue with itself, i.e. group composition on the diagonal
    return np.concatenate([_pair_freq(g, d, 5) for d in range(cfg.distpair_max_dist + 1)])


def _paac(idx, cfg):
    theta = _tables()["theta"]
    L = len(idx)
    corr = np.array([theta[idx[:L - k], idx[k:]].sum() / (L - k) for k in range(1, cfg.paac_lambda + 1)])
    freq = np.bincount(idx, minlength=20) / L
    denom = 1.0 + cfg.paac_weight * corr.sum()
    return np.concatenate([freq / denom, cfg.paac_weight * corr / denom])


def _qsorder(idx, cfg):
    t = _tables()
    L = len(idx)
    freq = np.bincount(idx, minlength=20) / L
    parts_r, parts_d = [], []
    for dist in (t["sw"], t["grantham"]):
        tau = np.array([(dist[idx[:L - d], idx[d:]] ** 2).sum() for d in range(1, cfg.qso_nlag + 1)])
        denom = 1.0 + cfg.qso_weight * tau.sum()
        parts_r.append(freq / denom)
        parts_d.append(cfg.qso_weight * tau / denom)
    return np.concatenate(parts_r + parts_d)


def _zscale(idx, cfg):
    return _tables()["zscale"][idx].mean(axis=0)


def _gtpc(idx, cfg):
    g = GROUP_OF[idx]
    n = len(g) - 2
    counts = np.zeros(125)
    if n > 0:
        np.add.at(counts, g[:n] * 25 + g[1:n + 1] * 5 + g[2:], 1.0)
        counts /= n
    return counts


def _binary(idx, cfg):
    out = np.zeros((cfg.binary_max_len, 20))
    k = min(len(idx), cfg.binary_max_len)
    out[np.arange(k), idx[:k]] = 1.0
    return out.ravel()


def _dde(idx, cfg):
    tm = _tables()["dde_tm"]
    dc = _pair_freq(idx, 1, 20)
    tv = tm * (1.0 - tm) / (len(idx) - 1)
    return (dc - tm) / np.sqrt(tv)


_FUNCS = {
    "AAC": _aac, "DPC": _dpc, "CKSAAGP": _cksaagp, "DistancePair": _distance_pair,
    "PAAC": _paac, "QSOrder": _qsorder, "ZScale": _zscale, "GTPC": _gtpc,
    "Binary": _binary, "DDE": _dde,
}


def _min_length(kind, cfg):
    # pair/triple counts with no tuples give a zero block instead of failing
    return {
        "DDE": 2,
        "PAAC": cfg.paac_lambda + 1,
        "QSOrder": cfg.qso_nlag + 1,
    }.get(kind, 1)


def compute_descriptor(kind, seq, cfg=DescriptorConfig()):
    """One descriptor for ``seq`` (a ``PeptideSequence`` or residue string)."""
    if kind not in _FUNCS:
        raise ConfigError(f"unknown descriptor kind {kind!r}")
    residues = getattr(seq, "residues", seq)
    if len(residues) < _min_length(kind, cfg):
        raise LengthError(f"{kind} needs length >= {_min_length(kind, cfg)}, got {len(residues)}")
    return _FUNCS[kind](_encode(residues), cfg)


def layout(cfg=DescriptorConfig()):
    out, off = [], 0
    for kind in KINDS:
        n = descriptor_dim(kind, cfg)
        out.append((kind, off, n))
        off += n
    return out


def feature_dim(cfg=DescriptorConfig()):
    return sum(descriptor_dim(k, cfg) for k in KINDS)


def featurize(seq, cfg=DescriptorConfig()):
    parts = [compute_descriptor(k, seq, cfg) for k in KINDS]
    return FeatureVector(np.concatenate(parts), layout(cfg))


def featurize_many(seqs, cfg=DescriptorConfig()):
    if not seqs:
        return np.zeros((0, feature_dim(cfg)))
    return np.stack([featurize(s, cfg).values for s in seqs])


def component_names(cfg=DescriptorConfig()):
    names = []
    names += [f"AAC_{a}" for a in ALPHABET]
    names += [f"DPC_{a}{b}" for a in ALPHABET for b in ALPHABET]
    gpairs = [f"{a}.{b}" for a in GROUP_NAMES for b in GROUP_NAMES]
    names += [f"CKSAAGP_{p}.gap{k}" for k in range(cfg.cksaagp_max_gap + 1) for p in gpairs]
    names += [f"DistancePair_{p}.d{d}" for d in range(cfg.distpair_max_dist + 1) for p in gpairs]
    names += [f"PAAC_{a}" for a in ALPHABET] + [f"PAAC_lambda{k}" for k in range(1, cfg.paac_lambda + 1)]
    names += [f"QSOrder_SW.{a}" for a in ALPHABET] + [f"QSOrder_Grantham.{a}" for a in ALPHABET]
    names += [f"QSOrder_SW.lag{d}" for d in range(1, cfg.qso_nlag + 1)]
    names += [f"QSOrder_Grantham.lag{d}" for d in range(1, cfg.qso_nlag + 1)]
    names += [f"ZScale_z{k}" for k in range(1, 6)]
    names += [f"GTPC_{a}.{b}.{c}" for a in GROUP_NAMES for b in GROUP_NAMES for c in GROUP_NAMES]
    names += [f"Binary_p{p}.{a}" for p in range(1, cfg.binary_max_len + 1) for a in ALPHABET]
    names += [f"DDE_{a}{b}" for a in ALPHABET for b in ALPHABET]
    return names


def to_csv(seqs, cfg=DescriptorConfig()):
    """CSV text: ``id`` then one column per component, 9 significant digits."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id"] + component_names(cfg))
    for s in seqs:
        vals = featurize(s, cfg).values
        w.writerow([s.id] + [f"{v:.9g}" for v in vals])
    return buf.getvalue()
