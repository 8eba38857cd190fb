"""BLOSUM62-guided sequence augmentation and test-time variants."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from .errors import ConfigError, LengthError
from .rng import PortableRng
from .seqio import AA_INDEX, ALPHABET, L_MAX, L_MIN, PeptideSequence

# (f + t) mod 3 with strategies numbered 1, 2, 3 (3 == 0): fragment 0 mutates at step 1
MUTATE, INSERT, DELETE = 1, 2, 0


class Blosum62:
    """20x20 integer substitution scores indexed in ``ALPHABET`` order."""

    def __init__(self, scores):
        self.scores = np.asarray(scores, dtype=np.int64)
        if self.scores.shape != (20, 20) or not (self.scores == self.scores.T).all():
            raise ConfigError("BLOSUM62 table must be a symmetric 20x20 matrix")

    @classmethod
    def load(cls):
        text = resources.files("avpgate.data").joinpath("blosum62.txt").read_text()
        rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        cols = rows[0]
        table = {r[0]: dict(zip(cols, map(int, r[1:]))) for r in rows[1:]}
        return cls([[table[a][b] for b in ALPHABET] for a in ALPHABET])

    def score(self, a, b):
        return int(self.scores[AA_INDEX[a], AA_INDEX[b]])

    def dump(self):
        lines = ["   " + "  ".join(ALPHABET)]
        for i, a in enumerate(ALPHABET):
            lines.append(a + " " + " ".join(f"{v:2d}" for v in self.scores[i]))
        return "\n".join(lines) + "\n"


@lru_cache(maxsize=1)
def blosum62():
    return Blosum62.load()


@lru_cache(maxsize=1)
def _substitution_map():
    m = blosum62()
    return {a: best_substitute(a, m) for a in ALPHABET}


def best_substitute(residue, matrix=None):
    """Highest-scoring residue other than ``residue``; ties go alphabetically."""
    matrix = matrix or blosum62()
    i = AA_INDEX[residue]
    best, best_score = None, None
    for j in sorted(range(20), key=lambda k: ALPHABET[k]):
        if j == i:
            continue
        s = matrix.scores[i, j]
        if best_score is None or s > best_score:
            best, best_score = j, s
    return ALPHABET[best]


@dataclass(frozen=True)
class AugmentConfig:
    n_fragments: int = 3
    m_steps: int = 3
    insert_prob: float = 0.1
    delete_prob: float = 0.1
    mutate_prob: float = 0.15
    tta_variants: int = 8
    tta_mutate_prob: float = 0.05

    def __post_init__(self):
        for name in ("insert_prob", "delete_prob", "mutate_prob", "tta_mutate_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"augment.{name} must lie in [0, 1]")
        if self.n_fragments < 1 or self.m_steps < 1:
            raise ConfigError("augment.n_fragments and augment.m_steps must be >= 1")
        if self.tta_variants < 0:
            raise ConfigError("augment.tta_variants must be >= 0")

    def to_dict(self):
        return asdict(self)


def _mutate(frag, prob, rng, subs):
    out = []
    for aa, src in frag:
        if rng.uniform() < prob:
            aa = subs[aa]
        out.append((aa, src))
    return out


def augment_with_provenance(seq, cfg=AugmentConfig(), rng=None, l_min=L_MIN, l_max=L_MAX):
    """Augment ``seq`` and report where each output residue came from.

    Returns ``(residues, sources)`` where ``sources[k]`` is the index of the
    input residue that output position ``k`` descends from, or -1 for an
    inserted residue. Insertions stop once the whole sequence reaches
    ``l_max`` and deletions stop at ``l_min`` so the result stays valid.
    """
    residues = getattr(seq, "residues", seq)
    L = len(residues)
    if L < cfg.n_fragments:
        raise LengthError(f"length {L} < n_fragments {cfg.n_fragments}")
    rng = rng if rng is not None else PortableRng(0)
    subs = _substitution_map()

    # partial Fisher-Yates over candidate cut points 1..L-1
    k = cfg.n_fragments - 1
    cands = list(range(1, L))
    for i in range(k):
        j = i + rng.randbelow(len(cands) - i)
        cands[i], cands[j] = cands[j], cands[i]
    cuts = [0] + sorted(cands[:k]) + [L]
    frags = [[(residues[p], p) for p in range(cuts[f], cuts[f + 1])] for f in range(cfg.n_fragments)]
    total = L

    for t in range(1, cfg.m_steps + 1):
        for f, frag in enumerate(frags):
            strategy = (f + t) % 3
            if strategy == MUTATE:
                frags[f] = _mutate(frag, cfg.mutate_prob, rng, subs)
            elif strategy == INSERT:
                out = []
                for item in frag:
                    out.append(item)
                    if rng.uniform() < cfg.insert_prob and total < l_max:
                        out.append((ALPHABET[rng.randbelow(20)], -1))
                        total += 1
                frags[f] = out
            else:
                out = []
                for pos, item in enumerate(frag):
                    remaining = len(frag) - pos
                    drop = rng.uniform() < cfg.delete_prob
                    # keep at least one residue per fragment and l_min overall
                    if drop and (out or remaining > 1) and total > l_min:
                        total -= 1
                        continue
                    out.append(item)
                frags[f] = out

    joined = [item for frag in frags for item in frag]
    return "".join(a for a, _ in joined), [s for _, s in joined]


def augment_sequence(seq, cfg=AugmentConfig(), rng=None, suffix="_aug0"):
    residues, _ = augment_with_provenance(seq, cfg, rng)
    return PeptideSequence(getattr(seq, "id", "seq") + suffix, residues, getattr(seq, "label", None))


def tta_variants(seq, cfg=AugmentConfig(), rng=None):
    """Mutation-only copies of ``seq`` (same length, original excluded)."""
    rng = rng if rng is not None else PortableRng(0)
    subs = _substitution_map()
    residues = getattr(seq, "residues", seq)
    sid = getattr(seq, "id", "seq")
    label = getattr(seq, "label", None)
    base = [(aa, i) for i, aa in enumerate(residues)]
    out = []
    for k in range(cfg.tta_variants):
        mutated = _mutate(base, cfg.tta_mutate_prob, rng, subs)
        out.append(PeptideSequence(f"{sid}_tta{k}", "".join(a for a, _ in mutated), label))
    return out
