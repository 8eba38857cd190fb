"""Seeded toy corpora for smoke tests and demos.

Each residue is drawn from the class's enriched set with probability
``enrich_prob`` and uniformly from the full alphabet otherwise; lengths are
uniform on ``[min_len, max_len]``. All draws use the portable RNG.
"""

from .rng import PortableRng
from .seqio import ALPHABET, LabeledDataset, PeptideSequence

POSITIVE_MOTIF = "KRLW"
NEGATIVE_MOTIF = "GS"
SUBCLASS_MOTIF = "KRIW"


def generate(n, motif, label, rng, prefix, min_len=12, max_len=30, enrich_prob=0.5):
    out = []
    for k in range(n):
        L = min_len + rng.randbelow(max_len - min_len + 1)
        res = []
        for _ in range(L):
            if rng.uniform() < enrich_prob:
                res.append(motif[rng.randbelow(len(motif))])
            else:
                res.append(ALPHABET[rng.randbelow(20)])
        out.append(PeptideSequence(f"{prefix}{k:04d}", "".join(res), label))
    return out


def smoke_corpus(seed=0, n_pos=200, n_neg=200):
    """Positives enriched in K/R/L/W, negatives enriched in G/S."""
    rng = PortableRng(seed)
    items = generate(n_pos, POSITIVE_MOTIF, 1, rng, "pos") + generate(n_neg, NEGATIVE_MOTIF, 0, rng, "neg")
    return LabeledDataset(items, 2, ["non-AVP", "AVP"])


def subclass_corpus(seed=0, n_pos=30, n_neg=300):
    """Minority positives with the motif shifted to K/R/I/W against G/S negatives."""
    rng = PortableRng(seed)
    items = generate(n_pos, SUBCLASS_MOTIF, 1, rng, "sub") + generate(n_neg, NEGATIVE_MOTIF, 0, rng, "oth")
    return LabeledDataset(items, 2, ["other", "subclass"])
