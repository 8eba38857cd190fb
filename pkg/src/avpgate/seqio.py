"""Peptide records, FASTA/label-table IO and stratified splitting."""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

from .errors import DuplicateIdError, LabelError, LengthError, StratifyError, ValidationError
from .rng import PortableRng

ALPHABET = "ACDEFGHIKLMNPQRSTVWY"
AA_INDEX = {aa: i for i, aa in enumerate(ALPHABET)}
L_MIN = 5
L_MAX = 100


@dataclass(frozen=True)
class PeptideSequence:
    id: str
    residues: str
    label: int | None = None

    def __len__(self):
        return len(self.residues)


@dataclass
class LabeledDataset:
    items: list[PeptideSequence]
    class_count: int = 2
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.class_names:
            self.class_names = [str(c) for c in range(self.class_count)]
        if self.class_count < 2:
            raise LabelError(f"class_count must be >= 2, got {self.class_count}")
        for it in self.items:
            if it.label is None or not 0 <= it.label < self.class_count:
                raise LabelError(f"{it.id}: label {it.label!r} outside 0..{self.class_count - 1}")

    def __len__(self):
        return len(self.items)

    def labels(self):
        return [it.label for it in self.items]

    def class_counts(self):
        counts = [0] * self.class_count
        for it in self.items:
            counts[it.label] += 1
        return counts

    def subset(self, items):
        return LabeledDataset(list(items), self.class_count, list(self.class_names))


def validate_sequence(seq_id, residues, l_min=L_MIN, l_max=L_MAX):
    residues = residues.upper()
    for ch in residues:
        if ch not in AA_INDEX:
            raise ValidationError(seq_id, ch)
    if not l_min <= len(residues) <= l_max:
        raise LengthError(f"record {seq_id!r}: length {len(residues)} outside [{l_min}, {l_max}]")
    return residues


def parse_fasta(text, l_min=L_MIN, l_max=L_MAX):
    """Parse FASTA text (str or bytes) into ``PeptideSequence`` records.

    Wrapped sequence lines are joined and residues uppercased. Raises
    ``ValidationError`` for characters outside the 20-letter alphabet,
    ``DuplicateIdError`` for repeated ids and ``LengthError`` for records
    outside ``[l_min, l_max]``.
    """
    if isinstance(text, (bytes, bytearray)):
        text = text.decode("utf-8")
    records = []
    seen = set()
    cur_id, chunks = None, []

    def flush():
        if cur_id is None:
            return
        residues = validate_sequence(cur_id, "".join(chunks), l_min, l_max)
        records.append(PeptideSequence(cur_id, residues))

    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith(">"):
            flush()
            cur_id = line[1:].split()[0] if line[1:].split() else ""
            if not cur_id:
                raise ValidationError("", ">", "empty FASTA header")
            if cur_id in seen:
                raise DuplicateIdError(f"duplicate id {cur_id!r}")
            seen.add(cur_id)
            chunks = []
        else:
            if cur_id is None:
                raise ValidationError("", line[0], "sequence data before first header")
            chunks.append(line)
    flush()
    return records


def read_fasta(path, l_min=L_MIN, l_max=L_MAX):
    return parse_fasta(Path(path).read_bytes(), l_min, l_max)


def serialize_fasta(records, width=60):
    out = io.StringIO()
    for rec in records:
        out.write(f">{rec.id}\n")
        for i in range(0, len(rec.residues), width):
            out.write(rec.residues[i:i + width] + "\n")
    return out.getvalue()


def parse_labels(text):
    """Two-column ``id,label`` table -> ordered dict. A header row is tolerated."""
    if isinstance(text, (bytes, bytearray)):
        text = text.decode("utf-8")
    labels = {}
    for n, raw in enumerate(text.splitlines()):
        line = raw.strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 2:
            raise LabelError(f"line {n + 1}: expected 'id,label', got {line!r}")
        try:
            value = int(parts[1])
        except ValueError:
            if n == 0:
                continue
            raise LabelError(f"line {n + 1}: label {parts[1]!r} is not an integer") from None
        labels[parts[0]] = value
    return labels


def attach_labels(records, labels, class_count=None, class_names=None):
    ids = {r.id for r in records}
    unknown = [k for k in labels if k not in ids]
    if unknown:
        raise LabelError(f"labels for unknown ids: {', '.join(unknown)}")
    missing = [r.id for r in records if r.id not in labels]
    if missing:
        raise LabelError(f"missing labels for ids: {', '.join(missing)}")
    items = [replace(r, label=labels[r.id]) for r in records]
    if class_count is None:
        class_count = max(2, max((it.label for it in items), default=0) + 1)
    return LabeledDataset(items, class_count, list(class_names or []))


def load_labels(path, records, class_count=None, class_names=None):
    return attach_labels(records, parse_labels(Path(path).read_bytes()), class_count, class_names)


def _as_fraction(ratio):
    if isinstance(ratio, str) and ":" in ratio:
        a, b = (Fraction(x) for x in ratio.split(":"))
        return a / (a + b)
    return Fraction(ratio).limit_denominator(10**6) if isinstance(ratio, float) else Fraction(ratio)


def stratified_split(ds, ratio, seed):
    """Split ``ds`` per class into (train, test).

    ``ratio`` is the train fraction (``0.8``, ``Fraction(4, 5)`` or ``"4:1"``).
    Each class contributes ``floor(ratio * n_c)`` items to train, clamped so
    both sides get at least one. Classes are shuffled in label order from a
    single splitmix64 stream, so the partition is fixed by ``seed``.
    """
    r = _as_fraction(ratio)
    if not 0 < r < 1:
        raise StratifyError(f"ratio must lie in (0, 1), got {ratio}")
    by_class = [[] for _ in range(ds.class_count)]
    for idx, it in enumerate(ds.items):
        by_class[it.label].append(idx)
    rng = PortableRng(seed)
    train_idx, test_idx = set(), set()
    for c, members in enumerate(by_class):
        if not members:
            continue
        if len(members) < 2:
            raise StratifyError(f"class {c} has {len(members)} item(s); need >= 2")
        order = rng.shuffle(list(members))
        n_train = min(max(int(r * len(order)), 1), len(order) - 1)
        train_idx.update(order[:n_train])
        test_idx.update(order[n_train:])
    train = [it for i, it in enumerate(ds.items) if i in train_idx]
    test = [it for i, it in enumerate(ds.items) if i in test_idx]
    return ds.subset(train), ds.subset(test)
