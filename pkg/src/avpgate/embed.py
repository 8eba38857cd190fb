"""Per-residue embeddings: PEMB1 files and a deterministic fallback.

PEMB1 layout (little-endian)::

    b"PEMB1" | u32 record_count | u32 dim |
    per record: u32 id_len | id bytes (UTF-8) | u32 seq_len | seq_len*dim float32
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DuplicateIdError, FormatError, MissingEmbeddingError
from .rng import PortableRng
from .seqio import AA_INDEX

MAGIC = b"PEMB1"


@dataclass
class EmbeddingMatrix:
    seq_id: str
    rows: np.ndarray

    @property
    def dim(self):
        return self.rows.shape[1]

    def __len__(self):
        return self.rows.shape[0]


def write_embeddings(path, matrices):
    matrices = list(matrices)
    dim = matrices[0].dim if matrices else 0
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", len(matrices), dim))
        for m in matrices:
            if m.dim != dim:
                raise FormatError(f"record {m.seq_id!r} has dim {m.dim}, expected {dim}")
            ident = m.seq_id.encode("utf-8")
            fh.write(struct.pack("<I", len(ident)) + ident + struct.pack("<I", len(m)))
            fh.write(np.ascontiguousarray(m.rows, dtype="<f4").tobytes())


def load_embeddings(path):
    """Read a PEMB1 file into ``{seq_id: EmbeddingMatrix}`` (float32 rows)."""
    buf = Path(path).read_bytes()
    if buf[:5] != MAGIC:
        raise FormatError(f"{path}: bad magic {buf[:5]!r}")
    pos = 5

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"{path}: truncated payload at byte {pos}")
        out = buf[pos:pos + n]
        pos += n
        return out

    count, dim = struct.unpack("<II", take(8))
    out = {}
    for _ in range(count):
        (id_len,) = struct.unpack("<I", take(4))
        seq_id = take(id_len).decode("utf-8")
        (seq_len,) = struct.unpack("<I", take(4))
        rows = np.frombuffer(take(4 * seq_len * dim), dtype="<f4").reshape(seq_len, dim).copy()
        if not np.isfinite(rows).all():
            raise FormatError(f"{path}: non-finite value in record {seq_id!r}")
        if seq_id in out:
            raise DuplicateIdError(f"{path}: duplicate id {seq_id!r}")
        out[seq_id] = EmbeddingMatrix(seq_id, rows)
    if pos != len(buf):
        raise FormatError(f"{path}: {len(buf) - pos} trailing bytes")
    return out


def positional_table(length, dim):
    pos = np.arange(length, dtype=np.float64)[:, None]
    k = np.arange(dim) // 2
    angle = pos / np.power(10000.0, 2.0 * k / dim)
    return np.where(np.arange(dim) % 2 == 0, np.sin(angle), np.cos(angle))


_BASE_CACHE = {}


def residue_base_vectors(dim, seed):
    key = (dim, seed)
    if key not in _BASE_CACHE:
        _BASE_CACHE[key] = PortableRng(seed).gauss_array((20, dim))
    return _BASE_CACHE[key]


def fallback_embed(seq, dim=64, seed=0):
    """Deterministic stand-in for language-model embeddings.

    Row ``p`` is a fixed Gaussian vector for the residue (drawn from the
    seeded splitmix64 stream in alphabet order) plus a sinusoidal position
    code.
    """
    residues = getattr(seq, "residues", seq)
    base = residue_base_vectors(dim, seed)
    idx = [AA_INDEX[c] for c in residues]
    rows = base[idx] + positional_table(len(residues), dim)
    return EmbeddingMatrix(getattr(seq, "id", residues), rows)


def derive_rows(rows, sources):
    """Rows for an edited sequence from its parent's rows.

    Kept residues reuse their parent row; an inserted residue copies the row
    before it (or the first kept row at the start).
    """
    out = np.empty((len(sources), rows.shape[1]), dtype=rows.dtype)
    prev = next((s for s in sources if s >= 0), 0)
    for k, s in enumerate(sources):
        if s >= 0:
            prev = s
        out[k] = rows[prev]
    return out


class FallbackEmbedder:
    kind = "fallback"

    def __init__(self, dim=64, seed=0):
        self.dim = int(dim)
        self.seed = int(seed)

    def spec(self):
        return f"fallback:dim={self.dim}:seed={self.seed}"

    def embed(self, seq):
        return fallback_embed(seq, self.dim, self.seed).rows

    def embed_derived(self, parent, residues, sources):
        return fallback_embed(residues, self.dim, self.seed).rows


class FileEmbedder:
    kind = "file"

    def __init__(self, path):
        self.path = str(path)
        self.table = load_embeddings(path)
        dims = {m.dim for m in self.table.values()}
        if len(dims) > 1:
            raise FormatError(f"{path}: mixed dims {sorted(dims)}")
        self.dim = dims.pop() if dims else 0

    def spec(self):
        return f"file:{self.path}"

    def embed(self, seq):
        sid = getattr(seq, "id", None)
        m = self.table.get(sid)
        if m is None:
            raise MissingEmbeddingError(f"no embedding for id {sid!r} in {self.path}")
        if len(m) != len(seq):
            raise MissingEmbeddingError(f"{sid!r}: embedding has {len(m)} rows, sequence {len(seq)}")
        return m.rows.astype(np.float64)

    def embed_derived(self, parent, residues, sources):
        return derive_rows(self.embed(parent), sources)


def parse_embedder(spec):
    """``fallback:dim=64:seed=7`` or ``file:path.pemb``."""
    if spec.startswith("file:"):
        return FileEmbedder(spec[5:])
    if spec.startswith("fallback"):
        opts = dict(p.split("=", 1) for p in spec.split(":")[1:] if p)
        unknown = set(opts) - {"dim", "seed"}
        if unknown:
            raise FormatError(f"unknown embedder options {sorted(unknown)}")
        return FallbackEmbedder(int(opts.get("dim", 64)), int(opts.get("seed", 0)))
    raise FormatError(f"unrecognised embedder spec {spec!r}")

