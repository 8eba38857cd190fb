import hashlib
import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avpgate.embed import (MAGIC, EmbeddingMatrix, FallbackEmbedder, FileEmbedder, derive_rows,
                           fallback_embed, load_embeddings, parse_embedder, write_embeddings)
from avpgate.errors import DuplicateIdError, FormatError, MissingEmbeddingError
from avpgate.seqio import ALPHABET, PeptideSequence

# sha256 of the float32 image of fallback_embed(ALPHABET, 64, 0); float32
# absorbs last-ulp differences between libm builds.
GOLDEN = "d4d43d55ac0ee2885eef9c71084ce96a732e0176e21f3421347426ae9276c9d3"


def test_empty_file(tmp_path):
    p = tmp_path / "e.pemb"
    write_embeddings(p, [])
    assert load_embeddings(p) == {}
    assert p.read_bytes() == MAGIC + struct.pack("<II", 0, 0)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 30), st.integers(1, 8)), min_size=1, max_size=5), st.integers(1, 12),
       st.integers(0, 2**32))
def test_round_trip_bit_exact(tmp_path_factory, shapes, dim, seed):
    rng = np.random.default_rng(seed)
    mats = [EmbeddingMatrix(f"id{k}", rng.standard_normal((L, dim)).astype(np.float32))
            for k, (L, _) in enumerate(shapes)]
    p = tmp_path_factory.mktemp("pemb") / "x.pemb"
    write_embeddings(p, mats)
    back = load_embeddings(p)
    assert list(back) == [m.seq_id for m in mats]
    for m in mats:
        assert back[m.seq_id].rows.tobytes() == m.rows.tobytes()


def test_layout_matches_format(tmp_path):
    p = tmp_path / "one.pemb"
    rows = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
    write_embeddings(p, [EmbeddingMatrix("ab", rows)])
    expected = b"PEMB1" + struct.pack("<II", 1, 2) + struct.pack("<I", 2) + b"ab" + struct.pack("<I", 2)
    expected += struct.pack("<4f", 1.0, 2.0, 3.0, 4.0)
    assert p.read_bytes() == expected


def _write_raw(path, body):
    path.write_bytes(body)
    return path


def test_bad_magic(tmp_path):
    with pytest.raises(FormatError, match="magic"):
        load_embeddings(_write_raw(tmp_path / "x", b"PEMB2" + struct.pack("<II", 0, 0)))


def test_truncated(tmp_path):
    p = tmp_path / "t.pemb"
    write_embeddings(p, [EmbeddingMatrix("a", np.ones((3, 4), dtype=np.float32))])
    data = p.read_bytes()
    with pytest.raises(FormatError, match="truncated"):
        load_embeddings(_write_raw(tmp_path / "u", data[:-3]))


def test_nan_rejected(tmp_path):
    p = tmp_path / "n.pemb"
    rows = np.ones((2, 2), dtype=np.float32)
    rows[1, 0] = np.nan
    write_embeddings(p, [EmbeddingMatrix("a", rows)])
    with pytest.raises(FormatError, match="non-finite"):
        load_embeddings(p)


def test_duplicate_id(tmp_path):
    p = tmp_path / "d.pemb"
    m = EmbeddingMatrix("a", np.ones((1, 2), dtype=np.float32))
    write_embeddings(p, [m, m])
    with pytest.raises(DuplicateIdError):
        load_embeddings(p)


def test_fallback_deterministic():
    a = fallback_embed("KRLWGS", 16, 3)
    b = fallback_embed("KRLWGS", 16, 3)
    assert np.array_equal(a.rows, b.rows)
    assert a.rows.shape == (6, 16)


def test_same_residue_rows_differ_by_position_only():
    dim = 8
    rows = fallback_embed("AA", dim, 0).rows
    k = np.arange(dim) // 2
    expected = []
    for pos in (0, 1):
        angle = pos / 10000 ** (2 * k / dim)
        expected.append(np.where(np.arange(dim) % 2 == 0, np.sin(angle), np.cos(angle)))
    np.testing.assert_allclose(rows[1] - rows[0], expected[1] - expected[0], atol=1e-15)


def test_seeds_change_base_vectors():
    assert not np.array_equal(fallback_embed("A", 8, 0).rows, fallback_embed("A", 8, 1).rows)


def test_positional_code_values():
    rows = fallback_embed("AA", 4, 0).rows
    base = rows[0] - np.array([0.0, 1.0, 0.0, 1.0])
    expected = base + np.array([math.sin(1), math.cos(1), math.sin(1 / 100), math.cos(1 / 100)])
    np.testing.assert_allclose(rows[1], expected, atol=1e-14)


def test_golden_checksum():
    rows = fallback_embed(ALPHABET, 64, 0).rows
    assert hashlib.sha256(rows.astype("<f4").tobytes()).hexdigest() == GOLDEN


@settings(max_examples=30)
@given(st.text(alphabet=ALPHABET, min_size=1, max_size=60), st.integers(1, 32))
def test_provider_contract(seq, dim):
    rows = FallbackEmbedder(dim, 0).embed(PeptideSequence("s", seq))
    assert rows.shape == (len(seq), dim) and np.isfinite(rows).all()


def test_file_embedder(tmp_path):
    p = tmp_path / "f.pemb"
    rows = np.arange(12, dtype=np.float32).reshape(3, 4)
    write_embeddings(p, [EmbeddingMatrix("s1", rows)])
    emb = parse_embedder(f"file:{p}")
    assert isinstance(emb, FileEmbedder) and emb.dim == 4
    np.testing.assert_array_equal(emb.embed(PeptideSequence("s1", "ACD")), rows.astype(np.float64))
    with pytest.raises(MissingEmbeddingError):
        emb.embed(PeptideSequence("s2", "ACD"))
    with pytest.raises(MissingEmbeddingError):
        emb.embed(PeptideSequence("s1", "ACDE"))


def test_parse_embedder_specs():
    emb = parse_embedder("fallback:dim=32:seed=7")
    assert (emb.dim, emb.seed) == (32, 7)
    assert parse_embedder(emb.spec()).spec() == emb.spec()
    with pytest.raises(FormatError):
        parse_embedder("esm2")
    with pytest.raises(FormatError):
        parse_embedder("fallback:width=3")


def test_derive_rows_copies_parent_rows():
    rows = np.arange(8.0).reshape(4, 2)
    out = derive_rows(rows, [-1, 0, 2, -1, 3])
    np.testing.assert_array_equal(out, rows[[0, 0, 2, 2, 3]])
