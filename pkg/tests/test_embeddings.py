import json
import struct

import numpy as np
import pytest

from seqtag.corpus import Dataset
from seqtag.embeddings import (
    EmbeddingHeader,
    EmbeddingSequence,
    concat_layers,
    load_embeddings,
    read_embeddings,
    validate_alignment,
    write_embeddings,
)
from seqtag.errors import FormatError
from tests.conftest import make_sentence


def _random_file(path, rng, dim, layers, n_seqs):
    header = EmbeddingHeader(dim=dim, num_layers=layers)
    seqs = [
        EmbeddingSequence(
            f"id-{i}",
            rng.normal(size=(int(rng.integers(1, 9)), layers, dim)).astype(np.float32),
        )
        for i in range(n_seqs)
    ]
    write_embeddings(header, seqs, path)
    return header, seqs


def test_round_trip_bit_exact_randomized(tmp_path):
    rng = np.random.default_rng(0)
    for trial in range(20):
        dim = int(rng.integers(1, 7))
        layers = int(rng.integers(1, 4))
        p = tmp_path / f"f{trial}.seqemb"
        header, seqs = _random_file(p, rng, dim, layers, int(rng.integers(0, 5)))
        back_header, stream = read_embeddings(p)
        assert back_header == header
        back = list(stream)
        assert [s.sentence_id for s in back] == [s.sentence_id for s in seqs]
        for a, b in zip(seqs, back):
            assert a.vectors.tobytes() == b.vectors.tobytes()


def test_write_is_byte_deterministic(tmp_path):
    rng = np.random.default_rng(1)
    p1, p2 = tmp_path / "a.seqemb", tmp_path / "b.seqemb"
    header = EmbeddingHeader(dim=3, num_layers=2)
    seqs = [
        EmbeddingSequence("x", rng.normal(size=(4, 2, 3)).astype(np.float32)),
    ]
    write_embeddings(header, seqs, p1)
    write_embeddings(header, seqs, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_file_size_arithmetic(tmp_path):
    # magic + u32 + header json + (u32 + id) + u32 + T*L*D*4
    p = tmp_path / "a.seqemb"
    header = EmbeddingHeader(dim=4, num_layers=1)
    seq = EmbeddingSequence("ab", np.zeros((2, 1, 4), dtype=np.float32))
    write_embeddings(header, [seq], p)
    expected = 8 + 4 + len(header.to_json_bytes()) + (4 + 2) + 4 + 2 * 1 * 4 * 4
    assert p.stat().st_size == expected


def test_empty_stream_valid(tmp_path):
    p = tmp_path / "empty.seqemb"
    write_embeddings(EmbeddingHeader(dim=2, num_layers=1), [], p)
    header, stream = read_embeddings(p)
    assert list(stream) == []


def test_dim_mismatch_rejected(tmp_path):
    p = tmp_path / "bad.seqemb"
    header = EmbeddingHeader(dim=4, num_layers=1)
    seq = EmbeddingSequence("x", np.zeros((2, 1, 3), dtype=np.float32))
    with pytest.raises(FormatError):
        write_embeddings(header, [seq], p)


def test_bad_magic(tmp_path):
    p = tmp_path / "bad.seqemb"
    p.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
    with pytest.raises(FormatError) as ei:
        read_embeddings(p)
    assert ei.value.offset == 0


def test_truncation_detected(tmp_path):
    rng = np.random.default_rng(2)
    p = tmp_path / "ok.seqemb"
    _random_file(p, rng, 3, 2, 2)
    data = p.read_bytes()
    for cut in (4, len(data) // 2, len(data) - 3):
        q = tmp_path / f"cut{cut}.seqemb"
        q.write_bytes(data[:cut])
        with pytest.raises(FormatError) as ei:
            _header, stream = read_embeddings(q)
            list(stream)
        assert ei.value.offset is not None


def test_nan_payload_detected(tmp_path):
    p = tmp_path / "nan.seqemb"
    header = EmbeddingHeader(dim=2, num_layers=1)
    bad = np.array([[[1.0, np.nan]]], dtype=np.float32)
    vec = EmbeddingSequence("x", np.zeros((1, 1, 2), dtype=np.float32))
    write_embeddings(header, [vec], p)
    data = bytearray(p.read_bytes())
    data[-8:] = bad.tobytes()
    p.write_bytes(bytes(data))
    with pytest.raises(FormatError) as ei:
        _header, stream = read_embeddings(p)
        list(stream)
    assert "non-finite" in str(ei.value)


def test_concat_layers_order_and_width():
    vecs = np.arange(2 * 3 * 2, dtype=np.float32).reshape(2, 3, 2)
    seq = EmbeddingSequence("x", vecs)
    out = concat_layers(seq, 3)
    assert out.shape == (2, 6)
    # all stored values appear exactly once per token, in layer order
    np.testing.assert_array_equal(out[0], vecs[0].reshape(-1))
    out1 = concat_layers(seq, 1)
    np.testing.assert_array_equal(out1, vecs[:, -1, :])
    out2 = concat_layers(seq, 2)
    np.testing.assert_array_equal(out2[1], vecs[1, 1:, :].reshape(-1))


def test_concat_layers_k_too_large():
    seq = EmbeddingSequence("x", np.zeros((1, 3, 2), dtype=np.float32))
    with pytest.raises(ValueError):
        concat_layers(seq, 4)


def _corpus_and_file(tmp_path, ids_tokens):
    ds = Dataset(tuple(
        make_sentence(sid, ["w"] * n, ["O"] * n) for sid, n in ids_tokens
    ))
    p = tmp_path / "e.seqemb"
    header = EmbeddingHeader(dim=2, num_layers=1)
    seqs = [
        EmbeddingSequence(sid, np.zeros((n, 1, 2), dtype=np.float32))
        for sid, n in ids_tokens
    ]
    write_embeddings(header, seqs, p)
    return ds, p


def test_alignment_ok(tmp_path):
    ds, p = _corpus_and_file(tmp_path, [("a", 2), ("b", 3)])
    report = validate_alignment(ds, p)
    assert report.ok
    assert report.describe() == "alignment OK"


def test_alignment_missing_id(tmp_path):
    ds, p = _corpus_and_file(tmp_path, [("a", 2), ("b", 3)])
    ds2 = Dataset(ds.sentences + (make_sentence("c", ["w"], ["O"]),))
    report = validate_alignment(ds2, p)
    assert report.missing_in_embeddings == ("c",)
    assert not report.ok


def test_alignment_token_count(tmp_path):
    ds, p = _corpus_and_file(tmp_path, [("a", 2)])
    ds2 = Dataset((make_sentence("a", ["w"] * 5, ["O"] * 5),))
    report = validate_alignment(ds2, p)
    assert report.token_count_mismatches == (("a", 5, 2),)


def test_zero_token_record_rejected(tmp_path):
    p = tmp_path / "zero.seqemb"
    header = EmbeddingHeader(dim=1, num_layers=1)
    hb = header.to_json_bytes()
    with open(p, "wb") as f:
        f.write(b"SEQEMB01")
        f.write(struct.pack("<I", len(hb)))
        f.write(hb)
        f.write(struct.pack("<I", 1) + b"x" + struct.pack("<I", 0))
    with pytest.raises(FormatError):
        _h, stream = read_embeddings(p)
        list(stream)


def test_header_invariants():
    with pytest.raises(FormatError):
        EmbeddingHeader(dim=0, num_layers=1)
    with pytest.raises(FormatError):
        EmbeddingHeader(dim=1, num_layers=1, version=2)
    with pytest.raises(FormatError):
        EmbeddingHeader(dim=1, num_layers=1, dtype="f64")


def test_duplicate_ids_rejected(tmp_path):
    p = tmp_path / "dup.seqemb"
    header = EmbeddingHeader(dim=1, num_layers=1)
    seqs = [
        EmbeddingSequence("x", np.zeros((1, 1, 1), dtype=np.float32)),
        EmbeddingSequence("x", np.zeros((1, 1, 1), dtype=np.float32)),
    ]
    write_embeddings(header, seqs, p)
    with pytest.raises(FormatError):
        load_embeddings(p)
