"""Binary interchange format for precomputed per-token encoder embeddings.

Layout (all integers little-endian):

    magic ``SEQEMB01`` (8 bytes)
    u32 header length
    UTF-8 JSON header ``{"version":1,"dim":D,"num_layers":L,"dtype":"f32"}``
    records, each:
        u32 id length | id bytes (UTF-8)
        u32 num_tokens
        num_tokens * L * D float32 values, token-major, then layer, then dim

Layers are stored in ascending encoder depth, so "the last k layers" are the
final k stored layers.  Writing is byte-deterministic for identical inputs.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .corpus import Dataset
from .errors import FormatError

MAGIC = b"SEQEMB01"


@dataclass(frozen=True)
class EmbeddingHeader:
    dim: int
    num_layers: int
    version: int = 1
    dtype: str = "f32"

    def __post_init__(self):
        if self.version != 1:
            raise FormatError(f"unsupported version {self.version}")
        if self.dtype != "f32":
            raise FormatError(f"unsupported dtype {self.dtype!r}")
        if self.dim < 1 or self.num_layers < 1:
            raise FormatError("dim and num_layers must be >= 1")

    def to_json_bytes(self) -> bytes:
        # Fixed key order keeps the on-disk bytes deterministic.
        doc = {
            "version": self.version,
            "dim": self.dim,
            "num_layers": self.num_layers,
            "dtype": self.dtype,
        }
        return json.dumps(doc, separators=(",", ":")).encode("utf-8")


@dataclass(frozen=True)
class EmbeddingSequence:
    """Per-token, per-layer vectors for one sentence: shape (T, L, D) float32."""

    sentence_id: str
    vectors: np.ndarray

    def __post_init__(self):
        v = self.vectors
        if v.ndim != 3:
            raise ValueError(f"vectors must be (tokens, layers, dim), got shape {v.shape}")
        if v.shape[0] < 1:
            raise ValueError("sequence must have at least one token")
        if v.dtype != np.float32:
            raise ValueError(f"vectors must be float32, got {v.dtype}")

    @property
    def num_tokens(self) -> int:
        return self.vectors.shape[0]


def write_embeddings(header: EmbeddingHeader, sequences: Iterable[EmbeddingSequence], path) -> None:
    header_bytes = header.to_json_bytes()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        for seq in sequences:
            t, l, d = seq.vectors.shape
            if l != header.num_layers or d != header.dim:
                raise FormatError(
                    f"sequence {seq.sentence_id!r} has shape {(t, l, d)}, "
                    f"header wants layers={header.num_layers} dim={header.dim}"
                )
            id_bytes = seq.sentence_id.encode("utf-8")
            f.write(struct.pack("<I", len(id_bytes)))
            f.write(id_bytes)
            f.write(struct.pack("<I", t))
            f.write(np.ascontiguousarray(seq.vectors, dtype="<f4").tobytes())


def _read_exact(f, n: int, what: str) -> bytes:
    offset = f.tell()
    data = f.read(n)
    if len(data) != n:
        raise FormatError(f"truncated file while reading {what}", offset)
    return data


def read_embeddings(path) -> tuple[EmbeddingHeader, Iterator[EmbeddingSequence]]:
    """Open an embedding file; returns the header and a lazy record stream."""
    f = open(path, "rb")
    try:
        magic = _read_exact(f, 8, "magic")
        if magic != MAGIC:
            f.close()
            raise FormatError(f"bad magic {magic!r}", 0)
        (header_len,) = struct.unpack("<I", _read_exact(f, 4, "header length"))
        raw = _read_exact(f, header_len, "header")
    except Exception:
        f.close()
        raise
    try:
        doc = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        f.close()
        raise FormatError(f"unreadable header: {e}", 12) from None
    try:
        header = EmbeddingHeader(
            dim=doc["dim"], num_layers=doc["num_layers"],
            version=doc.get("version", 0), dtype=doc.get("dtype", ""),
        )
    except (KeyError, FormatError) as e:
        f.close()
        raise FormatError(f"invalid header: {e}", 12) from None

    def records() -> Iterator[EmbeddingSequence]:
        with f:
            while True:
                offset = f.tell()
                head = f.read(4)
                if not head:
                    return
                if len(head) != 4:
                    raise FormatError("truncated file while reading id length", offset)
                (id_len,) = struct.unpack("<I", head)
                sid = _read_exact(f, id_len, "sentence id").decode("utf-8")
                (num_tokens,) = struct.unpack("<I", _read_exact(f, 4, "token count"))
                if num_tokens < 1:
                    raise FormatError(f"record {sid!r} has zero tokens", offset)
                payload_off = f.tell()
                n = num_tokens * header.num_layers * header.dim
                payload = _read_exact(f, n * 4, "payload")
                vectors = np.frombuffer(payload, dtype="<f4").reshape(
                    num_tokens, header.num_layers, header.dim
                )
                if not np.all(np.isfinite(vectors)):
                    raise FormatError(f"non-finite values in record {sid!r}", payload_off)
                yield EmbeddingSequence(sid, np.ascontiguousarray(vectors, dtype=np.float32))

    return header, records()


def load_embeddings(path) -> tuple[EmbeddingHeader, dict[str, np.ndarray]]:
    """Read a whole file into a sentence-id -> (T, L, D) float32 map."""
    header, stream = read_embeddings(path)
    table: dict[str, np.ndarray] = {}
    for seq in stream:
        if seq.sentence_id in table:
            raise FormatError(f"duplicate sentence id {seq.sentence_id!r}")
        table[seq.sentence_id] = seq.vectors
    return header, table


def concat_layers(seq: EmbeddingSequence, k: int) -> np.ndarray:
    """Concatenate the last ``k`` stored layers per token -> (T, k*dim)."""
    return concat_last_layers(seq.vectors, k)


def concat_last_layers(vectors: np.ndarray, k: int) -> np.ndarray:
    t, num_layers, dim = vectors.shape
    if not (1 <= k <= num_layers):
        raise ValueError(f"k={k} not in [1, {num_layers}]")
    return np.ascontiguousarray(vectors[:, num_layers - k:, :]).reshape(t, k * dim)


@dataclass(frozen=True)
class AlignmentReport:
    missing_in_embeddings: tuple[str, ...]
    extra_in_embeddings: tuple[str, ...]
    token_count_mismatches: tuple[tuple[str, int, int], ...]  # (id, expected, found)

    @property
    def ok(self) -> bool:
        return not (
            self.missing_in_embeddings
            or self.extra_in_embeddings
            or self.token_count_mismatches
        )

    def describe(self) -> str:
        if self.ok:
            return "alignment OK"
        lines = []
        for sid in self.missing_in_embeddings:
            lines.append(f"missing in embeddings: {sid}")
        for sid in self.extra_in_embeddings:
            lines.append(f"not in corpus: {sid}")
        for sid, want, got in self.token_count_mismatches:
            lines.append(f"token count mismatch for {sid}: expected {want}, found {got}")
        return "\n".join(lines)


def validate_alignment(dataset: Dataset, path) -> AlignmentReport:
    """Check a one-to-one id match and per-sentence token-count equality."""
    _, table = load_embeddings(path)
    corpus_ids = {s.id: len(s) for s in dataset}
    missing = tuple(sid for sid in corpus_ids if sid not in table)
    extra = tuple(sid for sid in table if sid not in corpus_ids)
    mismatch = tuple(
        (sid, corpus_ids[sid], table[sid].shape[0])
        for sid in corpus_ids
        if sid in table and table[sid].shape[0] != corpus_ids[sid]
    )
    return AlignmentReport(missing, extra, mismatch)
