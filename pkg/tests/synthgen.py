"""Synthetic corpora with matching embedding files for tests and fixtures.

Each token's embedding is a fixed per-label center plus Gaussian noise, so a
head can learn the tagging from the vectors alone.  ``noise`` controls task
difficulty: small values make the data trivially separable, larger values
leave residual token-level ambiguity that sequence structure can resolve.

Run as a script to (re)generate the committed fixture files under
``tests/data/``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from seqtag.corpus import Dataset, Sentence, Token
from seqtag.embeddings import EmbeddingHeader, EmbeddingSequence, write_embeddings
from seqtag.schema import LabelSchema, bio_encode

DATA_DIR = Path(__file__).parent / "data"

SYNTH_SCHEMA = {
    "fine_types": ["Politician", "Artist", "Facility"],
    "coarse_types": ["PER", "LOC"],
    "fine_to_coarse": {"Politician": "PER", "Artist": "PER", "Facility": "LOC"},
}


def synth_schema() -> LabelSchema:
    return LabelSchema.from_dict(SYNTH_SCHEMA)


def generate(
    schema: LabelSchema,
    n_sentences: int,
    seed: int,
    dim: int = 16,
    num_layers: int = 3,
    noise: float = 0.1,
    min_len: int = 4,
    max_len: int = 10,
    id_prefix: str = "syn",
    centers_seed: int | None = None,
) -> tuple[Dataset, EmbeddingHeader, list[EmbeddingSequence]]:
    """Sample a corpus; pass the same ``centers_seed`` to draw train/dev
    splits from one underlying token distribution."""
    rng = np.random.default_rng([seed, 13])
    labels = schema.fg_bio_labels
    center_rng = np.random.default_rng([centers_seed if centers_seed is not None else seed, 7])
    centers = center_rng.normal(0.0, 1.0, size=(len(labels), dim))
    layer_shift = center_rng.normal(0.0, 0.3, size=(num_layers, dim))

    sentences = []
    seqs = []
    for s in range(n_sentences):
        t_len = int(rng.integers(min_len, max_len + 1))
        spans = []
        i = 0
        while i < t_len:
            if rng.random() < 0.45:
                end = min(t_len - 1, i + int(rng.integers(0, 3)))
                etype = str(rng.choice(schema.fine_types))
                spans.append((i, end, etype))
                i = end + 2  # keep a gap so spans stay unambiguous
            else:
                i += 1
        from seqtag.schema import EntitySpan

        tags = bio_encode([EntitySpan(*sp) for sp in spans], t_len)
        words = [
            f"{tag.replace('-', '').lower()}{int(rng.integers(0, 3))}" for tag in tags
        ]
        sid = f"{id_prefix}{s:04d}"
        sentences.append(
            Sentence(sid, tuple(Token(w) for w in words), tuple(tags))
        )
        vecs = np.empty((t_len, num_layers, dim), dtype=np.float32)
        for t, tag in enumerate(tags):
            base = centers[schema.fg_index[tag]]
            for l in range(num_layers):
                vecs[t, l] = base + layer_shift[l] + rng.normal(0.0, noise, size=dim)
        seqs.append(EmbeddingSequence(sid, vecs))
    header = EmbeddingHeader(dim=dim, num_layers=num_layers)
    return Dataset(tuple(sentences)), header, seqs


def write_pair(dataset, header, seqs, conll_path, emb_path):
    from seqtag.corpus import write_conll

    write_conll(dataset, conll_path)
    write_embeddings(header, seqs, emb_path)


def main():
    DATA_DIR.mkdir(exist_ok=True)
    schema = synth_schema()
    (DATA_DIR / "synth_schema.json").write_text(
        json.dumps(SYNTH_SCHEMA, indent=2) + "\n", encoding="utf-8"
    )
    ds, header, seqs = generate(schema, 50, seed=20230423)
    write_pair(ds, header, seqs, DATA_DIR / "synth50.conll", DATA_DIR / "synth50.seqemb")
    print(f"wrote {len(ds)} sentences to {DATA_DIR}")


if __name__ == "__main__":
    main()
