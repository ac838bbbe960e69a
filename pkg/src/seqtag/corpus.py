"""CoNLL-style corpus ingestion and corpus statistics.

Input files are UTF-8 text: blank lines separate sentences, lines starting
with ``#`` are comments (``# id <value> ...`` names the sentence), and token
lines are whitespace-separated columns.  The first column is the token, the
last column is the tag (when the file carries tags at all); middle columns
are ignored unless one is designated as POS.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from . import schema as _schema
from .errors import ParseError, SchemaError
from .schema import LabelSchema

HISTOGRAM_BUCKET = 10


@dataclass(frozen=True)
class Token:
    text: str
    pos: str | None = None

    def __post_init__(self):
        if not self.text:
            raise ValueError("empty token text")


@dataclass(frozen=True)
class Sentence:
    id: str
    tokens: tuple[Token, ...]
    fg_tags: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.fg_tags is not None and len(self.fg_tags) != len(self.tokens):
            raise ValueError(
                f"sentence {self.id}: {len(self.fg_tags)} tags for {len(self.tokens)} tokens"
            )

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def texts(self) -> list[str]:
        return [t.text for t in self.tokens]

    def with_tags(self, tags: list[str]) -> "Sentence":
        return Sentence(self.id, self.tokens, tuple(tags))


@dataclass(frozen=True)
class Dataset:
    sentences: tuple[Sentence, ...]

    def __len__(self) -> int:
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)

    def __getitem__(self, i):
        return self.sentences[i]

    @property
    def has_tags(self) -> bool:
        return all(s.fg_tags is not None for s in self.sentences)

    def by_id(self) -> dict[str, Sentence]:
        return {s.id: s for s in self.sentences}


@dataclass(frozen=True)
class CorpusStats:
    num_sentences: int
    length_histogram: dict[int, int]  # bucket lower bound -> count
    tag_frequency: dict[str, int]  # fine type -> decoded mention count


def _parse_id_comment(line: str) -> str | None:
    parts = line[1:].split()
    if len(parts) >= 2 and parts[0] == "id":
        return parts[1]
    return None


def parse_conll(
    path,
    schema: LabelSchema | None = None,
    pos_column: int | None = None,
) -> Dataset:
    """Parse a CoNLL-style file into a Dataset.

    When ``schema`` is given every tag is validated against its fine BIO
    label space; otherwise tags are kept verbatim.  ``pos_column`` selects a
    middle column (0-based) to read as the part-of-speech.
    """
    sentences: list[Sentence] = []
    cur_tokens: list[Token] = []
    cur_tags: list[str] = []
    cur_ncols: list[int] = []
    cur_id: str | None = None
    first_line: int | None = None
    running = 0

    def flush(line_no: int):
        nonlocal cur_tokens, cur_tags, cur_id, running, first_line, cur_ncols
        if not cur_tokens:
            cur_id = None
            return
        tagged = [n >= 2 for n in cur_ncols]
        if any(tagged) and not all(tagged):
            raise ParseError(
                "sentence mixes tagged and untagged token lines",
                str(path),
                first_line,
            )
        tags: tuple[str, ...] | None = tuple(cur_tags) if all(tagged) else None
        if tags is not None and schema is not None:
            try:
                _schema.validate_tags(list(tags), schema.fg_bio_labels)
            except SchemaError as e:
                raise SchemaError(f"{path}:{first_line}: {e}") from None
        sid = cur_id if cur_id is not None else str(running)
        sentences.append(Sentence(sid, tuple(cur_tokens), tags))
        running += 1
        cur_tokens, cur_tags, cur_ncols = [], [], []
        cur_id, first_line = None, None

    with open(path, encoding="utf-8") as f:
        line_no = 0
        for raw in f:
            line_no += 1
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                flush(line_no)
                continue
            if line.lstrip().startswith("#"):
                sid = _parse_id_comment(line.lstrip())
                if sid is not None:
                    cur_id = sid
                continue
            cols = line.split()
            if not cols:
                raise ParseError("line has no columns", str(path), line_no)
            if first_line is None:
                first_line = line_no
            pos = None
            if pos_column is not None and 0 <= pos_column < len(cols):
                pos = cols[pos_column]
            cur_tokens.append(Token(cols[0], pos))
            cur_ncols.append(len(cols))
            cur_tags.append(cols[-1] if len(cols) >= 2 else "")
        flush(line_no + 1)

    return Dataset(tuple(sentences))


def write_conll(dataset: Dataset, path) -> None:
    """Serialize a Dataset so that re-parsing reproduces texts, tags and ids."""
    with open(path, "w", encoding="utf-8") as f:
        for sent in dataset:
            f.write(f"# id {sent.id}\n")
            for i, tok in enumerate(sent.tokens):
                cols = [tok.text]
                if tok.pos is not None:
                    cols.append(tok.pos)
                if sent.fg_tags is not None:
                    cols.append(sent.fg_tags[i])
                f.write(" ".join(cols) + "\n")
            f.write("\n")


def corpus_stats(dataset: Dataset) -> CorpusStats:
    """Sentence-length histogram (bucket width 10) and per-type mention counts."""
    histogram: Counter[int] = Counter()
    tags: Counter[str] = Counter()
    for sent in dataset:
        histogram[(len(sent) // HISTOGRAM_BUCKET) * HISTOGRAM_BUCKET] += 1
        if sent.fg_tags is not None:
            for span in _schema.bio_decode(list(sent.fg_tags)):
                tags[span.etype] += 1
    return CorpusStats(
        num_sentences=len(dataset),
        length_histogram=dict(sorted(histogram.items())),
        tag_frequency=dict(tags.most_common()),
    )


def distinct_labels(dataset: Dataset) -> set[str]:
    """Set of BIO tag strings that actually occur in the gold annotation."""
    tagged = [s for s in dataset if s.fg_tags is not None]
    if len(dataset) and not tagged:
        raise SchemaError("corpus carries no gold tags")
    out: set[str] = set()
    for sent in tagged:
        out.update(sent.fg_tags)
    return out
