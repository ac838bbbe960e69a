"""Two-level label taxonomy and BIO tag algebra.

The label space is built from an ordered list of fine-grained entity types
and their grouping into coarse-grained types.  BIO label lists always put
``O`` at index 0 followed by ``B-t, I-t`` pairs in type order, so index
layout is a pure function of the type list.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

from .errors import SchemaError

O_TAG = "O"

DEFAULT_SCHEMA_RESOURCE = "multiconer2_en.json"


def _bio_labels(types: list[str]) -> list[str]:
    labels = [O_TAG]
    for t in types:
        labels.append(f"B-{t}")
        labels.append(f"I-{t}")
    return labels


@dataclass(frozen=True)
class EntitySpan:
    """Inclusive token span carrying an entity type name."""

    start: int
    end: int
    etype: str

    def __post_init__(self):
        if not (0 <= self.start <= self.end):
            raise ValueError(f"bad span [{self.start}, {self.end}]")


@dataclass(frozen=True)
class LabelSchema:
    """Fine/coarse type inventory with derived BIO label index maps."""

    fine_types: tuple[str, ...]
    coarse_types: tuple[str, ...]
    fine_to_coarse: dict[str, str]
    fg_bio_labels: tuple[str, ...] = field(init=False)
    cg_bio_labels: tuple[str, ...] = field(init=False)
    fg_index: dict[str, int] = field(init=False)
    cg_index: dict[str, int] = field(init=False)

    def __post_init__(self):
        if len(set(self.fine_types)) != len(self.fine_types):
            raise SchemaError("duplicate fine types")
        if len(set(self.coarse_types)) != len(self.coarse_types):
            raise SchemaError("duplicate coarse types")
        missing = [t for t in self.fine_types if t not in self.fine_to_coarse]
        if missing:
            raise SchemaError(f"fine types without a coarse group: {missing}")
        bad = sorted({c for c in self.fine_to_coarse.values() if c not in self.coarse_types})
        if bad:
            raise SchemaError(f"fine_to_coarse targets unknown coarse types: {bad}")
        object.__setattr__(self, "fg_bio_labels", tuple(_bio_labels(list(self.fine_types))))
        object.__setattr__(self, "cg_bio_labels", tuple(_bio_labels(list(self.coarse_types))))
        object.__setattr__(self, "fg_index", {l: i for i, l in enumerate(self.fg_bio_labels)})
        object.__setattr__(self, "cg_index", {l: i for i, l in enumerate(self.cg_bio_labels)})

    @property
    def num_fg_labels(self) -> int:
        return len(self.fg_bio_labels)

    @property
    def num_cg_labels(self) -> int:
        return len(self.cg_bio_labels)

    @classmethod
    def from_dict(cls, d: dict) -> "LabelSchema":
        try:
            return cls(
                fine_types=tuple(d["fine_types"]),
                coarse_types=tuple(d["coarse_types"]),
                fine_to_coarse=dict(d["fine_to_coarse"]),
            )
        except KeyError as e:
            raise SchemaError(f"schema file missing field {e}") from None

    @classmethod
    def from_file(cls, path) -> "LabelSchema":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))

    @classmethod
    def default(cls) -> "LabelSchema":
        """The MultiCoNER II English taxonomy shipped with the package."""
        text = resources.files("seqtag.data").joinpath(DEFAULT_SCHEMA_RESOURCE).read_text("utf-8")
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return {
            "fine_types": list(self.fine_types),
            "coarse_types": list(self.coarse_types),
            "fine_to_coarse": dict(self.fine_to_coarse),
        }

    def fingerprint(self) -> str:
        import hashlib

        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def split_tag(tag: str) -> tuple[str, str | None]:
    """Split a BIO tag into (prefix, type); ``O`` yields ("O", None)."""
    if tag == O_TAG:
        return O_TAG, None
    if len(tag) > 2 and tag[1] == "-" and tag[0] in ("B", "I"):
        return tag[0], tag[2:]
    raise SchemaError(f"not a BIO tag: {tag!r}")


def validate_tags(tags: list[str], label_space: tuple[str, ...] | list[str]) -> None:
    known = set(label_space)
    for tag in tags:
        if tag not in known:
            raise SchemaError(f"tag {tag!r} not in label space of size {len(known)}")


def bio_encode(spans: list[EntitySpan], length: int) -> list[str]:
    """Render non-overlapping spans as a BIO tag sequence of ``length`` tokens."""
    tags = [O_TAG] * length
    occupied = [False] * length
    for span in spans:
        if span.end >= length:
            raise ValueError(f"span {span} exceeds sentence length {length}")
        for i in range(span.start, span.end + 1):
            if occupied[i]:
                raise ValueError(f"overlapping spans at token {i}")
            occupied[i] = True
        tags[span.start] = f"B-{span.etype}"
        for i in range(span.start + 1, span.end + 1):
            tags[i] = f"I-{span.etype}"
    return tags


def bio_decode(tags: list[str]) -> list[EntitySpan]:
    """Extract spans from a BIO sequence.

    Ill-formed openings are repaired conlleval-style: an I-X that does not
    continue a running X span starts a new one, exactly as if it were B-X.
    """
    spans: list[EntitySpan] = []
    start = None
    etype = None
    for i, tag in enumerate(tags):
        prefix, t = split_tag(tag)
        if prefix == "B" or (prefix == "I" and t != etype):
            if start is not None:
                spans.append(EntitySpan(start, i - 1, etype))
            start, etype = i, t
        elif prefix == O_TAG:
            if start is not None:
                spans.append(EntitySpan(start, i - 1, etype))
            start, etype = None, None
        # else: I-X continuing an open X span
    if start is not None:
        spans.append(EntitySpan(start, len(tags) - 1, etype))
    return spans


def count_bio_repairs(tags: list[str]) -> int:
    """Number of I-X tags that open a span (i.e. would be rewritten to B-X)."""
    repairs = 0
    prev_type = None
    for tag in tags:
        prefix, t = split_tag(tag)
        if prefix == "I" and t != prev_type:
            repairs += 1
        prev_type = t if prefix in ("B", "I") else None
    return repairs


def derive_cg_tags(fg_tags: list[str], schema: LabelSchema) -> list[str]:
    """Project fine-grained BIO tags onto the coarse label space.

    B-/I- prefixes survive untouched; only the type name is mapped, so the
    O-position and B-position sets are preserved exactly.
    """
    out = []
    for tag in fg_tags:
        prefix, t = split_tag(tag)
        if t is None:
            out.append(O_TAG)
            continue
        coarse = schema.fine_to_coarse.get(t)
        if coarse is None:
            raise SchemaError(f"fine type {t!r} has no coarse mapping")
        out.append(f"{prefix}-{coarse}")
    return out


def tags_to_indices(tags: list[str], index: dict[str, int]) -> list[int]:
    try:
        return [index[t] for t in tags]
    except KeyError as e:
        raise SchemaError(f"tag {e} not in label space") from None
