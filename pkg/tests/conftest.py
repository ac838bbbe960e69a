import numpy as np
import pytest

from seqtag.corpus import Dataset, Sentence, Token
from seqtag.schema import LabelSchema


@pytest.fixture(scope="session")
def small_schema():
    """3 fine types in 2 coarse groups: 7 FG BIO labels, 5 CG labels."""
    return LabelSchema(
        fine_types=("Politician", "Artist", "Facility"),
        coarse_types=("PER", "LOC"),
        fine_to_coarse={"Politician": "PER", "Artist": "PER", "Facility": "LOC"},
    )


@pytest.fixture(scope="session")
def default_schema():
    return LabelSchema.default()


def make_sentence(sid, words, tags=None, pos=None):
    tokens = tuple(
        Token(w, pos[i] if pos else None) for i, w in enumerate(words)
    )
    return Sentence(sid, tokens, tuple(tags) if tags else None)


@pytest.fixture
def tiny_dataset(small_schema):
    return Dataset((
        make_sentence("s0", ["uma", "visited", "the", "capitol"],
                      ["B-Artist", "O", "O", "B-Facility"]),
        make_sentence("s1", ["obama", "barack"], ["B-Politician", "I-Politician"]),
        make_sentence("s2", ["nothing", "here"], ["O", "O"]),
    ))


def random_emissions(rng, t, l, scale=2.0):
    return rng.normal(0.0, scale, size=(t, l))
