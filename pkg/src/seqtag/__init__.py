"""Sequence-labeling toolkit: CRF/BiLSTM heads over precomputed embeddings."""

from ._kernels import BACKEND, USING_NUMBA
from .schema import EntitySpan, LabelSchema, bio_decode, bio_encode, derive_cg_tags
from .corpus import Dataset, Sentence, Token, parse_conll, write_conll

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "USING_NUMBA",
    "Dataset",
    "EntitySpan",
    "LabelSchema",
    "Sentence",
    "Token",
    "bio_decode",
    "bio_encode",
    "derive_cg_tags",
    "parse_conll",
    "write_conll",
    "__version__",
]
