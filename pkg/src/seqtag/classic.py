"""Feature-engineered CRF baseline: sparse hand features, linear emissions.

Emissions are linear in binary/real-valued token features (current word,
suffixes, shape flags, previous-word context); the chain structure and all
inference reuse the shared CRF engine.  Training minimizes the summed NLL
plus an L2 penalty on every parameter by plain full-batch gradient descent,
which is convex in this parameterization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .corpus import Dataset, Sentence
from .crf import CrfParams, nll_grad, viterbi
from .errors import ConfigError, SchemaError
from .schema import LabelSchema, tags_to_indices

Array = np.ndarray

DEFAULT_SUFFIXES = (2, 3)


def extract_features(sentence: Sentence, i: int, suffixes=DEFAULT_SUFFIXES) -> dict[str, float]:
    """Sparse feature map for token ``i``; flags appear only when true."""
    tokens = sentence.tokens
    word = tokens[i].text
    feats = {"bias": 1.0, f"word={word.lower()}": 1.0}
    for n in suffixes:
        if len(word) >= n:
            feats[f"suf{n}={word[-n:].lower()}"] = 1.0
    if word.isdigit():
        feats["isdigit"] = 1.0
    if word.istitle():
        feats["istitle"] = 1.0
    if word.isupper():
        feats["isupper"] = 1.0
    if i == 0:
        feats["bos"] = 1.0
    else:
        prev = tokens[i - 1].text
        feats[f"prev_word={prev.lower()}"] = 1.0
        if prev.isdigit():
            feats["prev_isdigit"] = 1.0
        if tokens[i - 1].pos is not None:
            feats[f"prev_pos={tokens[i - 1].pos}"] = 1.0
        for n in suffixes:
            if len(prev) >= n:
                feats[f"prev_suf{n}={prev[-n:].lower()}"] = 1.0
    if i == len(tokens) - 1:
        feats["eos"] = 1.0
    return feats


def sentence_features(sentence: Sentence, suffixes=DEFAULT_SUFFIXES) -> list[dict[str, float]]:
    return [extract_features(sentence, i, suffixes) for i in range(len(sentence))]


@dataclass
class ClassicModel:
    labels: tuple[str, ...]
    feature_index: dict[str, int]
    weights: Array  # (num_features, num_labels)
    crf: CrfParams
    l2: float = 0.1
    suffixes: tuple[int, ...] = DEFAULT_SUFFIXES

    @property
    def num_labels(self) -> int:
        return len(self.labels)

    @classmethod
    def empty(cls, labels, feature_index, l2=0.1, suffixes=DEFAULT_SUFFIXES) -> "ClassicModel":
        L = len(labels)
        return cls(
            labels=tuple(labels),
            feature_index=dict(feature_index),
            weights=np.zeros((len(feature_index), L)),
            crf=CrfParams.zeros(L),
            l2=l2,
            suffixes=tuple(suffixes),
        )


def emissions_from_features(feats: list[dict[str, float]], model: ClassicModel) -> Array:
    """emissions[t, l] = sum over token features of value * weight; unseen features score 0."""
    em = np.zeros((len(feats), model.num_labels))
    for t, fv in enumerate(feats):
        for name, value in fv.items():
            fi = model.feature_index.get(name)
            if fi is not None:
                em[t] += value * model.weights[fi]
    return em


def _encode(dataset: Dataset, model: ClassicModel, labels_index: dict[str, int]):
    encoded = []
    for sent in dataset:
        feats = sentence_features(sent, model.suffixes)
        gold = np.array(tags_to_indices(list(sent.fg_tags), labels_index))
        encoded.append((feats, gold))
    return encoded


def objective_and_grads(model: ClassicModel, dataset: Dataset):
    """Summed NLL + L2 over all parameters, with exact gradients."""
    labels_index = {lab: i for i, lab in enumerate(model.labels)}
    g_w = np.zeros_like(model.weights)
    g_trans = np.zeros_like(model.crf.transitions)
    g_start = np.zeros_like(model.crf.start)
    g_end = np.zeros_like(model.crf.end)
    total = 0.0
    for sent in dataset:
        feats = sentence_features(sent, model.suffixes)
        gold = np.array(tags_to_indices(list(sent.fg_tags), labels_index))
        em = emissions_from_features(feats, model)
        value, g_em, g_tr, g_st, g_en = nll_grad(em, gold, model.crf)
        total += value
        g_trans += g_tr
        g_start += g_st
        g_end += g_en
        for t, fv in enumerate(feats):
            for name, v in fv.items():
                fi = model.feature_index.get(name)
                if fi is not None:
                    g_w[fi] += v * g_em[t]
    lam = model.l2
    total += lam * (
        float((model.weights ** 2).sum())
        + float((model.crf.transitions ** 2).sum())
        + float((model.crf.start ** 2).sum())
        + float((model.crf.end ** 2).sum())
    )
    g_w += 2.0 * lam * model.weights
    g_trans += 2.0 * lam * model.crf.transitions
    g_start += 2.0 * lam * model.crf.start
    g_end += 2.0 * lam * model.crf.end
    return total, g_w, g_trans, g_start, g_end


def train_classic(
    dataset: Dataset,
    schema: LabelSchema,
    l2: float = 0.1,
    epochs: int = 100,
    lr: float = 0.1,
    seed: int = 0,
    suffixes=DEFAULT_SUFFIXES,
) -> tuple[ClassicModel, list[float]]:
    """Fit the baseline by full-batch gradient descent from zero weights.

    The run is deterministic; ``seed`` is accepted for interface parity with
    the neural trainer but nothing here is stochastic.  Returns the model
    and the per-epoch objective trace.
    """
    if len(dataset) == 0:
        raise ConfigError("empty training corpus")
    if not dataset.has_tags:
        raise SchemaError("training corpus must carry gold tags")
    vocab: dict[str, int] = {}
    for sent in dataset:
        for fv in sentence_features(sent, suffixes):
            for name in fv:
                if name not in vocab:
                    vocab[name] = len(vocab)
    model = ClassicModel.empty(schema.fg_bio_labels, vocab, l2=l2, suffixes=suffixes)
    trace = []
    for _ in range(epochs):
        total, g_w, g_tr, g_st, g_en = objective_and_grads(model, dataset)
        trace.append(total)
        model.weights -= lr * g_w
        model.crf.transitions -= lr * g_tr
        model.crf.start -= lr * g_st
        model.crf.end -= lr * g_en
    return model, trace


def predict_classic(model: ClassicModel, dataset: Dataset) -> Dataset:
    """Viterbi decode over feature emissions for every sentence."""
    out = []
    for sent in dataset:
        em = emissions_from_features(sentence_features(sent, model.suffixes), model)
        path, _ = viterbi(em, model.crf)
        out.append(sent.with_tags([model.labels[i] for i in path]))
    return Dataset(tuple(out))


def save_classic(model: ClassicModel, path) -> None:
    by_name = {
        name: [float(x) for x in model.weights[fi]]
        for name, fi in sorted(model.feature_index.items(), key=lambda kv: kv[1])
    }
    doc = {
        "version": 1,
        "l2": model.l2,
        "suffixes": list(model.suffixes),
        "labels": list(model.labels),
        "features": by_name,
        "transitions": model.crf.transitions.tolist(),
        "start": model.crf.start.tolist(),
        "end": model.crf.end.tolist(),
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)
        f.write("\n")


def load_classic(path) -> ClassicModel:
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("version") != 1:
        raise ConfigError(f"unsupported classic model version {doc.get('version')}")
    labels = tuple(doc["labels"])
    names = list(doc["features"])
    feature_index = {name: i for i, name in enumerate(names)}
    weights = np.array([doc["features"][name] for name in names], dtype=np.float64)
    if weights.size == 0:
        weights = weights.reshape(0, len(labels))
    crf = CrfParams(
        transitions=np.array(doc["transitions"], dtype=np.float64),
        start=np.array(doc["start"], dtype=np.float64),
        end=np.array(doc["end"], dtype=np.float64),
    )
    return ClassicModel(
        labels=labels,
        feature_index=feature_index,
        weights=weights,
        crf=crf,
        l2=doc["l2"],
        suffixes=tuple(doc["suffixes"]),
    )
