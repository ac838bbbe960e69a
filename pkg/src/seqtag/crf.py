"""Linear-chain CRF: scoring, exact log-partition, gradients, Viterbi.

Scores are additive in log space: a path scores

    start[y0] + sum_t em[t, y_t] + sum_t trans[y_t, y_{t+1}] + end[y_{T-1}]

``nll_grad`` returns expectation-minus-observation gradients computed by
forward-backward; decode-time hard constraints live in ``TransitionMask``
and never touch the stored parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import NumericError
from .schema import LabelSchema

Array = np.ndarray


@dataclass
class CrfParams:
    transitions: Array  # (L, L), [i, j] scores label i -> label j
    start: Array  # (L,)
    end: Array  # (L,)

    def __post_init__(self):
        L = self.start.shape[0]
        if self.transitions.shape != (L, L) or self.end.shape != (L,):
            raise ValueError("inconsistent CRF parameter shapes")

    @property
    def num_labels(self) -> int:
        return self.start.shape[0]

    @classmethod
    def zeros(cls, num_labels: int) -> "CrfParams":
        return cls(
            transitions=np.zeros((num_labels, num_labels)),
            start=np.zeros(num_labels),
            end=np.zeros(num_labels),
        )


@dataclass(frozen=True)
class TransitionMask:
    """Decode-time hard constraints; True means allowed."""

    allowed: Array  # (L, L) bool
    start_allowed: Array  # (L,) bool
    end_allowed: Array  # (L,) bool

    def __post_init__(self):
        if not self.allowed.any(axis=1).all() or not self.allowed.any(axis=0).all():
            raise ValueError("every label needs an allowed successor and predecessor")


def _as_f64(em: Array) -> Array:
    em = np.ascontiguousarray(em, dtype=np.float64)
    if em.ndim != 2 or em.shape[0] < 1:
        raise ValueError(f"emissions must be (T, L) with T >= 1, got {em.shape}")
    return em


def path_score(emissions: Array, tags, params: CrfParams) -> float:
    em = _as_f64(emissions)
    tags = np.asarray(tags, dtype=np.int64)
    T, L = em.shape
    if tags.shape != (T,):
        raise ValueError(f"expected {T} tags, got {tags.shape}")
    if tags.min() < 0 or tags.max() >= L:
        raise ValueError("tag index out of range")
    score = params.start[tags[0]] + params.end[tags[-1]]
    score += em[np.arange(T), tags].sum()
    score += params.transitions[tags[:-1], tags[1:]].sum()
    return float(score)


def log_partition(emissions: Array, params: CrfParams) -> float:
    em = _as_f64(emissions)
    alpha = _kernels.forward_alpha(em, params.transitions, params.start)
    final = alpha[-1] + params.end
    m = final.max()
    return float(m + np.log(np.exp(final - m).sum()))


def nll(emissions: Array, tags, params: CrfParams) -> float:
    return log_partition(emissions, params) - path_score(emissions, tags, params)


def nll_grad(emissions: Array, tags, params: CrfParams):
    """Negative log-likelihood and its exact gradients.

    Returns ``(nll, g_emissions, g_transitions, g_start, g_end)`` where each
    gradient is the posterior expectation of the corresponding sufficient
    statistic minus its gold count.
    """
    em = _as_f64(emissions)
    tags = np.asarray(tags, dtype=np.int64)
    T, L = em.shape
    alpha = _kernels.forward_alpha(em, params.transitions, params.start)
    beta = _kernels.backward_beta(em, params.transitions, params.end)
    final = alpha[-1] + params.end
    m = final.max()
    log_z = float(m + np.log(np.exp(final - m).sum()))
    marginals, trans_expect = _kernels.expectations(em, params.transitions, alpha, beta, log_z)

    g_em = marginals.copy()
    g_em[np.arange(T), tags] -= 1.0
    g_trans = trans_expect.copy()
    np.subtract.at(g_trans, (tags[:-1], tags[1:]), 1.0)
    g_start = marginals[0].copy()
    g_start[tags[0]] -= 1.0
    g_end = marginals[-1].copy()
    g_end[tags[-1]] -= 1.0
    value = log_z - path_score(em, tags, params)
    return value, g_em, g_trans, g_start, g_end


def viterbi(
    emissions: Array,
    params: CrfParams,
    mask: TransitionMask | None = None,
) -> tuple[list[int], float]:
    """Best-scoring path; ties broken toward the lowest label index.

    With a mask, maximization is restricted to allowed transitions.  The
    returned score always equals ``path_score`` of the returned path.
    """
    em = _as_f64(emissions)
    L = em.shape[1]
    if mask is None:
        allowed = np.ones((L, L), dtype=np.uint8)
        start_allowed = np.ones(L, dtype=np.uint8)
        end_allowed = np.ones(L, dtype=np.uint8)
    else:
        allowed = np.ascontiguousarray(mask.allowed, dtype=np.uint8)
        start_allowed = np.ascontiguousarray(mask.start_allowed, dtype=np.uint8)
        end_allowed = np.ascontiguousarray(mask.end_allowed, dtype=np.uint8)
    path, score = _kernels.viterbi_decode(
        em, params.transitions, params.start, params.end,
        allowed, start_allowed, end_allowed,
    )
    if not np.isfinite(score):
        raise NumericError("transition mask eliminates every path")
    path = [int(i) for i in path]
    return path, path_score(em, path, params)


def bio_mask(schema: LabelSchema, space: str = "fine") -> TransitionMask:
    """BIO validity mask: forbids start->I-X, O->I-X, B-X->I-Y and I-X->I-Y (X != Y)."""
    if space == "fine":
        labels = schema.fg_bio_labels
    elif space == "coarse":
        labels = schema.cg_bio_labels
    else:
        raise ValueError(f"space must be 'fine' or 'coarse', got {space!r}")
    L = len(labels)
    kinds = []  # (prefix, type) with O as ("O", None)
    for lab in labels:
        if lab == "O":
            kinds.append(("O", None))
        else:
            kinds.append((lab[0], lab[2:]))
    allowed = np.ones((L, L), dtype=bool)
    start_allowed = np.ones(L, dtype=bool)
    end_allowed = np.ones(L, dtype=bool)
    for j, (pj, tj) in enumerate(kinds):
        if pj != "I":
            continue
        start_allowed[j] = False
        for i, (pi, ti) in enumerate(kinds):
            if pi == "O" or ti != tj:
                allowed[i, j] = False
    return TransitionMask(allowed, start_allowed, end_allowed)
