"""Hot linear-chain CRF kernels: forward, backward, expectations, Viterbi.

Two interchangeable backends compute identical math:

* ``numba`` -- loop kernels compiled with ``@njit(cache=True)`` (default when
  numba imports cleanly).  The L x L inner loops dominate training time at
  realistic label counts, which is what the JIT buys back.
* ``numpy`` -- vectorized fallback, no compilation step.

Selection: ``SEQTAG_BACKEND=numba|numpy`` in the environment; unset picks
numba when available.  ``benchmarks/bench_kernels.py`` compares the two.

All kernels take C-contiguous float64 arrays.  Scores are log-domain
throughout; log-sum-exp is max-stabilized, never probability-space.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import ConfigError

_ENV_FLAG = "SEQTAG_BACKEND"

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False

_requested = os.environ.get(_ENV_FLAG, "").strip().lower()
if _requested not in ("", "numba", "numpy"):
    raise ConfigError(f"{_ENV_FLAG} must be 'numba' or 'numpy', got {_requested!r}")
if _requested == "numba" and not _HAVE_NUMBA:
    raise ConfigError(f"{_ENV_FLAG}=numba but numba is not importable")

BACKEND = _requested or ("numba" if _HAVE_NUMBA else "numpy")
USING_NUMBA = BACKEND == "numba"

NEG_INF = -np.inf


# ---------------------------------------------------------------------------
# Loop implementations (numba-compilable; also usable interpreted)
# ---------------------------------------------------------------------------

def _forward_alpha_loops(em, trans, start):
    T, L = em.shape
    alpha = np.empty((T, L))
    for j in range(L):
        alpha[0, j] = start[j] + em[0, j]
    for t in range(1, T):
        for j in range(L):
            m = NEG_INF
            for i in range(L):
                v = alpha[t - 1, i] + trans[i, j]
                if v > m:
                    m = v
            s = 0.0
            for i in range(L):
                s += np.exp(alpha[t - 1, i] + trans[i, j] - m)
            alpha[t, j] = em[t, j] + m + np.log(s)
    return alpha


def _backward_beta_loops(em, trans, end):
    T, L = em.shape
    beta = np.empty((T, L))
    for i in range(L):
        beta[T - 1, i] = end[i]
    for t in range(T - 2, -1, -1):
        for i in range(L):
            m = NEG_INF
            for j in range(L):
                v = trans[i, j] + em[t + 1, j] + beta[t + 1, j]
                if v > m:
                    m = v
            s = 0.0
            for j in range(L):
                s += np.exp(trans[i, j] + em[t + 1, j] + beta[t + 1, j] - m)
            beta[t, i] = m + np.log(s)
    return beta


def _expectations_loops(em, trans, alpha, beta, log_z):
    T, L = em.shape
    marginals = np.empty((T, L))
    trans_expect = np.zeros((L, L))
    for t in range(T):
        for j in range(L):
            marginals[t, j] = np.exp(alpha[t, j] + beta[t, j] - log_z)
    for t in range(T - 1):
        for i in range(L):
            for j in range(L):
                trans_expect[i, j] += np.exp(
                    alpha[t, i] + trans[i, j] + em[t + 1, j] + beta[t + 1, j] - log_z
                )
    return marginals, trans_expect


def _viterbi_loops(em, trans, start, end, allowed, start_allowed, end_allowed):
    T, L = em.shape
    delta = np.empty(L)
    bp = np.zeros((T, L), dtype=np.int64)
    for j in range(L):
        delta[j] = start[j] + em[0, j] if start_allowed[j] else NEG_INF
    work = np.empty(L)
    for t in range(1, T):
        for j in range(L):
            best = NEG_INF
            arg = 0
            for i in range(L):
                if not allowed[i, j]:
                    continue
                v = delta[i] + trans[i, j]
                if v > best:
                    best = v
                    arg = i
            work[j] = best + em[t, j] if best > NEG_INF else NEG_INF
            bp[t, j] = arg
        for j in range(L):
            delta[j] = work[j]
    best = NEG_INF
    last = 0
    for j in range(L):
        if not end_allowed[j]:
            continue
        v = delta[j] + end[j]
        if v > best:
            best = v
            last = j
    path = np.empty(T, dtype=np.int64)
    path[T - 1] = last
    for t in range(T - 1, 0, -1):
        path[t - 1] = bp[t, path[t]]
    return path, best


# ---------------------------------------------------------------------------
# Vectorized numpy fallback
# ---------------------------------------------------------------------------

def _lse(x, axis):
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return np.squeeze(m, axis=axis) + np.log(
        np.sum(np.exp(x - m), axis=axis)
    )


def _forward_alpha_np(em, trans, start):
    T, L = em.shape
    alpha = np.empty((T, L))
    alpha[0] = start + em[0]
    for t in range(1, T):
        alpha[t] = em[t] + _lse(alpha[t - 1][:, None] + trans, axis=0)
    return alpha


def _backward_beta_np(em, trans, end):
    T, L = em.shape
    beta = np.empty((T, L))
    beta[T - 1] = end
    for t in range(T - 2, -1, -1):
        beta[t] = _lse(trans + (em[t + 1] + beta[t + 1])[None, :], axis=1)
    return beta


def _expectations_np(em, trans, alpha, beta, log_z):
    marginals = np.exp(alpha + beta - log_z)
    if em.shape[0] == 1:
        return marginals, np.zeros((em.shape[1], em.shape[1]))
    pair = (
        alpha[:-1, :, None]
        + trans[None, :, :]
        + (em[1:] + beta[1:])[:, None, :]
        - log_z
    )
    return marginals, np.exp(pair).sum(axis=0)


def _viterbi_np(em, trans, start, end, allowed, start_allowed, end_allowed):
    T, L = em.shape
    trans_m = np.where(allowed.astype(bool), trans, NEG_INF)
    delta = np.where(start_allowed.astype(bool), start + em[0], NEG_INF)
    bp = np.zeros((T, L), dtype=np.int64)
    for t in range(1, T):
        scores = delta[:, None] + trans_m
        bp[t] = np.argmax(scores, axis=0)  # argmax takes the lowest index on ties
        best = scores[bp[t], np.arange(L)]
        delta = np.where(np.isfinite(best), best + em[t], NEG_INF)
    final = np.where(end_allowed.astype(bool), delta + end, NEG_INF)
    last = int(np.argmax(final))
    path = np.empty(T, dtype=np.int64)
    path[T - 1] = last
    for t in range(T - 1, 0, -1):
        path[t - 1] = bp[t, path[t]]
    return path, float(final[last])


# ---------------------------------------------------------------------------
# Backend dispatch
# ---------------------------------------------------------------------------

if _HAVE_NUMBA:
    _forward_alpha_nb = njit(cache=True)(_forward_alpha_loops)
    _backward_beta_nb = njit(cache=True)(_backward_beta_loops)
    _expectations_nb = njit(cache=True)(_expectations_loops)
    _viterbi_nb = njit(cache=True)(_viterbi_loops)

if USING_NUMBA:
    forward_alpha = _forward_alpha_nb
    backward_beta = _backward_beta_nb
    expectations = _expectations_nb
    viterbi_decode = _viterbi_nb
else:
    forward_alpha = _forward_alpha_np
    backward_beta = _backward_beta_np
    expectations = _expectations_np
    viterbi_decode = _viterbi_np


def warmup() -> None:
    """Trigger JIT compilation so timed sections do not pay for it."""
    em = np.zeros((2, 3))
    trans = np.zeros((3, 3))
    vec = np.zeros(3)
    ok = np.ones((3, 3), dtype=np.uint8)
    okv = np.ones(3, dtype=np.uint8)
    alpha = forward_alpha(em, trans, vec)
    beta = backward_beta(em, trans, vec)
    expectations(em, trans, alpha, beta, float(np.log(9.0)))
    viterbi_decode(em, trans, vec, vec, ok, okv, okv)
