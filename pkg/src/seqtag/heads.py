"""Prediction heads over frozen encoder embeddings.

Pipeline per sentence (training and inference share it):

    concat last-k layers -> inverted dropout (train only) -> neighbor blend
    -> optional BiLSTM -> fine-grained projection
                       -> coarse-grained projection (auxiliary branch)

The coarse branch reads the same pre-projection representation as the fine
branch.  Forward passes cache enough activations (``ForwardTrace``) for
exact reverse-mode gradients of every head parameter; the encoder input is
frozen so no gradient flows past the first trainable operation.

LSTM cells use the standard sigmoid gates i, f, o and tanh candidate g:

    c_t = f * c_{t-1} + i * g,   h_t = o * tanh(c_t)

with gate pre-activations stacked [i; f; g; o].  The backward direction is
run by reversing the input, so forward and backward cells are the same code.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .crf import CrfParams
from .embeddings import concat_last_layers
from .errors import ConfigError
from .schema import LabelSchema

Array = np.ndarray

HEAD_KINDS = ("linear_ce", "linear_crf", "bilstm_crf")
BLEND_KINDS = ("none", "concat", "avg")
AUX_KINDS = ("none", "linear_ce", "crf")


@dataclass(frozen=True)
class HeadConfig:
    head_kind: str
    blend: str = "none"
    dropout_p: float = 0.0
    bilstm_hidden: int = 0
    aux_kind: str = "none"
    input_layers_k: int = 1

    def __post_init__(self):
        if self.head_kind not in HEAD_KINDS:
            raise ConfigError(f"head_kind must be one of {HEAD_KINDS}")
        if self.blend not in BLEND_KINDS:
            raise ConfigError(f"blend must be one of {BLEND_KINDS}")
        if self.aux_kind not in AUX_KINDS:
            raise ConfigError(f"aux_kind must be one of {AUX_KINDS}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError("dropout_p must be in [0, 1)")
        if self.head_kind == "bilstm_crf" and self.bilstm_hidden < 1:
            raise ConfigError("bilstm_crf needs bilstm_hidden >= 1")
        if self.input_layers_k < 1:
            raise ConfigError("input_layers_k must be >= 1")

    @property
    def uses_bilstm(self) -> bool:
        return self.head_kind == "bilstm_crf"

    @property
    def fg_loss_kind(self) -> str:
        return "ce" if self.head_kind == "linear_ce" else "crf"

    def blended_width(self, emb_dim: int) -> int:
        w = self.input_layers_k * emb_dim
        return 3 * w if self.blend == "concat" else w

    def rep_width(self, emb_dim: int) -> int:
        return 2 * self.bilstm_hidden if self.uses_bilstm else self.blended_width(emb_dim)

    def to_dict(self) -> dict:
        return {
            "head_kind": self.head_kind,
            "blend": self.blend,
            "dropout_p": self.dropout_p,
            "bilstm_hidden": self.bilstm_hidden,
            "aux_kind": self.aux_kind,
            "input_layers_k": self.input_layers_k,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HeadConfig":
        return cls(**d)


@dataclass
class LinearParams:
    weight: Array  # (out, in)
    bias: Array  # (out,)


@dataclass
class LstmDirParams:
    w_in: Array  # (4H, in)
    w_rec: Array  # (4H, H)
    bias: Array  # (4H,)

    @property
    def hidden(self) -> int:
        return self.w_rec.shape[1]


@dataclass
class BiLstmParams:
    fwd: LstmDirParams
    bwd: LstmDirParams


@dataclass
class HeadParams:
    config: HeadConfig
    emb_dim: int
    fg_proj: LinearParams
    cg_proj: LinearParams | None = None
    bilstm: BiLstmParams | None = None
    fg_crf: CrfParams | None = None
    cg_crf: CrfParams | None = None

    def flat(self) -> dict[str, Array]:
        """Name -> array views; updating an array in place updates the model."""
        out: dict[str, Array] = {
            "fg_proj.weight": self.fg_proj.weight,
            "fg_proj.bias": self.fg_proj.bias,
        }
        if self.cg_proj is not None:
            out["cg_proj.weight"] = self.cg_proj.weight
            out["cg_proj.bias"] = self.cg_proj.bias
        if self.bilstm is not None:
            for dname, d in (("fwd", self.bilstm.fwd), ("bwd", self.bilstm.bwd)):
                out[f"bilstm.{dname}.w_in"] = d.w_in
                out[f"bilstm.{dname}.w_rec"] = d.w_rec
                out[f"bilstm.{dname}.bias"] = d.bias
        if self.fg_crf is not None:
            out["fg_crf.transitions"] = self.fg_crf.transitions
            out["fg_crf.start"] = self.fg_crf.start
            out["fg_crf.end"] = self.fg_crf.end
        if self.cg_crf is not None:
            out["cg_crf.transitions"] = self.cg_crf.transitions
            out["cg_crf.start"] = self.cg_crf.start
            out["cg_crf.end"] = self.cg_crf.end
        return out


def param_group(name: str) -> str:
    """Optimizer group for per-group learning-rate multipliers."""
    head = name.split(".", 1)[0]
    if head == "bilstm":
        return "bilstm"
    if head.endswith("_crf"):
        return "crf"
    return "projection"


def _named_rng(seed: int, name: str) -> np.random.Generator:
    # Each parameter draws from its own stream, so adding or removing one
    # component never shifts the initialization of another.
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


def _glorot(rng: np.random.Generator, shape: tuple[int, int]) -> Array:
    fan_out, fan_in = shape
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _init_linear(seed: int, name: str, out_w: int, in_w: int) -> LinearParams:
    rng = _named_rng(seed, name)
    return LinearParams(weight=_glorot(rng, (out_w, in_w)), bias=np.zeros(out_w))


def _init_lstm_dir(seed: int, name: str, in_w: int, hidden: int) -> LstmDirParams:
    rng = _named_rng(seed, name)
    bias = np.zeros(4 * hidden)
    bias[hidden:2 * hidden] = 1.0  # forget gate opens at init
    return LstmDirParams(
        w_in=_glorot(rng, (4 * hidden, in_w)),
        w_rec=_glorot(rng, (4 * hidden, hidden)),
        bias=bias,
    )


def init_head_params(config: HeadConfig, schema: LabelSchema, emb_dim: int, seed: int) -> HeadParams:
    rep = config.rep_width(emb_dim)
    params = HeadParams(
        config=config,
        emb_dim=emb_dim,
        fg_proj=_init_linear(seed, "fg_proj", schema.num_fg_labels, rep),
    )
    if config.uses_bilstm:
        w = config.blended_width(emb_dim)
        params.bilstm = BiLstmParams(
            fwd=_init_lstm_dir(seed, "bilstm.fwd", w, config.bilstm_hidden),
            bwd=_init_lstm_dir(seed, "bilstm.bwd", w, config.bilstm_hidden),
        )
    if config.fg_loss_kind == "crf":
        params.fg_crf = CrfParams.zeros(schema.num_fg_labels)
    if config.aux_kind != "none":
        params.cg_proj = _init_linear(seed, "cg_proj", schema.num_cg_labels, rep)
        if config.aux_kind == "crf":
            params.cg_crf = CrfParams.zeros(schema.num_cg_labels)
    return params


# ---------------------------------------------------------------------------
# Blending
# ---------------------------------------------------------------------------

def blend_triplet(vectors: Array, mode: str) -> Array:
    """Combine each token with its immediate neighbors.

    Out-of-range neighbors are zero vectors.  ``concat`` yields width 3d in
    (prev, self, next) order; ``avg`` keeps width d as the mean of the three
    slots, zeros included.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError(f"expected (T, d) with T >= 1, got {x.shape}")
    prev = np.zeros_like(x)
    prev[1:] = x[:-1]
    nxt = np.zeros_like(x)
    nxt[:-1] = x[1:]
    if mode == "concat":
        return np.concatenate([prev, x, nxt], axis=1)
    if mode == "avg":
        return (prev + x + nxt) / 3.0
    raise ValueError(f"unknown blend mode {mode!r}")


def _blend_backward(d_out: Array, mode: str, width: int) -> Array:
    """Adjoint of blend_triplet (needed only inside gradient tests)."""
    if mode == "concat":
        d_prev, d_self, d_next = d_out[:, :width], d_out[:, width:2 * width], d_out[:, 2 * width:]
    elif mode == "avg":
        d_prev = d_self = d_next = d_out / 3.0
    else:
        return d_out
    dx = d_self.copy()
    dx[:-1] += d_prev[1:]
    dx[1:] += d_next[:-1]
    return dx


# ---------------------------------------------------------------------------
# Linear
# ---------------------------------------------------------------------------

def linear_forward(x: Array, p: LinearParams) -> Array:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1] != p.weight.shape[1]:
        raise ValueError(f"input width {x.shape[1]} != weight in-width {p.weight.shape[1]}")
    return x @ p.weight.T + p.bias


# ---------------------------------------------------------------------------
# LSTM
# ---------------------------------------------------------------------------

@dataclass
class LstmDirTrace:
    xs: Array  # inputs as fed (already reversed for the backward direction)
    i: Array
    f: Array
    g: Array
    o: Array
    c: Array
    tanh_c: Array
    h: Array


def _sigmoid(z: Array) -> Array:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _lstm_dir_forward(xs: Array, p: LstmDirParams) -> LstmDirTrace:
    T = xs.shape[0]
    H = p.hidden
    i = np.empty((T, H)); f = np.empty((T, H)); g = np.empty((T, H)); o = np.empty((T, H))
    c = np.empty((T, H)); tanh_c = np.empty((T, H)); h = np.empty((T, H))
    h_prev = np.zeros(H)
    c_prev = np.zeros(H)
    for t in range(T):
        a = p.w_in @ xs[t] + p.w_rec @ h_prev + p.bias
        i[t] = _sigmoid(a[:H])
        f[t] = _sigmoid(a[H:2 * H])
        g[t] = np.tanh(a[2 * H:3 * H])
        o[t] = _sigmoid(a[3 * H:])
        c[t] = f[t] * c_prev + i[t] * g[t]
        tanh_c[t] = np.tanh(c[t])
        h[t] = o[t] * tanh_c[t]
        h_prev, c_prev = h[t], c[t]
    return LstmDirTrace(xs, i, f, g, o, c, tanh_c, h)


def _lstm_dir_backward(trace: LstmDirTrace, p: LstmDirParams, d_h: Array):
    T, H = trace.h.shape
    g_w_in = np.zeros_like(p.w_in)
    g_w_rec = np.zeros_like(p.w_rec)
    g_bias = np.zeros_like(p.bias)
    dh_rec = np.zeros(H)
    dc_next = np.zeros(H)
    for t in range(T - 1, -1, -1):
        dh = d_h[t] + dh_rec
        do = dh * trace.tanh_c[t]
        dc = dh * trace.o[t] * (1.0 - trace.tanh_c[t] ** 2) + dc_next
        c_prev = trace.c[t - 1] if t > 0 else np.zeros(H)
        h_prev = trace.h[t - 1] if t > 0 else np.zeros(H)
        di = dc * trace.g[t]
        df = dc * c_prev
        dg = dc * trace.i[t]
        dc_next = dc * trace.f[t]
        da = np.concatenate([
            di * trace.i[t] * (1.0 - trace.i[t]),
            df * trace.f[t] * (1.0 - trace.f[t]),
            dg * (1.0 - trace.g[t] ** 2),
            do * trace.o[t] * (1.0 - trace.o[t]),
        ])
        g_w_in += np.outer(da, trace.xs[t])
        g_w_rec += np.outer(da, h_prev)
        g_bias += da
        dh_rec = p.w_rec.T @ da
    return g_w_in, g_w_rec, g_bias


def bilstm_forward(x: Array, p: BiLstmParams) -> tuple[Array, tuple[LstmDirTrace, LstmDirTrace]]:
    """Run both directions; per-token output is (forward state, backward state)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1] != p.fwd.w_in.shape[1]:
        raise ValueError(f"input width {x.shape[1]} != lstm in-width {p.fwd.w_in.shape[1]}")
    fwd = _lstm_dir_forward(x, p.fwd)
    bwd = _lstm_dir_forward(x[::-1].copy(), p.bwd)
    out = np.concatenate([fwd.h, bwd.h[::-1]], axis=1)
    return out, (fwd, bwd)


def bilstm_backward(traces, p: BiLstmParams, d_out: Array):
    fwd, bwd = traces
    H = p.fwd.hidden
    g_f = _lstm_dir_backward(fwd, p.fwd, d_out[:, :H])
    g_b = _lstm_dir_backward(bwd, p.bwd, d_out[::-1, H:])
    return g_f, g_b


# ---------------------------------------------------------------------------
# Masked cross-entropy
# ---------------------------------------------------------------------------

def masked_ce_with_grad(logits: Array, gold, mask) -> tuple[float, Array]:
    logits = np.asarray(logits, dtype=np.float64)
    gold = np.asarray(gold, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    T = logits.shape[0]
    if gold.shape != (T,) or mask.shape != (T,):
        raise ValueError("gold and mask must have one entry per token")
    n = int(mask.sum())
    if n == 0:
        raise ValueError("all positions masked")
    m = logits.max(axis=1, keepdims=True)
    log_z = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
    per_tok = log_z - logits[np.arange(T), gold]
    loss = float(per_tok[mask].mean())
    d = np.exp(logits - log_z[:, None])
    d[np.arange(T), gold] -= 1.0
    d[~mask] = 0.0
    d /= n
    return loss, d


def masked_ce(logits: Array, gold, mask) -> float:
    """Mean over unmasked positions of -log softmax(logits_t)[gold_t]."""
    return masked_ce_with_grad(logits, gold, mask)[0]


# ---------------------------------------------------------------------------
# Full head forward / backward
# ---------------------------------------------------------------------------

@dataclass
class ForwardTrace:
    config: HeadConfig
    x_blend: Array
    lstm_traces: tuple[LstmDirTrace, LstmDirTrace] | None
    rep: Array
    fg_scores: Array
    cg_scores: Array | None = None


def head_forward(
    vectors: Array,
    params: HeadParams,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[Array, Array | None, ForwardTrace]:
    """Scores for one sentence from its (T, num_layers, dim) embedding block.

    In eval mode dropout is the identity and the pass is deterministic.
    """
    config = params.config
    vectors = np.asarray(vectors)
    if vectors.ndim != 3:
        raise ValueError(f"expected (T, layers, dim), got {vectors.shape}")
    if vectors.shape[2] != params.emb_dim:
        raise ConfigError(
            f"embedding dim {vectors.shape[2]} != model dim {params.emb_dim}"
        )
    if config.input_layers_k > vectors.shape[1]:
        raise ConfigError(
            f"config wants last {config.input_layers_k} layers, file stores {vectors.shape[1]}"
        )
    x = concat_last_layers(vectors, config.input_layers_k).astype(np.float64)
    if train_mode and config.dropout_p > 0.0:
        if rng is None:
            raise ConfigError("train-mode forward with dropout needs an rng")
        keep = 1.0 - config.dropout_p
        x = x * (rng.random(x.shape) < keep) / keep
    x_blend = blend_triplet(x, config.blend) if config.blend != "none" else x
    lstm_traces = None
    if config.uses_bilstm:
        if params.bilstm is None:
            raise ConfigError("config wants a BiLSTM but params carry none")
        rep, lstm_traces = bilstm_forward(x_blend, params.bilstm)
    else:
        rep = x_blend
    fg_scores = linear_forward(rep, params.fg_proj)
    cg_scores = None
    if config.aux_kind != "none":
        if params.cg_proj is None:
            raise ConfigError("config wants an auxiliary branch but params carry none")
        cg_scores = linear_forward(rep, params.cg_proj)
    return fg_scores, cg_scores, ForwardTrace(
        config, x_blend, lstm_traces, rep, fg_scores, cg_scores
    )


def head_backward(
    trace: ForwardTrace,
    params: HeadParams,
    d_fg: Array,
    d_cg: Array | None = None,
) -> dict[str, Array]:
    """Exact parameter gradients given upstream score gradients."""
    config = trace.config
    d_fg = np.asarray(d_fg, dtype=np.float64)
    if d_fg.shape != trace.fg_scores.shape:
        raise ValueError("d_fg shape does not match the trace")
    grads: dict[str, Array] = {
        "fg_proj.weight": d_fg.T @ trace.rep,
        "fg_proj.bias": d_fg.sum(axis=0),
    }
    d_rep = d_fg @ params.fg_proj.weight
    if d_cg is not None:
        if trace.cg_scores is None:
            raise ValueError("trace has no auxiliary branch")
        d_cg = np.asarray(d_cg, dtype=np.float64)
        grads["cg_proj.weight"] = d_cg.T @ trace.rep
        grads["cg_proj.bias"] = d_cg.sum(axis=0)
        d_rep = d_rep + d_cg @ params.cg_proj.weight
    elif trace.cg_scores is not None and params.cg_proj is not None:
        grads["cg_proj.weight"] = np.zeros_like(params.cg_proj.weight)
        grads["cg_proj.bias"] = np.zeros_like(params.cg_proj.bias)
    if config.uses_bilstm:
        (g_wf, g_rf, g_bf), (g_wb, g_rb, g_bb) = bilstm_backward(
            trace.lstm_traces, params.bilstm, d_rep
        )
        grads.update({
            "bilstm.fwd.w_in": g_wf, "bilstm.fwd.w_rec": g_rf, "bilstm.fwd.bias": g_bf,
            "bilstm.bwd.w_in": g_wb, "bilstm.bwd.w_rec": g_rb, "bilstm.bwd.bias": g_bb,
        })
    return grads
