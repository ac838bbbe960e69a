"""Training loop: decaying auxiliary loss, per-group LRs, checkpoints.

The objective combines the coarse-grained auxiliary branch with the main
fine-grained branch as

    loss = W * cg_loss + (1 - W) * scale * fg_loss

where W falls from 1.0 to a residual floor (default 0.1) across epochs and
``scale`` compensates for the loss-magnitude gap caused by the differing
label-space sizes.  ``scale`` is either fixed in the config or frozen from
the first batch's loss ratio under untrained parameters.

Determinism contract: given (seed, config, data), two runs produce identical
per-epoch logs and predictions.  Every random stream is derived from the
seed plus a stable label (parameter name, epoch, sentence id), and gradient
accumulation within a batch follows sentence order.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .corpus import Dataset
from .crf import nll_grad, viterbi, bio_mask
from .embeddings import load_embeddings, validate_alignment
from .errors import AlignmentError, ConfigError, FormatError, NumericError, SchemaError
from .heads import (
    HeadConfig,
    HeadParams,
    head_backward,
    head_forward,
    init_head_params,
    masked_ce_with_grad,
    param_group,
)
from .schema import LabelSchema, derive_cg_tags, tags_to_indices

Array = np.ndarray

CKPT_MAGIC = b"SEQCKPT1"


# ---------------------------------------------------------------------------
# Loss schedule and combination
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LossWeightSchedule:
    total_epochs: int
    residual: float = 0.1
    shape: str = "linear"  # "linear" or "constant" (W = residual throughout)

    def __post_init__(self):
        if self.total_epochs < 1:
            raise ConfigError("total_epochs must be >= 1")
        if not 0.0 <= self.residual <= 1.0:
            raise ConfigError("residual must be in [0, 1]")
        if self.shape not in ("linear", "constant"):
            raise ConfigError(f"unknown schedule shape {self.shape!r}")


def aux_weight(epoch: int, schedule: LossWeightSchedule) -> float:
    """Per-epoch auxiliary weight; linear decay from 1.0 down to the residual."""
    E, r = schedule.total_epochs, schedule.residual
    if not 0 <= epoch < E:
        raise ValueError(f"epoch {epoch} outside [0, {E})")
    if schedule.shape == "constant":
        return r
    # Endpoints are exact by construction: W(0) = 1, W(E-1) = residual.
    if E == 1 or epoch == 0:
        return 1.0
    if epoch == E - 1:
        return r
    return max(r, 1.0 - (1.0 - r) * (epoch / (E - 1)))


def combined_loss(cg_loss: float, fg_loss: float, w: float, scale: float) -> float:
    return w * cg_loss + (1.0 - w) * scale * fg_loss


def compute_scale(scale_setting, cg_loss0: float, fg_loss0: float) -> float:
    """Resolve the loss-scale factor; 'auto' freezes the first-batch ratio."""
    if scale_setting != "auto":
        return float(scale_setting)
    if fg_loss0 == 0.0:
        raise NumericError("cannot auto-scale: first-batch FG loss is zero")
    return float(np.clip(cg_loss0 / fg_loss0, 0.01, 100.0))


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    head: HeadConfig
    epochs: int = 20
    batch_size: int = 16
    base_lr: float = 1e-3
    lr_multipliers: dict[str, float] = field(default_factory=dict)
    residual: float = 0.1
    schedule_shape: str = "linear"
    scale: float | str = "auto"
    seed: int = 0
    shuffle: bool = True
    constrained_decode: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if not 0.0 <= self.residual <= 1.0:
            raise ConfigError("residual must be in [0, 1]")
        if any(m <= 0 for m in self.lr_multipliers.values()):
            raise ConfigError("lr multipliers must be positive")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.scale != "auto" and not isinstance(self.scale, (int, float)):
            raise ConfigError("scale must be 'auto' or a number")

    def to_dict(self) -> dict:
        return {
            "head": self.head.to_dict(),
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "base_lr": self.base_lr,
            "lr_multipliers": dict(self.lr_multipliers),
            "residual": self.residual,
            "schedule_shape": self.schedule_shape,
            "scale": self.scale,
            "seed": self.seed,
            "shuffle": self.shuffle,
            "constrained_decode": self.constrained_decode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        try:
            d["head"] = HeadConfig.from_dict(d["head"])
        except KeyError:
            raise ConfigError("config is missing the 'head' section") from None
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(f"bad config: {e}") from None


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

class Adam:
    """Adam with named parameter groups; group LR = base_lr * multiplier."""

    def __init__(
        self,
        params: dict[str, Array],
        base_lr: float,
        multipliers: dict[str, float] | None = None,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        multipliers = multipliers or {}
        self.params = params
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.group_lr = {
            g: base_lr * multipliers.get(g, 1.0)
            for g in sorted({param_group(k) for k in params})
        }
        self.effective_lr = {k: self.group_lr[param_group(k)] for k in params}

    def step(self, grads: dict[str, Array]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.effective_lr[name] * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    config: TrainConfig
    params: HeadParams
    epoch: int
    schema_fingerprint: str
    scale: float
    emb_dim: int


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    flat = ckpt.params.flat()
    names = sorted(flat)
    header = {
        "version": 1,
        "epoch": ckpt.epoch,
        "scale": ckpt.scale,
        "emb_dim": ckpt.emb_dim,
        "schema_sha256": ckpt.schema_fingerprint,
        "config": ckpt.config.to_dict(),
        "arrays": [{"name": n, "shape": list(flat[n].shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for n in names:
            f.write(np.ascontiguousarray(flat[n], dtype="<f8").tobytes())


def load_checkpoint(path, schema: LabelSchema) -> Checkpoint:
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != CKPT_MAGIC:
            raise FormatError(f"bad checkpoint magic {magic!r}", 0)
        raw = f.read(4)
        if len(raw) != 4:
            raise FormatError("truncated checkpoint header", 8)
        (n,) = struct.unpack("<I", raw)
        blob = f.read(n)
        if len(blob) != n:
            raise FormatError("truncated checkpoint header", 12)
        header = json.loads(blob.decode("utf-8"))
        if header.get("version") != 1:
            raise FormatError(f"unsupported checkpoint version {header.get('version')}")
        if header["schema_sha256"] != schema.fingerprint():
            raise SchemaError(
                "checkpoint was trained against a different label schema "
                f"(fingerprint {header['schema_sha256'][:12]}..., "
                f"got {schema.fingerprint()[:12]}...)"
            )
        config = TrainConfig.from_dict(header["config"])
        params = init_head_params(config.head, schema, header["emb_dim"], config.seed)
        flat = params.flat()
        for spec in header["arrays"]:
            name, shape = spec["name"], tuple(spec["shape"])
            if name not in flat:
                raise FormatError(f"checkpoint array {name!r} not in model")
            if flat[name].shape != shape:
                raise FormatError(
                    f"checkpoint array {name!r} has shape {shape}, model wants {flat[name].shape}"
                )
            count = int(np.prod(shape)) if shape else 1
            data = f.read(count * 8)
            if len(data) != count * 8:
                raise FormatError(f"truncated checkpoint payload at {name!r}")
            flat[name][...] = np.frombuffer(data, dtype="<f8").reshape(shape)
    return Checkpoint(
        config=config,
        params=params,
        epoch=header["epoch"],
        schema_fingerprint=header["schema_sha256"],
        scale=header["scale"],
        emb_dim=header["emb_dim"],
    )


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def _rng(*parts) -> np.random.Generator:
    entropy = [p if isinstance(p, int) else zlib.crc32(str(p).encode()) for p in parts]
    return np.random.default_rng(entropy)


@dataclass
class _SentencePass:
    fg_loss: float
    cg_loss: float
    trace: object
    d_fg: Array
    d_cg: Array | None
    crf_grads: dict[str, Array]  # raw fg/cg CRF parameter gradients


def _forward_sentence(params, vectors, fg_gold, cg_gold, train_mode, rng):
    config = params.config
    fg_scores, cg_scores, trace = head_forward(vectors, params, train_mode, rng)
    crf_grads: dict[str, Array] = {}
    mask = np.ones(len(fg_gold), dtype=bool)
    if config.fg_loss_kind == "ce":
        fg_loss, d_fg = masked_ce_with_grad(fg_scores, fg_gold, mask)
    else:
        fg_loss, d_fg, g_tr, g_st, g_en = nll_grad(fg_scores, fg_gold, params.fg_crf)
        crf_grads["fg_crf.transitions"] = g_tr
        crf_grads["fg_crf.start"] = g_st
        crf_grads["fg_crf.end"] = g_en
    cg_loss, d_cg = 0.0, None
    if config.aux_kind == "linear_ce":
        cg_loss, d_cg = masked_ce_with_grad(cg_scores, cg_gold, mask)
    elif config.aux_kind == "crf":
        cg_loss, d_cg, g_tr, g_st, g_en = nll_grad(cg_scores, cg_gold, params.cg_crf)
        crf_grads["cg_crf.transitions"] = g_tr
        crf_grads["cg_crf.start"] = g_st
        crf_grads["cg_crf.end"] = g_en
    return _SentencePass(fg_loss, cg_loss, trace, d_fg, d_cg, crf_grads)


def _decode_sentence(params, vectors, constrained_mask) -> list[int]:
    fg_scores, _, _ = head_forward(vectors, params, train_mode=False)
    if params.config.fg_loss_kind == "ce":
        return [int(i) for i in np.argmax(fg_scores, axis=1)]
    path, _ = viterbi(fg_scores, params.fg_crf, constrained_mask)
    return path


def _micro_f1(gold_ds: Dataset, pred_ds: Dataset) -> float:
    from .evaluation import score

    return score(gold_ds, pred_ds).micro_f1


def train(
    dataset: Dataset,
    embeddings_path,
    schema: LabelSchema,
    config: TrainConfig,
) -> tuple[Checkpoint, list[dict]]:
    """Train a head on precomputed embeddings; returns the checkpoint and
    one log row per epoch."""
    report = validate_alignment(dataset, embeddings_path)
    if not report.ok:
        raise AlignmentError(report.describe())
    header, table = load_embeddings(embeddings_path)
    if not dataset.has_tags:
        raise SchemaError("training corpus must carry gold tags")
    if len(dataset) == 0:
        raise ConfigError("empty training corpus")

    aux_on = config.head.aux_kind != "none"
    fg_gold = {}
    cg_gold = {}
    for sent in dataset:
        fg_gold[sent.id] = np.array(tags_to_indices(list(sent.fg_tags), schema.fg_index))
        if aux_on:
            cg = derive_cg_tags(list(sent.fg_tags), schema)
            cg_gold[sent.id] = np.array(tags_to_indices(cg, schema.cg_index))

    params = init_head_params(config.head, schema, header.dim, config.seed)
    flat = params.flat()
    opt = Adam(flat, config.base_lr, config.lr_multipliers)
    schedule = LossWeightSchedule(config.epochs, config.residual, config.schedule_shape)
    # Without an auxiliary branch the objective is plain FG loss: W = 0, scale = 1.
    scale_value: float | None = None if aux_on else 1.0

    n = len(dataset)
    rows: list[dict] = []
    decode_mask = bio_mask(schema, "fine") if (
        config.constrained_decode and config.head.fg_loss_kind == "crf"
    ) else None

    for epoch in range(config.epochs):
        w = aux_weight(epoch, schedule) if aux_on else 0.0
        order = list(range(n))
        if config.shuffle:
            order = [int(i) for i in _rng(config.seed, epoch, "shuffle").permutation(n)]
        fg_sum = 0.0
        cg_sum = 0.0
        combined_sum = 0.0
        for b0 in range(0, n, config.batch_size):
            batch = order[b0:b0 + config.batch_size]
            passes = []
            for idx in batch:
                sent = dataset[idx]
                rng = _rng(config.seed, epoch, sent.id)
                passes.append((idx, _forward_sentence(
                    params,
                    table[sent.id],
                    fg_gold[sent.id],
                    cg_gold.get(sent.id),
                    True,
                    rng,
                )))
            batch_fg = float(np.mean([p.fg_loss for _, p in passes]))
            batch_cg = float(np.mean([p.cg_loss for _, p in passes]))
            if scale_value is None:
                scale_value = compute_scale(config.scale, batch_cg, batch_fg)
            batch_loss = combined_loss(batch_cg, batch_fg, w, scale_value)
            if not np.isfinite(batch_loss):
                raise NumericError(
                    f"non-finite loss in epoch {epoch}, batch starting at {b0} "
                    f"(sentence ids {[dataset[i].id for i in batch]})"
                )
            grads = {name: np.zeros_like(arr) for name, arr in flat.items()}
            fg_w = (1.0 - w) * scale_value / len(batch)
            cg_w = w / len(batch)
            for _idx, p in passes:  # fixed order: as listed in the batch
                head_grads = head_backward(
                    p.trace, params, fg_w * p.d_fg,
                    cg_w * p.d_cg if p.d_cg is not None else None,
                )
                for name, g in head_grads.items():
                    grads[name] += g
                for name, g in p.crf_grads.items():
                    weight = fg_w if name.startswith("fg_") else cg_w
                    grads[name] += weight * g
            opt.step(grads)
            fg_sum += batch_fg * len(batch)
            cg_sum += batch_cg * len(batch)
            combined_sum += batch_loss * len(batch)

        preds = Dataset(tuple(
            sent.with_tags([
                schema.fg_bio_labels[i]
                for i in _decode_sentence(params, table[sent.id], decode_mask)
            ])
            for sent in dataset
        ))
        row = {"epoch": epoch}
        if aux_on:
            row["W"] = w
        row["scale"] = scale_value
        if aux_on:
            row["cg_loss"] = cg_sum / n
        row["fg_loss"] = fg_sum / n
        row["combined_loss"] = combined_sum / n
        row["train_micro_f1"] = _micro_f1(dataset, preds)
        rows.append(row)

    ckpt = Checkpoint(
        config=config,
        params=params,
        epoch=config.epochs - 1,
        schema_fingerprint=schema.fingerprint(),
        scale=float(scale_value),
        emb_dim=header.dim,
    )
    return ckpt, rows


def predict(ckpt: Checkpoint, dataset: Dataset, embeddings_path, schema: LabelSchema) -> Dataset:
    """Tag every sentence with a full fine-grained BIO sequence."""
    if ckpt.schema_fingerprint != schema.fingerprint():
        raise SchemaError("schema fingerprint does not match the checkpoint")
    report = validate_alignment(dataset, embeddings_path)
    if not report.ok:
        raise AlignmentError(report.describe())
    _, table = load_embeddings(embeddings_path)
    decode_mask = bio_mask(schema, "fine") if (
        ckpt.config.constrained_decode and ckpt.config.head.fg_loss_kind == "crf"
    ) else None
    return Dataset(tuple(
        sent.with_tags([
            schema.fg_bio_labels[i]
            for i in _decode_sentence(ckpt.params, table[sent.id], decode_mask)
        ])
        for sent in dataset
    ))


def log_rows_to_csv(rows: list[dict]) -> str:
    """Render per-epoch rows as CSV; columns follow the first row's keys."""
    if not rows:
        return ""
    cols = list(rows[0].keys())
    lines = [",".join(cols)]
    for row in rows:
        lines.append(",".join(repr(row[c]) if isinstance(row[c], float) else str(row[c])
                              for c in cols))
    return "\n".join(lines) + "\n"
