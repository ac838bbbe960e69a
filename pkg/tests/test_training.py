import numpy as np
import pytest

from seqtag.corpus import Dataset
from seqtag.errors import AlignmentError, ConfigError, NumericError, SchemaError
from seqtag.heads import HeadConfig
from seqtag.schema import LabelSchema
from seqtag.training import (
    Adam,
    LossWeightSchedule,
    TrainConfig,
    aux_weight,
    combined_loss,
    compute_scale,
    load_checkpoint,
    log_rows_to_csv,
    predict,
    save_checkpoint,
    train,
)
from tests.synthgen import generate, synth_schema, write_pair


# --- schedule -----------------------------------------------------------------

def test_aux_weight_endpoints():
    for E in range(2, 30):
        sched = LossWeightSchedule(E, residual=0.1)
        assert aux_weight(0, sched) == 1.0
        assert aux_weight(E - 1, sched) == 0.1


def test_aux_weight_midpoint():
    sched = LossWeightSchedule(10, residual=0.1)
    assert aux_weight(5, sched) == pytest.approx(1 - 0.9 * 5 / 9)
    assert aux_weight(5, sched) == pytest.approx(0.5)


def test_aux_weight_single_epoch():
    assert aux_weight(0, LossWeightSchedule(1)) == 1.0


def test_aux_weight_monotone_and_bounded():
    sched = LossWeightSchedule(17, residual=0.1)
    values = [aux_weight(e, sched) for e in range(17)]
    assert all(a >= b for a, b in zip(values, values[1:]))
    assert all(0.1 <= v <= 1.0 for v in values)


def test_aux_weight_constant_shape():
    sched = LossWeightSchedule(5, residual=0.0, shape="constant")
    assert [aux_weight(e, sched) for e in range(5)] == [0.0] * 5


def test_aux_weight_range_checked():
    with pytest.raises(ValueError):
        aux_weight(5, LossWeightSchedule(5))


# --- combined loss --------------------------------------------------------------

def test_combined_loss_endpoints_bit_exact():
    cg, fg = 2.345678, 4.567891
    assert combined_loss(cg, fg, 1.0, 0.37) == cg
    assert combined_loss(cg, fg, 0.0, 1.0) == fg


def test_combined_loss_arithmetic():
    assert combined_loss(2.0, 4.0, 0.5, 0.5) == pytest.approx(2.0)


def test_combined_loss_linear_in_each_term():
    w, s = 0.3, 0.8
    for a, b in [(1.0, 3.0), (0.5, 7.0)]:
        l1 = combined_loss(a, 2.0, w, s)
        l2 = combined_loss(b, 2.0, w, s)
        mid = combined_loss((a + b) / 2, 2.0, w, s)
        assert mid == pytest.approx((l1 + l2) / 2)
        l1 = combined_loss(2.0, a, w, s)
        l2 = combined_loss(2.0, b, w, s)
        mid = combined_loss(2.0, (a + b) / 2, w, s)
        assert mid == pytest.approx((l1 + l2) / 2)


# --- scale ----------------------------------------------------------------------

def test_compute_scale_fixed():
    assert compute_scale(0.5, 9.0, 9.0) == 0.5


def test_compute_scale_auto_ratio():
    assert compute_scale("auto", 2.56, 4.29) == pytest.approx(0.5967, abs=1e-4)


def test_compute_scale_clamped():
    assert compute_scale("auto", 1000.0, 1.0) == 100.0
    assert compute_scale("auto", 0.0001, 1.0) == 0.01


def test_compute_scale_zero_fg():
    with pytest.raises(NumericError):
        compute_scale("auto", 1.0, 0.0)


# --- optimizer ------------------------------------------------------------------

def test_adam_effective_lr_recorded():
    params = {
        "fg_proj.weight": np.array([1.0]),
        "bilstm.fwd.w_in": np.array([1.0]),
    }
    opt = Adam(params, base_lr=1e-3, multipliers={"bilstm": 10.0})
    assert opt.effective_lr["bilstm.fwd.w_in"] == pytest.approx(10 * opt.effective_lr["fg_proj.weight"], rel=1e-12)
    assert opt.group_lr["bilstm"] == pytest.approx(1e-2)
    assert opt.group_lr["projection"] == pytest.approx(1e-3)


def test_adam_first_step_ratio_on_quadratic():
    # identical gradients, multiplier 10 -> step ratio 10 within 1e-9
    params = {
        "fg_proj.weight": np.array([1.0]),
        "bilstm.fwd.w_in": np.array([1.0]),
    }
    opt = Adam(params, base_lr=1e-3, multipliers={"bilstm": 10.0})
    grads = {k: v.copy() for k, v in params.items()}  # grad of 0.5 w^2 at w=1
    before = {k: v.copy() for k, v in params.items()}
    opt.step(grads)
    step_proj = float(before["fg_proj.weight"][0] - params["fg_proj.weight"][0])
    step_lstm = float(before["bilstm.fwd.w_in"][0] - params["bilstm.fwd.w_in"][0])
    assert step_lstm / step_proj == pytest.approx(10.0, abs=1e-9)


def test_adam_converges_on_quadratic():
    params = {"fg_proj.weight": np.array([5.0])}
    opt = Adam(params, base_lr=0.1)
    for _ in range(500):
        opt.step({"fg_proj.weight": params["fg_proj.weight"].copy()})
    assert abs(params["fg_proj.weight"][0]) < 1e-3


# --- config ---------------------------------------------------------------------

def test_train_config_round_trip():
    config = TrainConfig(
        head=HeadConfig("bilstm_crf", blend="concat", dropout_p=0.2,
                        bilstm_hidden=8, aux_kind="crf", input_layers_k=3),
        epochs=5, batch_size=4, base_lr=2e-3,
        lr_multipliers={"crf": 10.0}, scale="auto", seed=7,
    )
    assert TrainConfig.from_dict(config.to_dict()) == config


def test_train_config_validation():
    head = HeadConfig("linear_ce")
    with pytest.raises(ConfigError):
        TrainConfig(head=head, epochs=0)
    with pytest.raises(ConfigError):
        TrainConfig(head=head, lr_multipliers={"crf": -1.0})
    with pytest.raises(ConfigError):
        TrainConfig(head=head, seed=-1)
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"epochs": 3})


# --- training -------------------------------------------------------------------

@pytest.fixture(scope="module")
def synth_pair(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    schema = synth_schema()
    ds, header, seqs = generate(schema, 14, seed=5, dim=6, num_layers=2, noise=0.15)
    conll, emb = root / "train.conll", root / "train.seqemb"
    write_pair(ds, header, seqs, conll, emb)
    return schema, ds, emb


def _quick_config(head_kind="linear_crf", aux="none", **kw):
    head = HeadConfig(
        head_kind,
        blend=kw.pop("blend", "none"),
        dropout_p=kw.pop("dropout_p", 0.0),
        bilstm_hidden=kw.pop("bilstm_hidden", 4),
        aux_kind=aux,
        input_layers_k=kw.pop("input_layers_k", 1),
    )
    return TrainConfig(head=head, epochs=kw.pop("epochs", 3),
                       batch_size=kw.pop("batch_size", 4), **kw)


def test_determinism_identical_logs(synth_pair):
    schema, ds, emb = synth_pair
    config = _quick_config(aux="crf", dropout_p=0.3, epochs=3, seed=11)
    ckpt1, rows1 = train(ds, emb, schema, config)
    ckpt2, rows2 = train(ds, emb, schema, config)
    assert log_rows_to_csv(rows1) == log_rows_to_csv(rows2)
    p1 = predict(ckpt1, ds, emb, schema)
    p2 = predict(ckpt2, ds, emb, schema)
    assert [s.fg_tags for s in p1] == [s.fg_tags for s in p2]


def test_aux_none_equals_forced_zero_w(synth_pair):
    schema, ds, emb = synth_pair
    base = dict(dropout_p=0.2, epochs=3, seed=3)
    cfg_none = _quick_config(aux="none", **base)
    cfg_zero = _quick_config(aux="crf", **base)
    cfg_zero = TrainConfig(**{**cfg_zero.to_dict(),
                              "head": cfg_zero.head,
                              "schedule_shape": "constant",
                              "residual": 0.0,
                              "scale": 1.0})
    _, rows_none = train(ds, emb, schema, cfg_none)
    _, rows_zero = train(ds, emb, schema, cfg_zero)
    for a, b in zip(rows_none, rows_zero):
        assert a["fg_loss"] == b["fg_loss"]
        assert a["combined_loss"] == b["combined_loss"]
        assert a["train_micro_f1"] == b["train_micro_f1"]


def test_log_columns_reflect_aux(synth_pair):
    schema, ds, emb = synth_pair
    _, rows_aux = train(ds, emb, schema, _quick_config(aux="linear_ce", epochs=2))
    assert set(rows_aux[0]) == {"epoch", "W", "scale", "cg_loss", "fg_loss",
                                "combined_loss", "train_micro_f1"}
    _, rows_plain = train(ds, emb, schema, _quick_config(aux="none", epochs=2))
    assert "W" not in rows_plain[0]
    assert "cg_loss" not in rows_plain[0]


def test_scale_frozen_from_first_batch(synth_pair):
    schema, ds, emb = synth_pair
    ckpt, rows = train(ds, emb, schema, _quick_config(aux="crf", epochs=3, scale="auto"))
    scales = {row["scale"] for row in rows}
    assert len(scales) == 1
    assert ckpt.scale == rows[0]["scale"]
    assert 0.01 <= ckpt.scale <= 100.0


def test_w_follows_schedule(synth_pair):
    schema, ds, emb = synth_pair
    _, rows = train(ds, emb, schema, _quick_config(aux="crf", epochs=4))
    sched = LossWeightSchedule(4, 0.1)
    assert [r["W"] for r in rows] == [aux_weight(e, sched) for e in range(4)]


def test_overfit_small_linear_crf(synth_pair):
    schema, ds, emb = synth_pair
    config = _quick_config(head_kind="linear_crf", epochs=40, base_lr=5e-2)
    _, rows = train(ds, emb, schema, config)
    assert rows[-1]["train_micro_f1"] >= 0.99


def test_nonfinite_loss_reported(synth_pair):
    schema, ds, emb = synth_pair
    config = _quick_config(aux="linear_ce", epochs=2, scale=1e308)
    with pytest.raises(NumericError) as ei:
        train(ds, emb, schema, config)
    assert "batch" in str(ei.value)


def test_alignment_failure(synth_pair, tmp_path):
    schema, ds, emb = synth_pair
    smaller = Dataset(ds.sentences[:-1])
    with pytest.raises(AlignmentError):
        train(smaller, emb, schema, _quick_config())
    with pytest.raises(AlignmentError):
        ckpt, _ = train(ds, emb, schema, _quick_config(epochs=1))
        predict(ckpt, smaller, emb, schema)


# --- checkpoints ----------------------------------------------------------------

def test_checkpoint_round_trip(synth_pair, tmp_path):
    schema, ds, emb = synth_pair
    config = _quick_config(head_kind="bilstm_crf", aux="crf", blend="avg",
                           epochs=2, bilstm_hidden=3)
    ckpt, _ = train(ds, emb, schema, config)
    path = tmp_path / "model.ckpt"
    save_checkpoint(ckpt, path)
    back = load_checkpoint(path, schema)
    assert back.config == ckpt.config
    assert back.scale == ckpt.scale
    assert back.epoch == ckpt.epoch
    for name, arr in ckpt.params.flat().items():
        np.testing.assert_array_equal(back.params.flat()[name], arr)
    before = predict(ckpt, ds, emb, schema)
    after = predict(back, ds, emb, schema)
    assert [s.fg_tags for s in before] == [s.fg_tags for s in after]


def test_checkpoint_schema_mismatch(synth_pair, tmp_path):
    schema, ds, emb = synth_pair
    ckpt, _ = train(ds, emb, schema, _quick_config(epochs=1))
    path = tmp_path / "model.ckpt"
    save_checkpoint(ckpt, path)
    other = LabelSchema(("Zebra",), ("ANIMAL",), {"Zebra": "ANIMAL"})
    with pytest.raises(SchemaError):
        load_checkpoint(path, other)


# --- predict decode rules ---------------------------------------------------------

def test_predict_linear_ce_is_argmax(synth_pair):
    schema, ds, emb = synth_pair
    from seqtag.embeddings import load_embeddings
    from seqtag.heads import head_forward

    ckpt, _ = train(ds, emb, schema, _quick_config(head_kind="linear_ce", epochs=1))
    preds = predict(ckpt, ds, emb, schema)
    _, table = load_embeddings(emb)
    for sent in preds:
        scores, _, _ = head_forward(table[sent.id], ckpt.params)
        expected = [schema.fg_bio_labels[int(i)] for i in np.argmax(scores, axis=1)]
        assert list(sent.fg_tags) == expected


def test_predict_constrained_decode_wellformed(synth_pair):
    from seqtag.schema import count_bio_repairs

    schema, ds, emb = synth_pair
    config = _quick_config(head_kind="linear_crf", epochs=1)
    config = TrainConfig(**{**config.to_dict(), "head": config.head,
                            "constrained_decode": True})
    ckpt, _ = train(ds, emb, schema, config)
    preds = predict(ckpt, ds, emb, schema)
    for sent in preds:
        assert count_bio_repairs(list(sent.fg_tags)) == 0


def test_csv_rendering():
    rows = [{"epoch": 0, "fg_loss": 1.5, "combined_loss": 1.5, "train_micro_f1": 0.25}]
    text = log_rows_to_csv(rows)
    assert text.splitlines()[0] == "epoch,fg_loss,combined_loss,train_micro_f1"
    assert "1.5" in text
