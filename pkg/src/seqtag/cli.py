"""Command-line surface: eda, train, predict, eval, ablate, classic-*.

Every run writes a ``manifest.json`` into the output directory recording the
config snapshot, seed, input file fingerprints, tool version, wall clock and
output paths, so a run can be re-executed bit-identically.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

from . import __version__
from ._kernels import BACKEND
from .classic import load_classic, predict_classic, save_classic, train_classic
from .corpus import Dataset, corpus_stats, distinct_labels, parse_conll, write_conll
from .errors import (
    AlignmentError,
    ConfigError,
    FormatError,
    NumericError,
    ParseError,
    SchemaError,
    SeqtagError,
)
from .evaluation import per_tag_csv, per_tag_report, score
from .schema import LabelSchema
from .training import (
    TrainConfig,
    load_checkpoint,
    log_rows_to_csv,
    predict,
    save_checkpoint,
    train,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _load_schema(path: str | None) -> LabelSchema:
    return LabelSchema.from_file(path) if path else LabelSchema.default()


def _write_manifest(out_dir: Path, command: str, args: dict, inputs: list, outputs: list,
                    started: float, seed=None) -> None:
    manifest = {
        "tool": "seqtag",
        "version": __version__,
        "backend": BACKEND,
        "command": command,
        "args": {k: v for k, v in args.items() if k != "func"},
        "seed": seed,
        "inputs": {str(p): _sha256(p) for p in inputs if p},
        "outputs": [str(p) for p in outputs],
        "wall_clock_s": round(time.time() - started, 3),
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# eda
# ---------------------------------------------------------------------------

def cmd_eda(args) -> int:
    started = time.time()
    out = _out_dir(args)
    schema = _load_schema(args.schema) if args.schema else None
    sentences = []
    for path in args.corpus:
        sentences.extend(parse_conll(path, schema=schema).sentences)
    dataset = Dataset(tuple(sentences))
    stats = corpus_stats(dataset)
    try:
        labels = distinct_labels(dataset)
    except SchemaError:
        labels = set()
    lines = [f"sentences: {stats.num_sentences}"]
    lines.append(f"distinct BIO labels: {len(labels)}")
    lines.append("")
    lines.append("length histogram (bucket width 10):")
    for lo, count in stats.length_histogram.items():
        lines.append(f"  [{lo},{lo + 10}): {count}")
    lines.append("")
    lines.append("entity mentions by type:")
    for etype, count in stats.tag_frequency.items():
        lines.append(f"  {etype}: {count}")
    text = "\n".join(lines) + "\n"
    print(text, end="")
    (out / "stats.txt").write_text(text, encoding="utf-8")
    hist_csv = "bucket_low,bucket_high,count\n" + "".join(
        f"{lo},{lo + 10},{c}\n" for lo, c in stats.length_histogram.items()
    )
    (out / "length_histogram.csv").write_text(hist_csv, encoding="utf-8")
    tags_csv = "type,mentions\n" + "".join(
        f"{t},{c}\n" for t, c in stats.tag_frequency.items()
    )
    (out / "tag_frequency.csv").write_text(tags_csv, encoding="utf-8")
    _write_manifest(
        out, "eda", vars(args), list(args.corpus) + ([args.schema] if args.schema else []),
        [out / "stats.txt", out / "length_histogram.csv", out / "tag_frequency.csv"],
        started,
    )
    return 0


# ---------------------------------------------------------------------------
# train / predict / eval
# ---------------------------------------------------------------------------

def _load_train_config(path, seed_override=None) -> TrainConfig:
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    if seed_override is not None:
        doc["seed"] = seed_override
    return TrainConfig.from_dict(doc)


def cmd_train(args) -> int:
    started = time.time()
    out = _out_dir(args)
    schema = _load_schema(args.schema)
    config = _load_train_config(args.config, args.seed)
    dataset = parse_conll(args.corpus, schema=schema)
    ckpt, rows = train(dataset, args.embeddings, schema, config)
    ckpt_path = out / "checkpoint.ckpt"
    save_checkpoint(ckpt, ckpt_path)
    log_path = out / "train_log.csv"
    log_path.write_text(log_rows_to_csv(rows), encoding="utf-8")
    last = rows[-1]
    print(
        f"trained {config.epochs} epochs; final combined loss "
        f"{last['combined_loss']:.6f}, train micro F1 {last['train_micro_f1']:.4f}"
    )
    _write_manifest(
        out, "train", vars(args),
        [args.corpus, args.embeddings, args.config] + ([args.schema] if args.schema else []),
        [ckpt_path, log_path], started, seed=config.seed,
    )
    return 0


def cmd_predict(args) -> int:
    started = time.time()
    out = _out_dir(args)
    schema = _load_schema(args.schema)
    ckpt = load_checkpoint(args.checkpoint, schema)
    dataset = parse_conll(args.corpus)
    tagged = predict(ckpt, dataset, args.embeddings, schema)
    pred_path = out / "predictions.conll"
    write_conll(tagged, pred_path)
    print(f"wrote predictions for {len(tagged)} sentences to {pred_path}")
    _write_manifest(
        out, "predict", vars(args),
        [args.checkpoint, args.corpus, args.embeddings] + ([args.schema] if args.schema else []),
        [pred_path], started, seed=ckpt.config.seed,
    )
    return 0


def cmd_eval(args) -> int:
    started = time.time()
    out = _out_dir(args)
    schema = _load_schema(args.schema) if (args.schema or args.macro_over == "schema") else None
    gold = parse_conll(args.gold)
    pred = parse_conll(args.pred)
    report = score(gold, pred, macro_over=args.macro_over, schema=schema)
    text = per_tag_report(report)
    print(text, end="")
    (out / "report.txt").write_text(text, encoding="utf-8")
    (out / "report.csv").write_text(per_tag_csv(report), encoding="utf-8")
    _write_manifest(
        out, "eval", vars(args),
        [args.gold, args.pred] + ([args.schema] if args.schema else []),
        [out / "report.txt", out / "report.csv"], started,
    )
    return 0


# ---------------------------------------------------------------------------
# ablate
# ---------------------------------------------------------------------------

def _loss_label(head: dict) -> str:
    base = "masked ce" if head.get("head_kind") == "linear_ce" else "crf"
    aux = head.get("aux_kind", "none")
    if aux == "none":
        return base
    aux_base = "ce" if aux == "linear_ce" else "crf"
    return f"{base} + decaying {aux_base} aux"


def cmd_ablate(args) -> int:
    started = time.time()
    out = _out_dir(args)
    schema = _load_schema(args.schema)
    with open(args.grid, encoding="utf-8") as f:
        grid = json.load(f)
    base = grid.get("base", {})
    rows_spec = grid.get("rows", [])
    if not rows_spec:
        raise ConfigError("ablation grid has no rows")
    train_ds = parse_conll(args.corpus, schema=schema)
    dev_corpus = args.dev_corpus or args.corpus
    dev_emb = args.dev_embeddings or args.embeddings
    dev_ds = parse_conll(dev_corpus, schema=schema)

    csv_lines = ["config,head,blend,aux,loss,dev_micro_f1,dev_macro_f1,status"]
    failures = 0
    for row in rows_spec:
        row_id = str(row.get("id", len(csv_lines)))
        doc = json.loads(json.dumps(base))  # deep copy
        head = dict(doc.get("head", {}))
        head.update(row.get("head", {}))
        doc["head"] = head
        for key, value in row.items():
            if key not in ("id", "head"):
                doc[key] = value
        try:
            config = TrainConfig.from_dict(doc)
            row_dir = out / f"row_{row_id}"
            row_dir.mkdir(exist_ok=True)
            ckpt, log_rows = train(train_ds, args.embeddings, schema, config)
            save_checkpoint(ckpt, row_dir / "checkpoint.ckpt")
            (row_dir / "train_log.csv").write_text(log_rows_to_csv(log_rows), encoding="utf-8")
            tagged = predict(ckpt, dev_ds, dev_emb, schema)
            write_conll(tagged, row_dir / "predictions.conll")
            report = score(dev_ds, tagged, macro_over=args.macro_over,
                           schema=schema if args.macro_over == "schema" else None)
            csv_lines.append(
                f"{row_id},{head.get('head_kind')},{head.get('blend', 'none')},"
                f"{head.get('aux_kind', 'none')},{_loss_label(head)},"
                f"{report.micro_f1:.6f},{report.macro_f1:.6f},OK"
            )
        except Exception as e:  # keep the grid going; failures land in the table
            failures += 1
            print(f"warning: row {row_id} failed: {e}", file=sys.stderr)
            csv_lines.append(
                f"{row_id},{head.get('head_kind')},{head.get('blend', 'none')},"
                f"{head.get('aux_kind', 'none')},{_loss_label(head)},,,FAILED"
            )
    table = "\n".join(csv_lines) + "\n"
    (out / "ablation.csv").write_text(table, encoding="utf-8")
    print(table, end="")
    if failures:
        print(f"warning: {failures} row(s) failed", file=sys.stderr)
    _write_manifest(
        out, "ablate", vars(args),
        [args.grid, args.corpus, args.embeddings, dev_corpus, dev_emb]
        + ([args.schema] if args.schema else []),
        [out / "ablation.csv"], started,
    )
    return 0


# ---------------------------------------------------------------------------
# classic baseline
# ---------------------------------------------------------------------------

def cmd_classic_train(args) -> int:
    started = time.time()
    out = _out_dir(args)
    schema = _load_schema(args.schema)
    dataset = parse_conll(args.corpus, schema=schema, pos_column=args.pos_column)
    model, trace = train_classic(
        dataset, schema, l2=args.l2, epochs=args.epochs, lr=args.lr, seed=args.seed
    )
    model_path = out / "classic_model.json"
    save_classic(model, model_path)
    trace_csv = "epoch,objective\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(trace))
    (out / "objective_trace.csv").write_text(trace_csv, encoding="utf-8")
    print(f"final objective {trace[-1]:.6f} after {args.epochs} epochs")
    _write_manifest(
        out, "classic-train", vars(args),
        [args.corpus] + ([args.schema] if args.schema else []),
        [model_path, out / "objective_trace.csv"], started, seed=args.seed,
    )
    return 0


def cmd_classic_predict(args) -> int:
    started = time.time()
    out = _out_dir(args)
    model = load_classic(args.model)
    dataset = parse_conll(args.corpus, pos_column=args.pos_column)
    tagged = predict_classic(model, dataset)
    pred_path = out / "predictions.conll"
    write_conll(tagged, pred_path)
    print(f"wrote predictions for {len(tagged)} sentences to {pred_path}")
    _write_manifest(
        out, "classic-predict", vars(args), [args.model, args.corpus],
        [pred_path], started,
    )
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(
        prog="seqtag",
        description="Sequence-labeling toolkit: CRF/BiLSTM heads over precomputed "
                    "token embeddings, plus a feature-engineered CRF baseline.",
    )
    parser.add_argument("--version", action="version", version=f"seqtag {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eda", help="corpus statistics and label inventory")
    p.add_argument("--corpus", action="append", required=True,
                   help="CoNLL-style corpus file (repeatable)")
    p.add_argument("--schema", help="label schema JSON (default: built-in MultiCoNER II)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_eda)

    p = sub.add_parser("train", help="train a head on precomputed embeddings")
    p.add_argument("--corpus", required=True, help="training corpus with gold tags")
    p.add_argument("--embeddings", required=True, help="embedding interchange file")
    p.add_argument("--schema", help="label schema JSON (default: built-in)")
    p.add_argument("--config", required=True, help="training config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the config's seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="tag a corpus with a trained checkpoint")
    p.add_argument("--checkpoint", required=True, help="checkpoint file from train")
    p.add_argument("--corpus", required=True, help="corpus to tag")
    p.add_argument("--embeddings", required=True, help="embedding interchange file")
    p.add_argument("--schema", help="label schema JSON (default: built-in)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score predictions against gold annotation")
    p.add_argument("--gold", required=True, help="gold corpus file")
    p.add_argument("--pred", required=True, help="predicted corpus file")
    p.add_argument("--schema", help="label schema JSON (needed for --macro-over=schema)")
    p.add_argument("--macro-over", choices=("observed", "schema"), default="observed",
                   help="macro-F1 averages over observed types or the whole schema")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run a grid of head/aux/blend configurations")
    p.add_argument("--grid", required=True, help="grid JSON: {base: config, rows: [...]}")
    p.add_argument("--corpus", required=True, help="training corpus")
    p.add_argument("--embeddings", required=True, help="training embeddings")
    p.add_argument("--dev-corpus", help="held-out corpus (default: training corpus)")
    p.add_argument("--dev-embeddings", help="held-out embeddings (default: training)")
    p.add_argument("--schema", help="label schema JSON (default: built-in)")
    p.add_argument("--macro-over", choices=("observed", "schema"), default="observed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("classic-train", help="train the feature-engineered CRF baseline")
    p.add_argument("--corpus", required=True, help="training corpus with gold tags")
    p.add_argument("--schema", help="label schema JSON (default: built-in)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--l2", type=float, default=0.1, help="L2 regularization strength")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.1, help="gradient-descent step size")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pos-column", type=int, help="0-based column carrying POS tags")
    p.set_defaults(func=cmd_classic_train)

    p = sub.add_parser("classic-predict", help="tag a corpus with a classic model")
    p.add_argument("--model", required=True, help="classic model JSON from classic-train")
    p.add_argument("--corpus", required=True, help="corpus to tag")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--pos-column", type=int, help="0-based column carrying POS tags")
    p.set_defaults(func=cmd_classic_predict)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except (ParseError, SchemaError, FormatError, AlignmentError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 3
    except SeqtagError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
