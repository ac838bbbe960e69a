"""Entity-level scoring: per-type P/R/F1, micro/macro, mention detection.

A typed match requires exact (start, end, type) equality; mention detection
(MD) ignores the type and matches on (start, end) alone.  Ill-formed BIO
sequences are repaired before span extraction and the repair count is kept
in the report, so raw model output is always scorable.
"""

from __future__ import annotations

from dataclasses import dataclass

from .corpus import Dataset
from .errors import SeqtagError
from .schema import LabelSchema, bio_decode, count_bio_repairs


@dataclass(frozen=True)
class TypeScore:
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0


@dataclass(frozen=True)
class EvalReport:
    per_type: dict[str, TypeScore]
    micro: TypeScore
    macro_f1: float
    md: TypeScore
    gold_repairs: int
    pred_repairs: int

    @property
    def micro_p(self) -> float:
        return self.micro.precision

    @property
    def micro_r(self) -> float:
        return self.micro.recall

    @property
    def micro_f1(self) -> float:
        return self.micro.f1

    @property
    def md_f1(self) -> float:
        return self.md.f1


def score(
    gold: Dataset,
    pred: Dataset,
    macro_over: str = "observed",
    schema: LabelSchema | None = None,
) -> EvalReport:
    """Score predictions against gold annotation at the entity level.

    ``macro_over='observed'`` averages F1 over types present in gold or
    predictions; ``'schema'`` averages over every fine type in ``schema``.
    """
    if macro_over not in ("observed", "schema"):
        raise ValueError("macro_over must be 'observed' or 'schema'")
    if macro_over == "schema" and schema is None:
        raise ValueError("macro_over='schema' needs a schema")
    gold_map = gold.by_id()
    pred_map = pred.by_id()
    if set(gold_map) != set(pred_map):
        missing = set(gold_map) ^ set(pred_map)
        raise SeqtagError(f"gold/pred sentence ids differ (e.g. {sorted(missing)[:3]})")

    counts: dict[str, list[int]] = {}  # type -> [tp, fp, fn]
    md_tp = md_fp = md_fn = 0
    gold_repairs = pred_repairs = 0

    for sid, gsent in gold_map.items():
        psent = pred_map[sid]
        if len(psent) != len(gsent):
            raise SeqtagError(
                f"sentence {sid}: gold has {len(gsent)} tokens, pred has {len(psent)}"
            )
        if gsent.fg_tags is None or psent.fg_tags is None:
            raise SeqtagError(f"sentence {sid}: missing tags")
        gold_repairs += count_bio_repairs(list(gsent.fg_tags))
        pred_repairs += count_bio_repairs(list(psent.fg_tags))
        g_spans = set(
            (s.start, s.end, s.etype) for s in bio_decode(list(gsent.fg_tags))
        )
        p_spans = set(
            (s.start, s.end, s.etype) for s in bio_decode(list(psent.fg_tags))
        )
        for span in p_spans:
            slot = counts.setdefault(span[2], [0, 0, 0])
            if span in g_spans:
                slot[0] += 1
            else:
                slot[1] += 1
        for span in g_spans:
            if span not in p_spans:
                counts.setdefault(span[2], [0, 0, 0])[2] += 1
        g_md = {(s[0], s[1]) for s in g_spans}
        p_md = {(s[0], s[1]) for s in p_spans}
        md_tp += len(g_md & p_md)
        md_fp += len(p_md - g_md)
        md_fn += len(g_md - p_md)

    per_type = {t: TypeScore(*c) for t, c in sorted(counts.items())}
    micro = TypeScore(
        sum(c.tp for c in per_type.values()),
        sum(c.fp for c in per_type.values()),
        sum(c.fn for c in per_type.values()),
    )
    if macro_over == "schema":
        macro_types = list(schema.fine_types)
    else:
        macro_types = list(per_type)
    if macro_types:
        macro_f1 = sum(
            per_type.get(t, TypeScore(0, 0, 0)).f1 for t in macro_types
        ) / len(macro_types)
    else:
        macro_f1 = 0.0
    return EvalReport(
        per_type=per_type,
        micro=micro,
        macro_f1=macro_f1,
        md=TypeScore(md_tp, md_fp, md_fn),
        gold_repairs=gold_repairs,
        pred_repairs=pred_repairs,
    )


def _sorted_types(report: EvalReport) -> list[str]:
    return sorted(report.per_type, key=lambda t: (-report.per_type[t].f1, t))


def per_tag_report(report: EvalReport) -> str:
    """Human-readable table, types sorted by F1 descending then name."""
    lines = [f"{'type':<24} {'tp':>5} {'fp':>5} {'fn':>5} {'P':>7} {'R':>7} {'F1':>7}"]
    for t in _sorted_types(report):
        s = report.per_type[t]
        lines.append(
            f"{t:<24} {s.tp:>5} {s.fp:>5} {s.fn:>5} "
            f"{s.precision:>7.4f} {s.recall:>7.4f} {s.f1:>7.4f}"
        )
    lines.append("")
    lines.append(
        f"micro  P={report.micro_p:.4f} R={report.micro_r:.4f} F1={report.micro_f1:.4f}"
    )
    lines.append(f"macro  F1={report.macro_f1:.4f}")
    lines.append(
        f"MD     P={report.md.precision:.4f} R={report.md.recall:.4f} F1={report.md.f1:.4f}"
    )
    lines.append(f"repairs  gold={report.gold_repairs} pred={report.pred_repairs}")
    return "\n".join(lines) + "\n"


def per_tag_csv(report: EvalReport) -> str:
    lines = ["type,tp,fp,fn,precision,recall,f1"]
    for t in _sorted_types(report):
        s = report.per_type[t]
        lines.append(f"{t},{s.tp},{s.fp},{s.fn},{s.precision:.6f},{s.recall:.6f},{s.f1:.6f}")
    return "\n".join(lines) + "\n"
