import pytest

from seqtag.corpus import Dataset
from seqtag.errors import SeqtagError
from seqtag.evaluation import per_tag_csv, per_tag_report, score
from tests.conftest import make_sentence


def _pair(gold_tags, pred_tags):
    n = len(gold_tags)
    words = [f"w{i}" for i in range(n)]
    gold = Dataset((make_sentence("s", words, gold_tags),))
    pred = Dataset((make_sentence("s", words, pred_tags),))
    return gold, pred


def test_perfect_prediction():
    gold, pred = _pair(["B-PER", "I-PER", "O"], ["B-PER", "I-PER", "O"])
    r = score(gold, pred)
    assert r.micro_f1 == 1.0
    assert r.macro_f1 == 1.0
    assert r.md_f1 == 1.0
    assert r.per_type["PER"].tp == 1


def test_hand_counted_half():
    # gold {PER@(0,1), LOC@(3,3)}, pred {PER@(0,1), LOC@(4,4)}
    gold, pred = _pair(
        ["B-PER", "I-PER", "O", "B-LOC", "O"],
        ["B-PER", "I-PER", "O", "O", "B-LOC"],
    )
    r = score(gold, pred)
    assert (r.micro.tp, r.micro.fp, r.micro.fn) == (1, 1, 1)
    assert r.micro_p == 0.5
    assert r.micro_r == 0.5
    assert r.micro_f1 == 0.5
    assert r.md_f1 == 0.5


def test_span_right_type_wrong():
    gold, pred = _pair(["B-PER", "I-PER"], ["B-LOC", "I-LOC"])
    r = score(gold, pred)
    assert r.micro_f1 == 0.0
    assert r.md_f1 == 1.0


def test_macro_excludes_absent_types():
    # two gold types; one never predicted, one spurious type predicted
    gold, pred = _pair(
        ["B-PER", "O", "B-LOC", "O"],
        ["B-PER", "O", "O", "B-GRP"],
    )
    r = score(gold, pred)
    # PER F1=1, LOC F1=0, GRP F1=0 -> macro over observed = 1/3
    assert r.macro_f1 == pytest.approx(1 / 3)


def test_macro_over_schema(small_schema):
    gold, pred = _pair(["B-Artist", "O"], ["B-Artist", "O"])
    r = score(gold, pred, macro_over="schema", schema=small_schema)
    # Artist 1.0, Politician and Facility contribute 0
    assert r.macro_f1 == pytest.approx(1 / 3)
    r2 = score(gold, pred)
    assert r2.macro_f1 == 1.0


def test_single_type_micro_equals_macro():
    gold, pred = _pair(
        ["B-PER", "O", "B-PER", "O"],
        ["B-PER", "O", "O", "B-PER"],
    )
    r = score(gold, pred)
    assert r.micro_f1 == pytest.approx(r.macro_f1)
    assert r.micro_f1 == pytest.approx(r.per_type["PER"].f1)


def test_md_dominates_typed():
    import numpy as np

    rng = np.random.default_rng(0)
    labels = ["O", "B-PER", "I-PER", "B-LOC", "I-LOC"]
    for _ in range(100):
        n = int(rng.integers(1, 10))
        g = [labels[int(rng.integers(0, 5))] for _ in range(n)]
        p = [labels[int(rng.integers(0, 5))] for _ in range(n)]
        r = score(*_pair(g, p))
        assert r.md.tp >= r.micro.tp
        assert 0.0 <= r.md_f1 <= 1.0


def test_permutation_invariance():
    s1 = make_sentence("a", ["x", "y"], ["B-PER", "O"])
    s2 = make_sentence("b", ["z"], ["B-LOC"])
    p1 = make_sentence("a", ["x", "y"], ["B-PER", "B-PER"])
    p2 = make_sentence("b", ["z"], ["O"])
    r_fwd = score(Dataset((s1, s2)), Dataset((p1, p2)))
    r_rev = score(Dataset((s2, s1)), Dataset((p2, p1)))
    assert r_fwd.micro_f1 == r_rev.micro_f1
    assert r_fwd.macro_f1 == r_rev.macro_f1


def test_repairs_counted():
    gold, pred = _pair(["B-PER", "I-PER"], ["O", "I-PER"])
    r = score(gold, pred)
    assert r.pred_repairs == 1
    assert r.gold_repairs == 0
    assert r.micro_f1 == 0.0  # repaired pred span is (1,1), gold is (0,1)


def test_id_mismatch_raises():
    gold = Dataset((make_sentence("a", ["x"], ["O"]),))
    pred = Dataset((make_sentence("b", ["x"], ["O"]),))
    with pytest.raises(SeqtagError):
        score(gold, pred)


def test_length_mismatch_raises():
    gold = Dataset((make_sentence("a", ["x", "y"], ["O", "O"]),))
    pred = Dataset((make_sentence("a", ["x"], ["O"]),))
    with pytest.raises(SeqtagError):
        score(gold, pred)


def test_report_sorted_by_f1():
    gold, pred = _pair(
        ["B-PER", "O", "B-LOC", "O", "B-GRP"],
        ["B-PER", "O", "B-LOC", "B-LOC", "O"],
    )
    r = score(gold, pred)
    text = per_tag_report(r)
    lines = [l.split()[0] for l in text.splitlines()[1:4]]
    assert lines == ["PER", "LOC", "GRP"]  # F1: 1.0, 2/3, 0


GOLDEN = """\
type,tp,fp,fn,precision,recall,f1
PER,1,0,0,1.000000,1.000000,1.000000
LOC,1,1,0,0.500000,1.000000,0.666667
GRP,0,0,1,0.000000,0.000000,0.000000
"""


def test_csv_golden():
    gold, pred = _pair(
        ["B-PER", "O", "B-LOC", "O", "B-GRP"],
        ["B-PER", "O", "B-LOC", "B-LOC", "O"],
    )
    assert per_tag_csv(score(gold, pred)) == GOLDEN
