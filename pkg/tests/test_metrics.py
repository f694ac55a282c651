import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from convnilm import metrics as M
from convnilm.errors import DataError


HAND_TRUTH = [1, 1, 1, 0, 0, 0, 0, 0, 0, 0]
HAND_PRED = [1, 1, 0, 1, 0, 0, 0, 0, 0, 0]


def test_tabulate_identity_and_negation():
    truth = np.array([1, 0, 1, 1, 0, 0, 0, 1, 0, 0])
    assert M.tabulate(truth, truth) == M.ContingencyTable(tp=4, fn=0, fp=0, tn=6)
    t = M.tabulate(1 - truth, truth)
    assert t.tp == 0 and t.tn == 0


def test_tabulate_hand_counted():
    assert M.tabulate(HAND_PRED, HAND_TRUTH) == M.ContingencyTable(tp=2, fn=1, fp=1, tn=6)


def test_tabulate_length_mismatch():
    with pytest.raises(DataError):
        M.tabulate([1, 0], [1, 0, 1])


def test_report_hand_counted():
    r = M.compute_report(M.ContingencyTable(2, 1, 1, 6))
    assert r.precision == pytest.approx(2 / 3) and r.recall == pytest.approx(2 / 3)
    assert r.inverse_precision == pytest.approx(6 / 7) and r.inverse_recall == pytest.approx(6 / 7)
    assert r.informedness == pytest.approx(0.523810, abs=1e-6)
    assert r.markedness == pytest.approx(0.523810, abs=1e-6)
    assert r.f1 == pytest.approx(0.666667, abs=1e-6)
    assert r.mcc == pytest.approx(11 / 21, abs=1e-15)
    assert r.accuracy == pytest.approx(0.8)
    assert r.rn == pytest.approx(0.7)


def test_report_hand_counted_exact():
    t = M.ContingencyTable(2, 1, 1, 6)
    assert M.mcc_exact(t) == Fraction(11, 21)
    b, m = M.informedness_markedness_exact(t)
    assert b == m == Fraction(11, 21)
    assert M.mcc_squared_exact(t) == b * m


def test_perfect_prediction():
    r = M.compute_report(M.ContingencyTable(30, 0, 0, 70))
    for name in ("accuracy", "f1", "informedness", "markedness", "mcc"):
        assert getattr(r, name) == 1.0


def test_undefined_flags():
    r = M.compute_report(M.ContingencyTable(0, 5, 0, 95))  # nothing predicted positive
    assert r.precision is None and not r.defined("precision")
    assert r.mcc is None and r.markedness is None
    assert r.recall == 0.0 and r.f1 == 0.0
    with pytest.raises(DataError):
        M.compute_report(M.ContingencyTable(0, 0, 0, 0))


def test_worse_than_chance_has_negative_mcc():
    r = M.compute_report(M.ContingencyTable(1, 9, 9, 1))
    assert r.mcc < 0
    assert r.mcc**2 == pytest.approx(r.bm_product, abs=1e-12)


def test_washing_machine_row_is_consistent():
    # reported B=0.99, M=0.96, MCC 0.978 (two-decimal rounding of B and M)
    assert abs(math.sqrt(0.99 * 0.96) - 0.9749) < 1e-4
    assert abs(math.sqrt(0.99 * 0.96) - 0.978) <= 0.02


tables = st.builds(
    M.ContingencyTable,
    st.integers(0, 10**6),
    st.integers(0, 10**6),
    st.integers(0, 10**6),
    st.integers(0, 10**6),
).filter(lambda t: t.n > 0)


@given(tables)
def test_mcc_squared_is_b_times_m(t):
    r = M.compute_report(t)
    if r.mcc is not None:
        assert r.mcc**2 == pytest.approx(r.informedness * r.markedness, abs=1e-12)


@given(tables)
def test_label_swap_symmetry(t):
    r, s = M.compute_report(t), M.compute_report(t.swapped())
    assert r.precision == s.inverse_precision and r.inverse_precision == s.precision
    assert r.recall == s.inverse_recall and r.inverse_recall == s.recall
    assert r.accuracy == s.accuracy
    for name in ("informedness", "markedness", "mcc"):
        a, b = getattr(r, name), getattr(s, name)
        assert (a is None) == (b is None)
        if a is not None:
            assert a == pytest.approx(b, abs=1e-12)


def test_label_swap_changes_f1():
    t = M.ContingencyTable(2, 1, 1, 6)
    assert M.compute_report(t).f1 != pytest.approx(M.compute_report(t.swapped()).f1)


@given(tables, st.integers(1, 50))
def test_scale_invariance(t, k):
    r = M.compute_report(t)
    s = M.compute_report(M.ContingencyTable(k * t.tp, k * t.fn, k * t.fp, k * t.tn))
    for name, a in r.as_dict().items():
        b = getattr(s, name)
        assert (a is None) == (b is None)
        if a is not None:
            assert b == pytest.approx(a, rel=1e-9, abs=1e-12)


@given(tables)
def test_f1_is_harmonic_mean(t):
    r = M.compute_report(t)
    if r.precision and r.recall:
        hm = 2 * r.precision * r.recall / (r.precision + r.recall)
        assert r.f1 == pytest.approx(hm, rel=1e-12)


@given(st.integers(1, 10**5), st.integers(1, 10**5), st.booleans())
def test_constant_predictor_has_zero_informedness(pos, neg, always_on):
    truth = M.ContingencyTable(pos, 0, neg, 0) if always_on else M.ContingencyTable(0, pos, 0, neg)
    assert M.compute_report(truth).informedness == 0


@given(tables)
def test_metric_ranges(t):
    r = M.compute_report(t)
    for name in ("accuracy", "precision", "recall", "inverse_precision", "inverse_recall", "f1", "rn"):
        v = getattr(r, name)
        assert v is None or 0 <= v <= 1
    for name in ("informedness", "markedness", "mcc"):
        v = getattr(r, name)
        assert v is None or -1 - 1e-12 <= v <= 1 + 1e-12


def test_tables_merge_by_addition():
    rng = np.random.default_rng(1)
    truth = rng.integers(0, 2, 1000)
    pred = rng.integers(0, 2, 1000)
    whole = M.tabulate(pred, truth)
    parts = [M.tabulate(pred[i : i + 100], truth[i : i + 100]) for i in range(0, 1000, 100)]
    total = parts[0]
    for p in parts[1:]:
        total = total + p
    assert total == whole


def test_trivial_audit():
    a = M.trivial_classifier_audit(0.99)
    neg = a["always_negative"]
    assert neg.accuracy == pytest.approx(0.99, abs=1e-12)
    assert neg.informedness == 0 and neg.mcc is None
    pos = M.trivial_classifier_audit(0.01)["always_positive"]
    assert pos.f1 == pytest.approx(2 * 0.99 / (2 * 0.99 + 0.01), abs=1e-12)
    assert pos.informedness == 0
    for r in M.trivial_classifier_audit(0.5).values():
        assert r.accuracy == 0.5 and r.informedness == 0


def test_report_formats():
    t = M.ContingencyTable(0, 5, 0, 95)
    r = M.compute_report(t)
    tsv = M.format_tsv(r, t, "FR").splitlines()
    assert tsv[0].split("\t")[:8] == ["load", "rn", "TPA", "TPR", "B", "M", "f1", "MCC"]
    row = dict(zip(tsv[0].split("\t"), tsv[1].split("\t")))
    assert row["TPA"] == "NA" and row["TN"] == "95"
    doc = json.loads(M.format_json(r, t, "FR"))
    assert doc["metrics"]["MCC"] is None and doc["defined"]["MCC"] is False
    assert doc["counts"]["N"] == 100
