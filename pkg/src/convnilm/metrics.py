"""Contingency-table metrics for binary on/off predictions.

Any metric whose denominator is zero is reported as ``None`` (undefined)
rather than substituted with 0.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields
from fractions import Fraction

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class ContingencyTable:
    tp: int
    fn: int
    fp: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fn, self.fp, self.tn) < 0:
            raise DataError("contingency counts must be non-negative")

    def __add__(self, other: "ContingencyTable") -> "ContingencyTable":
        return ContingencyTable(self.tp + other.tp, self.fn + other.fn, self.fp + other.fp, self.tn + other.tn)

    @property
    def n(self) -> int:
        return self.tp + self.fn + self.fp + self.tn

    @property
    def rp(self) -> int:
        return self.tp + self.fn

    @property
    def rn(self) -> int:
        return self.fp + self.tn

    @property
    def pp(self) -> int:
        return self.tp + self.fp

    @property
    def pn(self) -> int:
        return self.fn + self.tn

    def swapped(self) -> "ContingencyTable":
        """Same predictions with the positive and negative class exchanged."""
        return ContingencyTable(tp=self.tn, fn=self.fp, fp=self.fn, tn=self.tp)


def tabulate(predicted, truth) -> ContingencyTable:
    """Per-sample counts; the on-state (1) is the positive class."""
    p = np.asarray(getattr(predicted, "states", predicted)).astype(bool).ravel()
    t = np.asarray(getattr(truth, "states", truth)).astype(bool).ravel()
    if p.shape != t.shape:
        raise DataError(f"prediction ({p.size}) and truth ({t.size}) lengths differ")
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    return ContingencyTable(tp, fn, fp, p.size - tp - fp - fn)


def _ratio(num, den):
    return None if den == 0 else num / den


@dataclass(frozen=True)
class MetricReport:
    rn: float | None
    accuracy: float | None
    precision: float | None  # TPA
    recall: float | None  # TPR
    inverse_precision: float | None  # TNA
    inverse_recall: float | None  # TNR
    f1: float | None
    informedness: float | None  # B
    markedness: float | None  # M
    mcc: float | None
    bm_product: float | None

    def defined(self, name: str) -> bool:
        return getattr(self, name) is not None

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def compute_report(t: ContingencyTable) -> MetricReport:
    """All metrics of the table.

    MCC uses ``(TP*TN - FP*FN) / sqrt(PP*RP*RN*PN)``: its square equals
    informedness times markedness, and its sign follows the correlation.
    """
    if t.n < 1:
        raise DataError("metrics need at least one sample")
    tpa = _ratio(t.tp, t.pp)
    tpr = _ratio(t.tp, t.rp)
    tna = _ratio(t.tn, t.pn)
    tnr = _ratio(t.tn, t.rn)
    b = None if tpr is None or tnr is None else tpr + tnr - 1
    m = None if tpa is None or tna is None else tpa + tna - 1
    den = t.pp * t.rp * t.rn * t.pn
    mcc = None if den == 0 else (t.tp * t.tn - t.fp * t.fn) / math.sqrt(den)
    return MetricReport(
        rn=t.rn / t.n,
        accuracy=(t.tp + t.tn) / t.n,
        precision=tpa,
        recall=tpr,
        inverse_precision=tna,
        inverse_recall=tnr,
        f1=_ratio(2 * t.tp, 2 * t.tp + t.fn + t.fp),
        informedness=b,
        markedness=m,
        mcc=mcc,
        bm_product=None if b is None or m is None else b * m,
    )


def mcc_squared_exact(t: ContingencyTable) -> Fraction | None:
    """Exact rational ``MCC**2`` from integer counts."""
    den = t.pp * t.rp * t.rn * t.pn
    return None if den == 0 else Fraction((t.tp * t.tn - t.fp * t.fn) ** 2, den)


def mcc_exact(t: ContingencyTable) -> Fraction | None:
    """Exact MCC when the denominator is a perfect square, else None."""
    den = t.pp * t.rp * t.rn * t.pn
    if den == 0:
        return None
    r = math.isqrt(den)
    if r * r != den:
        return None
    return Fraction(t.tp * t.tn - t.fp * t.fn, r)


def informedness_markedness_exact(t: ContingencyTable) -> tuple[Fraction, Fraction] | None:
    if 0 in (t.pp, t.rp, t.rn, t.pn):
        return None
    b = Fraction(t.tp, t.rp) + Fraction(t.tn, t.rn) - 1
    m = Fraction(t.tp, t.pp) + Fraction(t.tn, t.pn) - 1
    return b, m


def trivial_classifier_audit(rn: float, n: int = 10_000) -> dict[str, MetricReport]:
    """Reports for the always-off and always-on predictors at negative-class share ``rn``."""
    if not 0 < rn < 1:
        raise DataError("rn must lie strictly between 0 and 1")
    negatives = int(round(rn * n))
    positives = n - negatives
    return {
        "always_negative": compute_report(ContingencyTable(0, positives, 0, negatives)),
        "always_positive": compute_report(ContingencyTable(positives, 0, negatives, 0)),
    }


# column order of the benchmark table, then the remaining measures
REPORT_COLUMNS = (
    ("rn", "rn"),
    ("TPA", "precision"),
    ("TPR", "recall"),
    ("B", "informedness"),
    ("M", "markedness"),
    ("f1", "f1"),
    ("MCC", "mcc"),
    ("accuracy", "accuracy"),
    ("TNA", "inverse_precision"),
    ("TNR", "inverse_recall"),
    ("BxM", "bm_product"),
)


def format_tsv(report: MetricReport, table: ContingencyTable, label: str = "") -> str:
    """Header line plus one row; undefined values print as ``NA``."""
    head = ["load"] + [c for c, _ in REPORT_COLUMNS] + ["TP", "FN", "FP", "TN"]
    row = [label or "-"]
    for _, attr in REPORT_COLUMNS:
        v = getattr(report, attr)
        row.append("NA" if v is None else f"{v:.6f}")
    row += [str(table.tp), str(table.fn), str(table.fp), str(table.tn)]
    return "\t".join(head) + "\n" + "\t".join(row) + "\n"


def format_json(report: MetricReport, table: ContingencyTable, label: str = "") -> str:
    doc = {
        "load": label,
        "counts": {"TP": table.tp, "FN": table.fn, "FP": table.fp, "TN": table.tn, "N": table.n},
        "metrics": {col: getattr(report, attr) for col, attr in REPORT_COLUMNS},
        "defined": {col: report.defined(attr) for col, attr in REPORT_COLUMNS},
    }
    return json.dumps(doc, indent=2) + "\n"
