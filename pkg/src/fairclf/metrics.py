"""Evaluation metrics: confusion counts, F1, MCC, per-group equality
differences (FNED/FPED), and McNemar's paired test.

Zero-denominator conventions, applied consistently everywhere: precision,
recall and F1 fall back to 0; MCC with a zero denominator is 0; a group
whose FNR or FPR is undefined is simply excluded from the corresponding
equality-difference sum.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .constraints import FNR, FPR, exact_rate


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class GroupMetrics:
    """Audit row for one group of interest."""

    name: str
    fnr: Optional[float]
    fpr: Optional[float]
    mcc: float
    pos_count: int
    neg_count: int


@dataclass
class BiasReport:
    """One audited model: overall quality plus per-group equity."""

    f1: float
    mcc: float
    precision: float
    recall: float
    fnr: Optional[float]
    fpr: Optional[float]
    fned: float
    fped: float
    total_bias: float
    groups: list = field(default_factory=list)

    def to_dict(self):
        return {
            "overall": {
                "f1": self.f1,
                "mcc": self.mcc,
                "precision": self.precision,
                "recall": self.recall,
                "fnr": self.fnr,
                "fpr": self.fpr,
            },
            "groups": [
                {
                    "name": g.name,
                    "fnr": g.fnr,
                    "fpr": g.fpr,
                    "mcc": g.mcc,
                    "pos_count": g.pos_count,
                    "neg_count": g.neg_count,
                }
                for g in self.groups
            ],
            "fned": self.fned,
            "fped": self.fped,
            "total_bias": self.total_bias,
        }

    def table_row(self):
        """Column values matching the summary-table CSV layout."""
        return [self.f1, self.mcc, self.precision, self.recall,
                self.fned, self.fped, self.total_bias]


@dataclass
class McNemarResult:
    """Paired comparison of two classifiers on identical examples."""

    both_correct: int
    only_baseline_correct: int
    only_constrained_correct: int
    both_wrong: int
    statistic: float
    p_value: float

    def to_dict(self):
        return {
            "both_correct": self.both_correct,
            "only_baseline_correct": self.only_baseline_correct,
            "only_constrained_correct": self.only_constrained_correct,
            "both_wrong": self.both_wrong,
            "statistic": self.statistic,
            "p_value": self.p_value,
        }


def _aligned(a, b):
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    if a.shape != b.shape:
        raise ValueError("input vectors must have equal length")
    return a, b


def confusion(predictions, labels) -> ConfusionCounts:
    predictions, labels = _aligned(predictions, labels)
    return ConfusionCounts(
        tp=int((predictions & labels).sum()),
        fp=int((predictions & ~labels).sum()),
        tn=int((~predictions & ~labels).sum()),
        fn=int((~predictions & labels).sum()),
    )


def f1_precision_recall(c: ConfusionCounts):
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    f1 = (
        2.0 * precision * recall / (precision + recall)
        if precision + recall
        else 0.0
    )
    return f1, precision, recall


def mcc(c: ConfusionCounts) -> float:
    """Matthews correlation coefficient; exact integer arithmetic inside."""
    num = c.tp * c.tn - c.fp * c.fn
    den = (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn)
    if den == 0:
        return 0.0
    return float(num) / math.sqrt(float(den))


def bias_report(predictions, labels, group_masks) -> BiasReport:
    """Audit predictions against labels over named group masks.

    group_masks is an ordered mapping name -> boolean membership vector.
    FNED/FPED are the raw (unnormalized) sums of absolute deviations of
    group rates from the overall rate, so their magnitude grows with the
    number of groups.
    """
    predictions, labels = _aligned(predictions, labels)
    full = np.ones(labels.shape, dtype=bool)
    c = confusion(predictions, labels)
    f1, precision, recall = f1_precision_recall(c)
    overall_fnr = exact_rate(predictions, labels, full, FNR)
    overall_fpr = exact_rate(predictions, labels, full, FPR)

    groups = []
    fned = 0.0
    fped = 0.0
    for name, mask in group_masks.items():
        mask = np.asarray(mask).astype(bool)
        if mask.shape != labels.shape:
            raise ValueError(f"group mask {name!r} must match labels length")
        g_fnr = exact_rate(predictions, labels, mask, FNR)
        g_fpr = exact_rate(predictions, labels, mask, FPR)
        g_mcc = mcc(confusion(predictions[mask], labels[mask]))
        groups.append(
            GroupMetrics(
                name=name,
                fnr=g_fnr,
                fpr=g_fpr,
                mcc=g_mcc,
                pos_count=int((mask & labels).sum()),
                neg_count=int((mask & ~labels).sum()),
            )
        )
        if g_fnr is not None and overall_fnr is not None:
            fned += abs(overall_fnr - g_fnr)
        if g_fpr is not None and overall_fpr is not None:
            fped += abs(overall_fpr - g_fpr)

    return BiasReport(
        f1=f1,
        mcc=mcc(c),
        precision=precision,
        recall=recall,
        fnr=overall_fnr,
        fpr=overall_fpr,
        fned=fned,
        fped=fped,
        total_bias=fned + fped,
        groups=groups,
    )


def bias_decrease(baseline_total: float, constrained_total: float) -> Optional[float]:
    """Percent reduction in total bias; None when the baseline total is 0."""
    if baseline_total < 0 or constrained_total < 0:
        raise ValueError("bias totals must be nonnegative")
    if baseline_total == 0:
        return None
    return 100.0 * (1.0 - constrained_total / baseline_total)


def chi2_sf_1df(x: float) -> float:
    """Survival function of the chi-squared distribution with 1 dof."""
    if x < 0:
        raise ValueError("statistic must be nonnegative")
    return math.erfc(math.sqrt(x / 2.0))


def mcnemar(preds_baseline, preds_constrained, labels) -> McNemarResult:
    """Continuity-corrected McNemar chi-squared test on the discordant cells.

    statistic = (|b - c| - 1)^2 / (b + c) with b/c the one-sided-correct
    counts; p-value from chi-squared with 1 dof. Degenerate b + c = 0 gives
    statistic 0 and p = 1.
    """
    preds_baseline, labels = _aligned(preds_baseline, labels)
    preds_constrained, _ = _aligned(preds_constrained, labels)
    a_correct = preds_baseline == labels
    b_correct = preds_constrained == labels
    both = int((a_correct & b_correct).sum())
    only_a = int((a_correct & ~b_correct).sum())
    only_b = int((~a_correct & b_correct).sum())
    neither = int((~a_correct & ~b_correct).sum())
    discordant = only_a + only_b
    if discordant == 0:
        statistic, p = 0.0, 1.0
    else:
        statistic = (abs(only_a - only_b) - 1) ** 2 / discordant
        p = chi2_sf_1df(statistic)
    return McNemarResult(
        both_correct=both,
        only_baseline_correct=only_a,
        only_constrained_correct=only_b,
        both_wrong=neither,
        statistic=float(statistic),
        p_value=float(p),
    )
