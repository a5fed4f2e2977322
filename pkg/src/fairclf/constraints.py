"""Group rate computations and the rate-constraint formulations.

Two constraint forms are provided: the per-group expansion (2N absolute
deviations, `expanded_violations`) and the four-constraint worst-case
form used during training (`worstcase_violations`): max/min of group FNRs
and FPRs bounded around the overall rates by tau_fnr / tau_fpr.

Exact rates are count-based and therefore piecewise constant in the model
parameters; the constraint player consumes them directly. The model player
instead differentiates a clipped-hinge (ramp) surrogate of each rate that
upper-bounds the exact rate and coincides with it as logits saturate.

A rate is undefined (None) when its denominator is empty; constraints that
would need an undefined rate are reported as None ("inactive") rather than
raising, since small batches routinely miss rare groups.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

FNR = "fnr"
FPR = "fpr"


@dataclass(frozen=True)
class ConstraintConfig:
    """Allowed deviations of group rates from overall rates, and the groups."""

    tau_fnr: float
    tau_fpr: float
    group_names: tuple

    def __post_init__(self):
        if self.tau_fnr < 0 or self.tau_fpr < 0:
            raise ValueError("tau values must be nonnegative")
        if not self.group_names:
            raise ValueError("constraint group list must not be empty")
        object.__setattr__(self, "group_names", tuple(self.group_names))

    def to_dict(self):
        return {
            "tau_fnr": self.tau_fnr,
            "tau_fpr": self.tau_fpr,
            "groups": list(self.group_names),
        }

    @classmethod
    def from_dict(cls, obj):
        return cls(
            tau_fnr=float(obj["tau_fnr"]),
            tau_fpr=float(obj["tau_fpr"]),
            group_names=tuple(obj["groups"]),
        )


@dataclass
class RateSnapshot:
    """Overall and per-group FNR/FPR plus the supporting counts.

    Entries are None where the denominator count is zero.
    """

    overall_fnr: Optional[float]
    overall_fpr: Optional[float]
    fnr: tuple
    fpr: tuple
    pos_counts: tuple
    neg_counts: tuple
    overall_pos: int
    overall_neg: int


@dataclass
class ViolationVector:
    """The four worst-case constraint margins (positive = violated).

    fnr_high: max group FNR minus overall FNR minus tau_fnr
    fnr_low:  overall FNR minus min group FNR minus tau_fnr
    fpr_high / fpr_low: same with FPR and tau_fpr.

    Exact entries are None when inactive. proxy_* carry the surrogate
    margins when they were computed (training), else None.
    """

    fnr_high: Optional[float]
    fnr_low: Optional[float]
    fpr_high: Optional[float]
    fpr_low: Optional[float]
    tau_fnr: float
    tau_fpr: float
    proxy_fnr_high: Optional[float] = None
    proxy_fnr_low: Optional[float] = None
    proxy_fpr_high: Optional[float] = None
    proxy_fpr_low: Optional[float] = None

    def exact(self):
        return (self.fnr_high, self.fnr_low, self.fpr_high, self.fpr_low)

    def max_violation(self) -> Optional[float]:
        active = [v for v in self.exact() if v is not None]
        return max(active) if active else None

    def to_dict(self):
        return {
            "fnr_high": self.fnr_high,
            "fnr_low": self.fnr_low,
            "fpr_high": self.fpr_high,
            "fpr_low": self.fpr_low,
            "tau_fnr": self.tau_fnr,
            "tau_fpr": self.tau_fpr,
        }


def _checked(predictions, labels, mask):
    predictions = np.asarray(predictions).astype(bool)
    labels = np.asarray(labels).astype(bool)
    mask = np.asarray(mask).astype(bool)
    if not (predictions.shape == labels.shape == mask.shape):
        raise ValueError("predictions, labels and mask must have equal length")
    return predictions, labels, mask


def exact_rate(predictions, labels, mask, kind) -> Optional[float]:
    """FN/(FN+TP) or FP/(FP+TN) over masked examples; None if denominator 0."""
    predictions, labels, mask = _checked(predictions, labels, mask)
    if kind == FNR:
        denom_mask = mask & labels
        errors = denom_mask & ~predictions
    elif kind == FPR:
        denom_mask = mask & ~labels
        errors = denom_mask & predictions
    else:
        raise ValueError(f"kind must be 'fnr' or 'fpr', got {kind!r}")
    denom = int(denom_mask.sum())
    if denom == 0:
        return None
    return float(errors.sum()) / denom


def proxy_rate(logits, labels, mask, kind):
    """Differentiable surrogate of a group error rate, with its gradient.

    Ramp (clipped hinge) on the logit: for FNR the per-positive penalty is
    min(1, max(0, 1 - z)); for FPR it is min(1, max(0, 1 + z)). The mean
    upper-bounds the exact rate (the wrong side of the margin contributes a
    full unit, as the indicator does) and matches it exactly once every
    logit clears the unit margin.

    Subgradients at the corners: 0 at the hinge kink (|z| = 1), the inner
    slope at the clip kink (z = 0), so a just-misclassified example still
    pushes. Returns (value, dvalue/dlogits); value is None and the gradient
    all-zero when the denominator is empty ("constraint inactive").
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    mask = np.asarray(mask).astype(bool)
    if not (logits.shape == labels.shape == mask.shape):
        raise ValueError("logits, labels and mask must have equal length")
    grad = np.zeros_like(logits)
    if kind == FNR:
        denom_mask = mask & labels
    elif kind == FPR:
        denom_mask = mask & ~labels
    else:
        raise ValueError(f"kind must be 'fnr' or 'fpr', got {kind!r}")
    k = int(denom_mask.sum())
    if k == 0:
        return None, grad
    z = logits[denom_mask]
    if kind == FNR:
        value = float(np.mean(np.minimum(1.0, np.maximum(0.0, 1.0 - z))))
        slope = np.where((z >= 0.0) & (z < 1.0), -1.0 / k, 0.0)
    else:
        value = float(np.mean(np.minimum(1.0, np.maximum(0.0, 1.0 + z))))
        slope = np.where((z > -1.0) & (z <= 0.0), 1.0 / k, 0.0)
    grad[denom_mask] = slope
    return value, grad


def rate_snapshot(predictions, labels, group_masks) -> RateSnapshot:
    """Overall plus per-group rates from thresholded predictions.

    group_masks is an ordered mapping name -> boolean membership vector.
    """
    predictions = np.asarray(predictions).astype(bool)
    labels = np.asarray(labels).astype(bool)
    full = np.ones(labels.shape, dtype=bool)
    fnr, fpr, pos_counts, neg_counts = [], [], [], []
    for mask in group_masks.values():
        mask = np.asarray(mask).astype(bool)
        fnr.append(exact_rate(predictions, labels, mask, FNR))
        fpr.append(exact_rate(predictions, labels, mask, FPR))
        pos_counts.append(int((mask & labels).sum()))
        neg_counts.append(int((mask & ~labels).sum()))
    return RateSnapshot(
        overall_fnr=exact_rate(predictions, labels, full, FNR),
        overall_fpr=exact_rate(predictions, labels, full, FPR),
        fnr=tuple(fnr),
        fpr=tuple(fpr),
        pos_counts=tuple(pos_counts),
        neg_counts=tuple(neg_counts),
        overall_pos=int(labels.sum()),
        overall_neg=int((~labels).sum()),
    )


def _pair(overall, group_rates, tau):
    """(high, low) margins for one rate kind; None when inactive."""
    defined = [r for r in group_rates if r is not None]
    if overall is None or not defined:
        return None, None
    return max(defined) - overall - tau, overall - min(defined) - tau


def worstcase_violations(snapshot: RateSnapshot, cfg: ConstraintConfig) -> ViolationVector:
    """The four-constraint form: bound max/min group rates around the overall."""
    fnr_high, fnr_low = _pair(snapshot.overall_fnr, snapshot.fnr, cfg.tau_fnr)
    fpr_high, fpr_low = _pair(snapshot.overall_fpr, snapshot.fpr, cfg.tau_fpr)
    return ViolationVector(
        fnr_high=fnr_high,
        fnr_low=fnr_low,
        fpr_high=fpr_high,
        fpr_low=fpr_low,
        tau_fnr=cfg.tau_fnr,
        tau_fpr=cfg.tau_fpr,
    )


def expanded_violations(snapshot: RateSnapshot, cfg: ConstraintConfig):
    """The 2N per-group form: |overall - group| - tau, interleaved
    [g0 fnr, g0 fpr, g1 fnr, g1 fpr, ...]. Kept as a test oracle for the
    worst-case form; not used in training. None entries mark inactive pairs.
    """
    out = []
    for i in range(len(snapshot.fnr)):
        for rate, overall, tau in (
            (snapshot.fnr[i], snapshot.overall_fnr, cfg.tau_fnr),
            (snapshot.fpr[i], snapshot.overall_fpr, cfg.tau_fpr),
        ):
            if rate is None or overall is None:
                out.append(None)
            else:
                out.append(abs(overall - rate) - tau)
    return out


def _extremum(values, want_max):
    """Index of the max/min defined entry, first index winning ties."""
    best = None
    for i, v in enumerate(values):
        if v is None:
            continue
        if best is None or (v > values[best] if want_max else v < values[best]):
            best = i
    return best


def proxy_violation_terms(logits, labels, group_masks, cfg: ConstraintConfig):
    """Surrogate margins and their logit gradients for the four constraints.

    The max/min over groups is taken hard, on the surrogate rates, and the
    gradient is routed to the argmax/argmin group (ties to the lowest group
    index). Returns a list [fnr_high, fnr_low, fpr_high, fpr_low] where each
    entry is None (inactive) or (margin, dmargin/dlogits).
    """
    labels = np.asarray(labels).astype(bool)
    full = np.ones(labels.shape, dtype=bool)
    terms = []
    for kind, tau in ((FNR, cfg.tau_fnr), (FPR, cfg.tau_fpr)):
        overall, d_overall = proxy_rate(logits, labels, full, kind)
        rates, grads = [], []
        for mask in group_masks.values():
            value, grad = proxy_rate(logits, labels, mask, kind)
            rates.append(value)
            grads.append(grad)
        if overall is None or all(r is None for r in rates):
            terms.extend([None, None])
            continue
        hi = _extremum(rates, want_max=True)
        lo = _extremum(rates, want_max=False)
        terms.append((rates[hi] - overall - tau, grads[hi] - d_overall))
        terms.append((overall - rates[lo] - tau, d_overall - grads[lo]))
    return terms
