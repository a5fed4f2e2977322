"""Baseline and fairness-constrained training loops.

Constrained training is a two-player game played per mini-batch. The first
stream is the ordinary shuffled batch of features and labels; the second
stream traces which batch members belong to each constraint group. The
model player takes an Adam step on

    BCE + sum_j lambda_j * proxy_violation_j

where the proxy violations are clipped-hinge surrogates of the four
worst-case rate constraints (only constraints whose rates are defined in
the batch contribute). The constraint player then performs projected
additive ascent on the EXACT count-based violations:

    lambda_j <- clamp(lambda_j + eta * violation_j, 0, cap),

with the exact rates smoothed across batches (see MultiplierState) so the
ascent tracks the model's true rates rather than single-batch noise.

Checkpoint selection follows validation F1 (earliest epoch on ties). The
whole run is a deterministic function of (dataset, split seed, config).
"""

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import constraints as C
from . import metrics as M
from . import network as N
from .data import Dataset, SplitIndices
from .errors import ConfigError, NumericalError


class TrivialSolutionWarning(UserWarning):
    """Selected model predicts a single class everywhere; constraints may be
    tight enough to have forced a trivial constant solution."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 75
    batch_size: int = 128
    learning_rate: float = 5e-4
    multiplier_learning_rate: float = 0.01
    multiplier_cap: Optional[float] = 10.0
    constraint: Optional[C.ConstraintConfig] = None
    seed: int = 0
    hidden: tuple = N.DEFAULT_HIDDEN
    keep_partial_batch: bool = True
    rate_smoothing: float = 0.05

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.learning_rate <= 0 or self.multiplier_learning_rate <= 0:
            raise ValueError("learning rates must be positive")
        if self.multiplier_cap is not None and self.multiplier_cap <= 0:
            raise ValueError("multiplier_cap must be positive or None")
        if not 0.0 < self.rate_smoothing <= 1.0:
            raise ValueError("rate_smoothing must be in (0, 1]")

    @property
    def mode(self) -> str:
        return "baseline" if self.constraint is None else "constrained"


@dataclass
class MultiplierState:
    """The constraint player: four nonnegative multipliers plus smoothed
    exact-rate estimates.

    Single-batch group rates are means over a handful of examples, so the
    expected max over groups sits well above the true max; ascending on raw
    per-batch violations therefore ratchets multipliers upward even once the
    true constraints hold. The player instead keeps an exponential moving
    average of every exact rate (per group and overall, per kind) and
    ascends on violations of the smoothed rates.
    """

    n_groups: int = 1
    smoothing: float = 0.05
    lam: np.ndarray = field(default_factory=lambda: np.zeros(4))

    def __post_init__(self):
        self.ema_fnr = [None] * (self.n_groups + 1)
        self.ema_fpr = [None] * (self.n_groups + 1)

    def _blend(self, store, i, value):
        if value is None:
            return
        if store[i] is None:
            store[i] = value
        else:
            store[i] += self.smoothing * (value - store[i])

    def observe(self, snapshot: C.RateSnapshot):
        """Fold one batch's exact rates into the running estimates."""
        for i in range(self.n_groups):
            self._blend(self.ema_fnr, i, snapshot.fnr[i])
            self._blend(self.ema_fpr, i, snapshot.fpr[i])
        self._blend(self.ema_fnr, self.n_groups, snapshot.overall_fnr)
        self._blend(self.ema_fpr, self.n_groups, snapshot.overall_fpr)

    def smoothed_snapshot(self, snapshot: C.RateSnapshot) -> C.RateSnapshot:
        """Snapshot with rates replaced by their running estimates, keeping
        only the entries whose rate is defined in the current batch."""
        keep = lambda est, cur: [e if c is not None else None for e, c in zip(est, cur)]
        return C.RateSnapshot(
            overall_fnr=self.ema_fnr[-1] if snapshot.overall_fnr is not None else None,
            overall_fpr=self.ema_fpr[-1] if snapshot.overall_fpr is not None else None,
            fnr=tuple(keep(self.ema_fnr[:-1], snapshot.fnr)),
            fpr=tuple(keep(self.ema_fpr[:-1], snapshot.fpr)),
            pos_counts=snapshot.pos_counts,
            neg_counts=snapshot.neg_counts,
            overall_pos=snapshot.overall_pos,
            overall_neg=snapshot.overall_neg,
        )

    def ascend(self, violations, eta: float, cap: Optional[float]):
        """Projected additive ascent; None leaves an entry untouched."""
        for j, v in enumerate(violations):
            if v is None:
                continue
            lam = self.lam[j] + eta * v
            lam = max(lam, 0.0)
            if cap is not None:
                lam = min(lam, cap)
            self.lam[j] = lam


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_f1: float
    val_mcc: float
    val_violations: Optional[C.ViolationVector]
    multipliers: Optional[tuple]
    checkpoint: Optional[str] = None

    def to_dict(self):
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "val_f1": self.val_f1,
            "val_mcc": self.val_mcc,
            "val_violations": (
                self.val_violations.to_dict() if self.val_violations else None
            ),
            "multipliers": list(self.multipliers) if self.multipliers else None,
        }


@dataclass
class TrainedModel:
    params: N.MlpParams
    selected_epoch: int
    history: list
    config: TrainConfig

    @property
    def dim(self) -> int:
        return self.params.dim


def select_best_epoch(history) -> int:
    """Epoch (1-based) with the highest validation F1, earliest on ties."""
    if not history:
        raise ValueError("empty history")
    best = history[0]
    for rec in history[1:]:
        if rec.val_f1 > best.val_f1:
            best = rec
    return best.epoch


def predict(model: TrainedModel, features):
    """Probabilities and 0.5-threshold predictions; uses no group data."""
    features = np.asarray(features, dtype=np.float64).reshape(-1, model.dim)
    if features.shape[0] == 0:
        return np.zeros(0), np.zeros(0, dtype=np.uint8)
    cache = N.forward(model.params, features)
    probs = N.sigmoid(cache.logits)
    return probs, (cache.logits >= 0.0).astype(np.uint8)


def _penalty_gradient(terms, lam):
    """Multiplier-weighted surrogate gradient; None when nothing active."""
    total = None
    for j, term in enumerate(terms):
        if term is None or lam[j] == 0.0:
            continue
        _, grad = term
        total = lam[j] * grad if total is None else total + lam[j] * grad
    return total


def _constrained_step(params, adam, mult, x, y, masks, cfg):
    """One batch of the two-player game; returns (params, adam, loss)."""
    cache = N.forward(params, x)
    loss, dlogits = N.bce_loss(cache, y)
    terms = C.proxy_violation_terms(cache.logits, y, masks, cfg.constraint)
    penalty = _penalty_gradient(terms, mult.lam)
    if penalty is not None:
        dlogits = dlogits + penalty
    grads = N.backward(params, cache, dlogits)
    params, adam = N.adam_step(params, adam, grads)

    preds = cache.logits >= 0.0
    snap = C.rate_snapshot(preds, y, masks)
    if any(c > 0 for c in snap.pos_counts) or any(c > 0 for c in snap.neg_counts):
        mult.observe(snap)
        exact = C.worstcase_violations(mult.smoothed_snapshot(snap), cfg.constraint)
        mult.ascend(exact.exact(), cfg.multiplier_learning_rate, cfg.multiplier_cap)
    return params, adam, loss


def _baseline_step(params, adam, x, y):
    cache = N.forward(params, x)
    loss, dlogits = N.bce_loss(cache, y)
    grads = N.backward(params, cache, dlogits)
    params, adam = N.adam_step(params, adam, grads)
    return params, adam, loss


def _evaluate(params, x, y, masks, constraint):
    cache = N.forward(params, x)
    preds = cache.logits >= 0.0
    conf = M.confusion(preds, y)
    f1, _, _ = M.f1_precision_recall(conf)
    violations = None
    if constraint is not None:
        snap = C.rate_snapshot(preds, y, masks)
        violations = C.worstcase_violations(snap, constraint)
    return f1, M.mcc(conf), violations, preds


def train(ds: Dataset, split: SplitIndices, cfg: TrainConfig) -> TrainedModel:
    """Run one full training; see the module docstring for the scheme."""
    if split.n_total != ds.n_records:
        raise ConfigError("split does not cover this dataset")
    if cfg.constraint is not None:
        missing = [g for g in cfg.constraint.group_names if g not in ds.group_names]
        if missing:
            raise ConfigError(f"constraint groups not in dataset: {', '.join(missing)}")

    features = ds.features.astype(np.float64)
    labels = ds.labels.astype(np.uint8)
    masks_all = (
        ds.group_masks(cfg.constraint.group_names) if cfg.constraint else {}
    )

    init_ss, shuffle_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    params = N.init_params(ds.dim, init_ss, hidden=cfg.hidden)
    adam = N.AdamState.for_params(params, learning_rate=cfg.learning_rate)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    mult = MultiplierState(
        n_groups=len(cfg.constraint.group_names) if cfg.constraint else 1,
        smoothing=cfg.rate_smoothing,
    )

    val_x = features[split.validation]
    val_y = labels[split.validation]
    val_masks = {n: m[split.validation] for n, m in masks_all.items()}

    history = []
    best_params = params.copy()
    best_epoch = 1
    best_f1 = -1.0
    n_train = len(split.train)

    for epoch in range(1, cfg.epochs + 1):
        order = split.train[shuffle_rng.permutation(n_train)]
        loss_sum = 0.0
        seen = 0
        for start in range(0, n_train, cfg.batch_size):
            batch_idx = order[start : start + cfg.batch_size]
            if len(batch_idx) < cfg.batch_size and not cfg.keep_partial_batch:
                continue
            x = features[batch_idx]
            y = labels[batch_idx]
            batch_no = start // cfg.batch_size + 1
            try:
                if cfg.constraint is None:
                    params, adam, loss = _baseline_step(params, adam, x, y)
                else:
                    masks = {n: m[batch_idx] for n, m in masks_all.items()}
                    params, adam, loss = _constrained_step(
                        params, adam, mult, x, y, masks, cfg
                    )
            except NumericalError as exc:
                raise NumericalError(
                    f"epoch {epoch} batch {batch_no}: {exc}"
                ) from None
            if not np.isfinite(loss):
                raise NumericalError(
                    f"epoch {epoch} batch {batch_no}: training loss is not finite"
                )
            loss_sum += loss * len(batch_idx)
            seen += len(batch_idx)

        val_f1, val_mcc, val_violations, _ = _evaluate(
            params, val_x, val_y, val_masks, cfg.constraint
        )
        history.append(
            EpochRecord(
                epoch=epoch,
                train_loss=loss_sum / max(seen, 1),
                val_f1=val_f1,
                val_mcc=val_mcc,
                val_violations=val_violations,
                multipliers=tuple(mult.lam) if cfg.constraint else None,
            )
        )
        if val_f1 > best_f1:
            best_f1 = val_f1
            best_epoch = epoch
            best_params = params.copy()

    model = TrainedModel(
        params=best_params,
        selected_epoch=best_epoch,
        history=history,
        config=cfg,
    )
    _, val_preds = predict(model, val_x)
    if len(val_preds) and val_preds.min() == val_preds.max():
        warnings.warn(
            "selected model predicts a single class on the whole validation "
            "set; fairness constraints may be tight enough to have forced "
            "convergence to a trivial unbiased solution",
            TrivialSolutionWarning,
            stacklevel=2,
        )
    return model


def evaluate_on(model: TrainedModel, ds: Dataset, indices, group_names=None) -> M.BiasReport:
    """Bias-audit a trained model on the given record indices."""
    features = ds.features[indices].astype(np.float64)
    labels = ds.labels[indices]
    _, preds = predict(model, features)
    names = group_names if group_names is not None else ds.group_names
    masks = {n: ds.group_mask(n)[indices] for n in names}
    return M.bias_report(preds, labels, masks)
