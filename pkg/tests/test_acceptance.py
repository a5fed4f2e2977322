"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines. The training-based criteria use the frozen jigsaw-skew preset and
fixed seeds, so every run of this suite reproduces the same numbers.
"""

import json

import numpy as np
import pytest

import fairclf
from fairclf.constraints import (
    FNR,
    FPR,
    ConstraintConfig,
    RateSnapshot,
    expanded_violations,
    proxy_rate,
    worstcase_violations,
)
from fairclf.data import generate_synthetic, split_dataset
from fairclf.metrics import ConfusionCounts, bias_decrease, f1_precision_recall, mcc, mcnemar
from fairclf.network import AdamState, MlpParams, bce_loss, forward, save_checkpoint
from fairclf.presets import JIGSAW_SKEW
from fairclf.trainer import TrainConfig, evaluate_on, train

SPLIT_SEED = 13
RUN_SEED = 23
TAUS = (0.02, 0.03)


def criterion(name, ok, detail=""):
    print(f"\n[ACCEPTANCE] {name}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, f"{name}: {detail}"


@pytest.fixture(scope="module")
def benchmark_runs():
    ds = generate_synthetic(JIGSAW_SKEW)
    split = split_dataset(ds, (0.70, 0.15, 0.15), SPLIT_SEED)
    cons = ConstraintConfig(TAUS[0], TAUS[1], ("male", "female"))
    baseline = train(ds, split, TrainConfig(seed=RUN_SEED))
    constrained = train(ds, split, TrainConfig(seed=RUN_SEED, constraint=cons))
    return ds, split, baseline, constrained


def test_metric_oracle_table1():
    twitter = bias_decrease(1.781, 1.579)
    gab = bias_decrease(1.203, 0.872)
    jigsaw = bias_decrease(0.147, 0.031)
    ok = (
        abs(twitter - 11.3) <= 0.1
        and abs(gab - 27.5) <= 0.1
        and abs(jigsaw - 78.7) <= 0.5
    )
    criterion(
        "metric-oracle-table1", ok,
        f"twitter {twitter:.2f}% (11.3±0.1), gab {gab:.2f}% (27.5±0.1), "
        f"jigsaw {jigsaw:.2f}% (78.7±0.5)",
    )


def test_mcnemar_oracle_table3():
    sm = pytest.importorskip("statsmodels.stats.contingency_tables")
    both, only_con, only_base, neither = 48802, 5849, 1888, 4055
    n = both + only_con + only_base + neither
    labels = np.zeros(n, dtype=np.uint8)
    preds_base = np.zeros(n, dtype=np.uint8)
    preds_con = np.zeros(n, dtype=np.uint8)
    i = both
    preds_base[i : i + only_con] = 1
    i += only_con
    preds_con[i : i + only_base] = 1
    i += only_base
    preds_base[i:] = 1
    preds_con[i:] = 1
    res = mcnemar(preds_base, preds_con, labels)
    table = [[both, only_base], [only_con, neither]]
    ref = sm.mcnemar(table, exact=False, correction=True)
    rel = abs(res.statistic - ref.statistic) / ref.statistic
    ok = res.p_value < 0.001 and rel < 1e-6
    criterion(
        "mcnemar-oracle-table3", ok,
        f"statistic {res.statistic:.4f} vs reference {ref.statistic:.4f} "
        f"(rel {rel:.2e}), p {res.p_value:.3g} < 0.001",
    )


def _fd_network_instance(rng):
    d = int(rng.integers(1, 5))
    h1 = int(rng.integers(2, 9))
    h2 = int(rng.integers(2, 9))
    n = int(rng.integers(1, 9))
    params = MlpParams(
        w1=rng.normal(0, 1, (h1, d)), b1=rng.normal(0, 0.3, h1),
        w2=rng.normal(0, 1, (h2, h1)), b2=rng.normal(0, 0.3, h2),
        w3=rng.normal(0, 1, (1, h2)), b3=rng.normal(0, 0.3, 1),
    )
    x = rng.normal(0, 1, (n, d))
    y = rng.integers(0, 2, n).astype(float)
    cache = forward(params, x)
    _, dlogits = bce_loss(cache, y)
    analytic = fairclf.backward(params, cache, dlogits)

    h = 1e-4
    worst = 0.0
    for arr, grad in zip(params.arrays(), analytic.arrays()):
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + h
            up, _ = bce_loss(forward(params, x), y)
            arr[idx] = orig - h
            dn, _ = bce_loss(forward(params, x), y)
            arr[idx] = orig
            fd = (up - dn) / (2 * h)
            rel = abs(grad[idx] - fd) / max(abs(fd), 1e-3)
            worst = max(worst, rel)
    return worst


def _fd_proxy_instance(rng):
    n = int(rng.integers(4, 12))
    logits = rng.normal(0, 2, n)
    # keep clear of the surrogate's kinks at z = 0 and |z| = 1
    for bad, repl in ((0.0, 0.31), (1.0, 0.52), (-1.0, -0.52)):
        close = np.abs(logits - bad) < 5e-3
        logits[close] = repl
    labels = rng.integers(0, 2, n)
    labels[:2] = [0, 1]
    mask = rng.integers(0, 2, n).astype(bool)
    mask[:2] = True
    h = 1e-6
    worst = 0.0
    for kind in (FNR, FPR):
        _, grad = proxy_rate(logits, labels, mask, kind)
        for i in range(n):
            up, dn = logits.copy(), logits.copy()
            up[i] += h
            dn[i] -= h
            vu, _ = proxy_rate(up, labels, mask, kind)
            vd, _ = proxy_rate(dn, labels, mask, kind)
            fd = (vu - vd) / (2 * h)
            rel = abs(grad[i] - fd) / max(abs(fd), 1e-3)
            worst = max(worst, rel)
    return worst


def test_gradient_suite():
    rng = np.random.default_rng(2024)
    worst = 0.0
    n_network, n_proxy = 120, 90
    for _ in range(n_network):
        worst = max(worst, _fd_network_instance(rng))
    for _ in range(n_proxy):
        worst = max(worst, _fd_proxy_instance(rng))
    ok = worst < 1e-5
    criterion(
        "gradient-suite", ok,
        f"{n_network + n_proxy} randomized instances, worst relative error {worst:.2e} < 1e-5",
    )


def test_constraint_reformulation_equivalence():
    rng = np.random.default_rng(7)
    n_checked = 10_000
    agree = True
    for _ in range(n_checked):
        n_groups = int(rng.integers(1, 6))
        snap = RateSnapshot(
            overall_fnr=float(rng.random()),
            overall_fpr=float(rng.random()),
            fnr=tuple(rng.random(n_groups)),
            fpr=tuple(rng.random(n_groups)),
            pos_counts=(1,) * n_groups,
            neg_counts=(1,) * n_groups,
            overall_pos=1,
            overall_neg=1,
        )
        cfg = ConstraintConfig(
            tau_fnr=float(rng.random() * 0.3),
            tau_fpr=float(rng.random() * 0.3),
            group_names=tuple(f"g{i}" for i in range(n_groups)),
        )
        expanded = expanded_violations(snap, cfg)
        worst = worstcase_violations(snap, cfg)
        feasible_expanded = max(expanded) <= 0
        feasible_worst = worst.max_violation() <= 0
        exact_fnr = max(expanded[0::2]) == max(worst.fnr_high, worst.fnr_low)
        exact_fpr = max(expanded[1::2]) == max(worst.fpr_high, worst.fpr_low)
        if not (feasible_expanded == feasible_worst and exact_fnr and exact_fpr):
            agree = False
            break
    criterion(
        "constraint-reformulation-equivalence", agree,
        f"{n_checked} randomized snapshots, feasibility and per-kind maxima exact",
    )


def test_bias_mitigation_benchmark(benchmark_runs):
    ds, split, baseline, constrained = benchmark_runs
    rb = evaluate_on(baseline, ds, split.test)
    rc = evaluate_on(constrained, ds, split.test)
    ratio = rc.total_bias / rb.total_bias
    ok = ratio <= 0.70 and rc.mcc >= rb.mcc - 0.05
    criterion(
        "bias-mitigation-benchmark", ok,
        f"total bias {rb.total_bias:.4f} -> {rc.total_bias:.4f} "
        f"(ratio {ratio:.3f} <= 0.70), mcc {rb.mcc:.4f} -> {rc.mcc:.4f} "
        f"(delta {rc.mcc - rb.mcc:+.4f} >= -0.05)",
    )


def test_null_constraint_equivalence(benchmark_runs, tmp_path):
    ds, split, baseline, _ = benchmark_runs
    null_cfg = TrainConfig(
        seed=RUN_SEED,
        constraint=ConstraintConfig(1.0, 1.0, ("male", "female")),
    )
    null = train(ds, split, null_cfg)
    base_path = tmp_path / "baseline.ckpt"
    null_path = tmp_path / "null.ckpt"
    save_checkpoint(baseline.params, base_path)
    save_checkpoint(null.params, null_path)
    identical = base_path.read_bytes() == null_path.read_bytes()
    lam_zero = all(all(l == 0.0 for l in rec.multipliers) for rec in null.history)
    same_history = all(
        a.val_f1 == b.val_f1 and a.train_loss == b.train_loss
        for a, b in zip(baseline.history, null.history)
    )
    ok = identical and lam_zero and same_history
    criterion(
        "null-constraint-equivalence", ok,
        f"checkpoints bit-identical: {identical}, multipliers stayed zero: {lam_zero}, "
        f"epoch metrics identical: {same_history}",
    )


def test_run_config_determinism(tmp_path):
    from fairclf.cli import main

    cfg = {
        "dataset": {"path": str(tmp_path / "d.bin"), "format": "binary"},
        "split": {"seed": 5},
        "synth": {"preset": "jigsaw-skew", "n_records": 800, "seed": 2},
        "train": {
            "epochs": 5, "batch_size": 128, "seed": 9, "hidden": [32, 16],
            "constraint": {"tau_fnr": 0.02, "tau_fpr": 0.03, "groups": ["male", "female"]},
        },
    }
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps(cfg))
    assert main(["synth", "--config", str(cfg_path)]) == 0
    assert main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "r1")]) == 0
    assert main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "r2")]) == 0
    same = {
        name: (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()
        for name in ("summary.json", "history.jsonl", "model.ckpt")
    }
    ok = all(same.values())
    criterion(
        "run-config-determinism", ok,
        "byte-identical across reruns: " + ", ".join(f"{k}={v}" for k, v in same.items()),
    )


def test_metric_edge_cases():
    checks = []
    # precision/recall/F1 on empty denominators
    f1, p, r = f1_precision_recall(ConfusionCounts(tp=0, fp=0, tn=3, fn=0))
    checks.append(("precision 0/0 -> 0", p == 0.0))
    checks.append(("recall 0/0 -> 0", r == 0.0))
    checks.append(("f1 degenerate -> 0", f1 == 0.0))
    f1_only_fn, _, _ = f1_precision_recall(ConfusionCounts(tp=0, fp=0, tn=0, fn=4))
    checks.append(("f1 all-fn -> 0", f1_only_fn == 0.0))
    # MCC zero-denominator convention
    checks.append(("mcc 0-den -> 0", mcc(ConfusionCounts(tp=0, fp=0, tn=0, fn=5)) == 0.0))
    checks.append(("mcc single-row -> 0", mcc(ConfusionCounts(tp=2, fp=0, tn=0, fn=1)) == 0.0))
    # undefined group rates excluded from equality differences
    labels = np.array([1, 1, 0, 0])
    preds = np.array([0, 1, 1, 0])
    rep = fairclf.bias_report(preds, labels, {
        "no_positives": np.array([0, 0, 1, 1], bool),
        "no_negatives": np.array([1, 1, 0, 0], bool),
    })
    checks.append(("group without positives has fnr None", rep.groups[0].fnr is None))
    checks.append(("group without negatives has fpr None", rep.groups[1].fpr is None))
    checks.append(
        ("fned counts only defined groups", rep.fned == abs(0.5 - 0.5)),
    )
    checks.append(
        ("fped counts only defined groups", rep.fped == abs(0.5 - 0.5)),
    )
    # exact_rate undefined on empty denominator
    checks.append(
        ("exact fnr undefined", fairclf.exact_rate(preds, labels, [0, 0, 1, 1], FNR) is None),
    )
    failed = [name for name, ok in checks if not ok]
    criterion(
        "metric-edge-cases", not failed,
        f"{len(checks)} conventions checked" + (f"; failed: {failed}" if failed else ""),
    )
