"""Command-line entry points: synth, train, eval, compare.

Every command takes --config <json> plus the targeted overrides --seed,
--tau-fnr, --tau-fpr and --out. A run is a deterministic function of its
configuration file; wall-clock metadata is segregated into run_meta.json so
the primary outputs are byte-reproducible. All report payloads are built
and schema-checked in memory first, then written atomically, so a failed
run leaves no partial report files.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
failure.
"""

import argparse
import csv
import io
import json
import os
import sys
import tempfile
import time

import numpy as np

from . import kernels
from .constraints import ConstraintConfig
from .data import generate_synthetic, load_dataset, save_dataset, split_dataset
from .errors import ConfigError, DataError, FairclfError, NumericalError
from .metrics import bias_decrease, mcnemar
from .network import load_checkpoint, save_checkpoint
from .presets import SYNTH_PRESETS
from .trainer import TrainConfig, evaluate_on, train
from .data import SynthConfig

OUT_ROOT_ENV = "FAIRCLF_OUT"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _check_keys(obj, allowed, context):
    unknown = set(obj) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {context}: {', '.join(sorted(unknown))}")


def load_config(path) -> dict:
    if not os.path.exists(path):
        raise ConfigError(f"{path}: no such config file")
    with open(path) as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    _check_keys(
        cfg,
        {"dataset", "split", "train", "synth", "eval", "compare", "out_dir", "report_formats"},
        "config",
    )
    return cfg


def _dataset_section(cfg):
    sec = cfg.get("dataset")
    if not isinstance(sec, dict):
        raise ConfigError("config needs a 'dataset' object with 'path'")
    _check_keys(sec, {"path", "format"}, "dataset")
    if "path" not in sec:
        raise ConfigError("dataset.path is required")
    fmt = sec.get("format")
    if fmt is not None and fmt not in ("csv", "binary"):
        raise ConfigError(f"dataset.format must be 'csv' or 'binary', got {fmt!r}")
    return sec["path"], fmt


def _split_section(cfg):
    sec = cfg.get("split", {})
    _check_keys(sec, {"seed", "fractions"}, "split")
    return int(sec.get("seed", 0)), tuple(sec.get("fractions", (0.70, 0.15, 0.15)))


def _constraint_from(obj):
    if obj is None:
        return None
    _check_keys(obj, {"tau_fnr", "tau_fpr", "groups"}, "train.constraint")
    for key in ("tau_fnr", "tau_fpr", "groups"):
        if key not in obj:
            raise ConfigError(f"train.constraint.{key} is required")
    try:
        return ConstraintConfig.from_dict(obj)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _train_config(cfg, overrides) -> TrainConfig:
    sec = dict(cfg.get("train", {}))
    _check_keys(
        sec,
        {"epochs", "batch_size", "learning_rate", "multiplier_learning_rate",
         "multiplier_cap", "rate_smoothing", "seed", "hidden", "constraint",
         "keep_partial_batch"},
        "train",
    )
    constraint = _constraint_from(sec.get("constraint"))
    if overrides.tau_fnr is not None or overrides.tau_fpr is not None:
        if constraint is None:
            raise ConfigError("--tau-fnr/--tau-fpr need train.constraint in the config")
        constraint = ConstraintConfig(
            tau_fnr=overrides.tau_fnr if overrides.tau_fnr is not None else constraint.tau_fnr,
            tau_fpr=overrides.tau_fpr if overrides.tau_fpr is not None else constraint.tau_fpr,
            group_names=constraint.group_names,
        )
    seed = overrides.seed if overrides.seed is not None else int(sec.get("seed", 0))
    try:
        return TrainConfig(
            epochs=int(sec.get("epochs", 75)),
            batch_size=int(sec.get("batch_size", 128)),
            learning_rate=float(sec.get("learning_rate", 5e-4)),
            multiplier_learning_rate=float(sec.get("multiplier_learning_rate", 0.01)),
            multiplier_cap=(None if sec.get("multiplier_cap", 10.0) is None
                            else float(sec.get("multiplier_cap", 10.0))),
            rate_smoothing=float(sec.get("rate_smoothing", 0.05)),
            constraint=constraint,
            seed=seed,
            hidden=tuple(sec.get("hidden", (512, 32))),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _out_dir(cfg, overrides) -> str:
    if overrides.out is not None:
        return overrides.out
    if "out_dir" in cfg:
        return cfg["out_dir"]
    return os.environ.get(OUT_ROOT_ENV, ".")


def _require(payload, keys, context):
    for key in keys:
        if key not in payload:
            raise FairclfError(f"internal: report {context} missing key {key}")


def _json_text(payload) -> str:
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _write_outputs(out_dir, files):
    os.makedirs(out_dir, exist_ok=True)
    for name, content in files.items():
        data = content.encode() if isinstance(content, str) else content
        fd, tmp = tempfile.mkstemp(dir=out_dir, prefix="." + name)
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, os.path.join(out_dir, name))
        except BaseException:
            os.unlink(tmp)
            raise


def _fmt(x):
    return "" if x is None else repr(float(x))


def _report_files(report, prefix, taus=(None, None)):
    payload = report.to_dict()
    _require(payload, ("overall", "groups", "fned", "fped", "total_bias"), "bias report")
    files = {
        f"{prefix}.json": _json_text(payload),
        f"{prefix}.csv": _csv_text(
            ["f1", "mcc", "precision", "recall", "fned", "fped", "total_bias"],
            [[_fmt(v) for v in report.table_row()]],
        ),
    }
    rows = [
        [g.name, _fmt(g.fnr), _fmt(g.fpr), _fmt(report.fnr), _fmt(report.fpr),
         _fmt(taus[0]), _fmt(taus[1])]
        for g in report.groups
    ]
    files[f"{prefix}_group_rates.csv"] = _csv_text(
        ["group", "fnr", "fpr", "overall_fnr", "overall_fpr", "tau_fnr", "tau_fpr"], rows
    )
    return files


def _synth_config(cfg) -> SynthConfig:
    sec = cfg.get("synth")
    if not isinstance(sec, dict):
        raise ConfigError("config needs a 'synth' object (preset or full parameters)")
    sec = dict(sec)
    if "preset" in sec:
        name = sec.pop("preset")
        if name not in SYNTH_PRESETS:
            raise ConfigError(
                f"unknown preset {name!r}; available: {', '.join(sorted(SYNTH_PRESETS))}"
            )
        base = SYNTH_PRESETS[name]
        _check_keys(sec, {"seed", "n_records"}, "synth preset overrides")
        fields = {
            "n_records": int(sec.get("n_records", base.n_records)),
            "seed": int(sec.get("seed", base.seed)),
        }
        return SynthConfig(
            n_records=fields["n_records"],
            dim=base.dim,
            group_names=base.group_names,
            group_prevalence=base.group_prevalence,
            group_positive_rate=base.group_positive_rate,
            overall_positive_rate=base.overall_positive_rate,
            group_shift=base.group_shift,
            noise_scale=base.noise_scale,
            seed=fields["seed"],
        )
    _check_keys(
        sec,
        {"n_records", "dim", "group_names", "group_prevalence", "group_positive_rate",
         "overall_positive_rate", "group_shift", "noise_scale", "seed"},
        "synth",
    )
    try:
        return SynthConfig(
            n_records=int(sec["n_records"]),
            dim=int(sec["dim"]),
            group_names=tuple(sec["group_names"]) if "group_names" in sec else None,
            group_prevalence=tuple(sec["group_prevalence"]),
            group_positive_rate=tuple(sec["group_positive_rate"]),
            overall_positive_rate=float(sec["overall_positive_rate"]),
            group_shift=tuple(sec["group_shift"]),
            noise_scale=float(sec.get("noise_scale", 1.0)),
            seed=int(sec.get("seed", 0)),
        )
    except KeyError as exc:
        raise ConfigError(f"synth.{exc.args[0]} is required") from None


def cmd_synth(cfg, overrides) -> int:
    import dataclasses

    scfg = _synth_config(cfg)
    if overrides.seed is not None:
        scfg = dataclasses.replace(scfg, seed=overrides.seed)
    path, fmt = _dataset_section(cfg)
    ds = generate_synthetic(scfg)
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    save_dataset(ds, path, fmt)
    print(f"wrote {ds.n_records} records (dim {ds.dim}, groups {', '.join(ds.group_names)}) to {path}")
    return 0


def cmd_train(cfg, overrides) -> int:
    path, fmt = _dataset_section(cfg)
    split_seed, fractions = _split_section(cfg)
    tcfg = _train_config(cfg, overrides)
    out_dir = _out_dir(cfg, overrides)

    started = time.time()
    ds = load_dataset(path, fmt)
    split = split_dataset(ds, fractions, split_seed)
    model = train(ds, split, tcfg)
    selected = model.history[model.selected_epoch - 1]

    summary = {
        "mode": tcfg.mode,
        "selected_epoch": model.selected_epoch,
        "validation_f1": selected.val_f1,
        "validation_mcc": selected.val_mcc,
        "epochs": tcfg.epochs,
        "batch_size": tcfg.batch_size,
        "learning_rate": tcfg.learning_rate,
        "seed": tcfg.seed,
        "split_seed": split_seed,
        "dataset_path": path,
        "constraint": tcfg.constraint.to_dict() if tcfg.constraint else None,
        "multipliers": (list(model.history[-1].multipliers)
                        if tcfg.constraint else None),
        "checkpoint": "model.ckpt",
    }
    _require(summary, ("mode", "selected_epoch", "validation_f1"), "summary")
    history_lines = "".join(
        json.dumps(rec.to_dict(), sort_keys=True) + "\n" for rec in model.history
    )
    meta = {
        "started_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(started)),
        "duration_seconds": round(time.time() - started, 3),
        "kernel_backend": kernels.active_backend(),
    }
    os.makedirs(out_dir, exist_ok=True)
    save_checkpoint(
        model.params,
        os.path.join(out_dir, "model.ckpt"),
        header_extra={
            "seed": tcfg.seed,
            "epoch": model.selected_epoch,
            "metrics": {"val_f1": selected.val_f1, "val_mcc": selected.val_mcc},
        },
    )
    _write_outputs(out_dir, {
        "summary.json": _json_text(summary),
        "history.jsonl": history_lines,
        "run_meta.json": _json_text(meta),
    })
    print(f"{tcfg.mode} training done: selected epoch {model.selected_epoch}, "
          f"validation F1 {selected.val_f1:.4f}; outputs in {out_dir}")
    return 0


def _eval_groups(cfg):
    sec = cfg.get("eval", {})
    _check_keys(sec, {"checkpoint", "groups"}, "eval")
    return sec


def _load_model_for(ds, ckpt_path):
    from .trainer import TrainedModel

    if not os.path.exists(ckpt_path):
        raise DataError(f"{ckpt_path}: no such checkpoint")
    params, header = load_checkpoint(ckpt_path)
    if params.dim != ds.dim:
        raise DataError(
            f"checkpoint dimension {params.dim} does not match dataset dimension {ds.dim}"
        )
    return TrainedModel(params=params, selected_epoch=header.get("epoch", 0),
                        history=[], config=None)


def cmd_eval(cfg, overrides) -> int:
    path, fmt = _dataset_section(cfg)
    split_seed, fractions = _split_section(cfg)
    sec = _eval_groups(cfg)
    if "checkpoint" not in sec:
        raise ConfigError("eval.checkpoint is required")
    out_dir = _out_dir(cfg, overrides)

    ds = load_dataset(path, fmt)
    split = split_dataset(ds, fractions, split_seed)
    model = _load_model_for(ds, sec["checkpoint"])
    groups = tuple(sec.get("groups", ds.group_names))
    for g in groups:
        if g not in ds.group_names:
            raise ConfigError(f"eval group {g!r} not in dataset groups")
    report = evaluate_on(model, ds, split.test, groups)

    taus = (None, None)
    constraint = cfg.get("train", {}).get("constraint")
    if constraint:
        taus = (constraint.get("tau_fnr"), constraint.get("tau_fpr"))
    if overrides.tau_fnr is not None:
        taus = (overrides.tau_fnr, taus[1])
    if overrides.tau_fpr is not None:
        taus = (taus[0], overrides.tau_fpr)

    _write_outputs(out_dir, _report_files(report, "bias_report", taus))
    print(f"test total bias {report.total_bias:.4f} (fned {report.fned:.4f}, "
          f"fped {report.fped:.4f}), mcc {report.mcc:.4f}; reports in {out_dir}")
    return 0


def cmd_compare(cfg, overrides) -> int:
    path, fmt = _dataset_section(cfg)
    split_seed, fractions = _split_section(cfg)
    sec = cfg.get("compare", {})
    _check_keys(sec, {"checkpoint_a", "checkpoint_b", "groups"}, "compare")
    for key in ("checkpoint_a", "checkpoint_b"):
        if key not in sec:
            raise ConfigError(f"compare.{key} is required")
    out_dir = _out_dir(cfg, overrides)

    ds = load_dataset(path, fmt)
    split = split_dataset(ds, fractions, split_seed)
    model_a = _load_model_for(ds, sec["checkpoint_a"])
    model_b = _load_model_for(ds, sec["checkpoint_b"])
    groups = tuple(sec.get("groups", ds.group_names))

    report_a = evaluate_on(model_a, ds, split.test, groups)
    report_b = evaluate_on(model_b, ds, split.test, groups)

    from .trainer import predict

    test_x = ds.features[split.test].astype(np.float64)
    test_y = ds.labels[split.test]
    _, preds_a = predict(model_a, test_x)
    _, preds_b = predict(model_b, test_x)
    mc = mcnemar(preds_a, preds_b, test_y)
    decrease = bias_decrease(report_a.total_bias, report_b.total_bias) \
        if report_a.total_bias > 0 else None

    payload = {
        "baseline": report_a.to_dict(),
        "constrained": report_b.to_dict(),
        "bias_decrease_percent": decrease,
        "mcnemar": mc.to_dict(),
    }
    _require(payload["mcnemar"], ("both_correct", "statistic", "p_value"), "mcnemar")
    files = {
        "compare.json": _json_text(payload),
        "contingency.csv": _csv_text(
            ["both_correct", "only_baseline_correct", "only_constrained_correct",
             "both_wrong", "statistic", "p_value"],
            [[mc.both_correct, mc.only_baseline_correct, mc.only_constrained_correct,
              mc.both_wrong, _fmt(mc.statistic), _fmt(mc.p_value)]],
        ),
        "compare_rows.csv": _csv_text(
            ["model", "f1", "mcc", "precision", "recall", "fned", "fped",
             "total_bias", "bias_decrease_percent"],
            [
                ["baseline"] + [_fmt(v) for v in report_a.table_row()] + [""],
                ["constrained"] + [_fmt(v) for v in report_b.table_row()] + [_fmt(decrease)],
            ],
        ),
    }
    _write_outputs(out_dir, files)
    msg = "n/a" if decrease is None else f"{decrease:.1f}%"
    print(f"bias decrease {msg}; McNemar statistic {mc.statistic:.4f}, "
          f"p {mc.p_value:.3g}; reports in {out_dir}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fairclf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("synth", "generate a synthetic dataset"),
        ("train", "train a baseline or constrained model"),
        ("eval", "bias-audit a checkpoint on the test split"),
        ("compare", "compare two checkpoints (bias decrease, McNemar)"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to the run configuration JSON")
        p.add_argument("--seed", type=int, help="override the command's primary seed")
        p.add_argument("--tau-fnr", type=float, dest="tau_fnr", help="override tau_FNR")
        p.add_argument("--tau-fpr", type=float, dest="tau_fpr", help="override tau_FPR")
        p.add_argument("--out", help="override the output directory")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args.config)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"fairclf: config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"fairclf: data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"fairclf: numerical failure: {exc}", file=sys.stderr)
        return 3


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
