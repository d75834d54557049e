"""Command-line interface: ``findworld <command> --config FILE ...``.

Commands
--------
simulate         sample real-world and FiND-world CSVs from the [synth] SCM
run              full experiment; writes manifest.json and CSV reports
warp             fit warping models on the training split and write warped CSVs
audit            recompute shift and calibration reports from predictions.csv
predict          warp and score new rows with models.json from a previous run
validate-config  check a config without touching data
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import audit, pipeline
from .config import load_config
from .data import Column, Dataset, Schema, load_csv, split, write_csv
from .errors import ConfigError, FindWorldError
from .synth import generate, spec_from_config
from .warp import fit_warp_models, warp_dataset

log = logging.getLogger("findworld")

EXIT_ERROR = 1
EXIT_VIOLATIONS = 3


def _add_common(p, out=True):
    p.add_argument("--config", required=True, type=Path, help="TOML run configuration")
    p.add_argument("--seed", type=int, default=0, help="single source of randomness (default 0)")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads (default: all cores)")
    if out:
        p.add_argument("--out", type=Path, required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="findworld", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="sample paired real/FiND datasets")
    _add_common(p)

    p = sub.add_parser("run", help="run the full experiment")
    _add_common(p)
    p.add_argument("--strict", action="store_true", help="exit nonzero when audits report violations")
    p.add_argument("--trace", action="store_true", help="also write warped CSVs with provenance columns")

    p = sub.add_parser("warp", help="warp the data only")
    _add_common(p)
    p.add_argument("--trace", action="store_true", help="add {node}_orig and {node}_u columns")

    p = sub.add_parser("audit", help="audit stored predictions")
    _add_common(p)
    p.add_argument("--predictions", type=Path, required=True, help="predictions.csv from 'run'")
    p.add_argument("--strict", action="store_true", help="exit nonzero when calibration violations exist")

    p = sub.add_parser("predict", help="score new rows")
    _add_common(p)
    p.add_argument("--models", type=Path, required=True, help="models.json from 'run'")
    p.add_argument("--input", type=Path, required=True, help="CSV of new rows (no target needed)")
    p.add_argument("--trace", action="store_true", help="add {node}_orig and {node}_u columns")

    p = sub.add_parser("validate-config", help="check a config file")
    p.add_argument("--config", required=True, type=Path)
    return parser


def _configure_logging():
    level = os.environ.get("FINDWORLD_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    pa = cfg.pa or "none"
    print(f"config ok: {len(cfg.schema.columns)} columns, pa={pa}, treatment={cfg.treatment.kind}")
    return 0


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    section = cfg.raw.get("synth")
    if not section:
        raise ConfigError("missing section [synth]")
    spec = spec_from_config(cfg.dag, section, args.seed)
    res = generate(spec)
    real = res.real.replace({}, schema=_ordered(cfg.schema, res.real.schema))
    find = res.find.replace({}, schema=real.schema)
    args.out.mkdir(parents=True, exist_ok=True)
    write_csv(real, args.out / "real.csv")
    write_csv(find, args.out / "find.csv", {"psi": res.psi})
    print(f"wrote {spec.n} rows to {args.out / 'real.csv'} and {args.out / 'find.csv'}")
    return 0


def _ordered(cfg_schema: Schema, gen_schema: Schema) -> Schema:
    """Generated schema with the config's roles and levels where they agree."""
    cols = []
    for c in gen_schema.columns:
        if c.name in cfg_schema and cfg_schema.column(c.name).kind == c.kind:
            c = cfg_schema.column(c.name) if c.kind != "categorical" else c
        cols.append(c)
    return Schema(tuple(cols))


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    report = pipeline.run_experiment(cfg, args.seed, args.threads)
    pipeline.write_report(report, args.out, trace=args.trace)
    _print_summary(report)
    if args.strict and report.violations:
        print(f"strict mode: {report.violations} violation(s)", file=sys.stderr)
        return EXIT_VIOLATIONS
    return 0


def _print_summary(report):
    print(f"train={report.train.n} test={report.test.n} dropped={report.dropped_rows}")
    for name in report.warped_model.feature_names:
        print(
            f"  {name:>24s}  real {report.real_model.coefficient(name):+.4f} "
            f"(se {report.real_model.standard_error(name):.4f})  "
            f"warped {report.warped_model.coefficient(name):+.4f} "
            f"(se {report.warped_model.standard_error(name):.4f})"
        )
    if report.shift is not None:
        for c in report.shift.classes:
            p = "n/a" if c.p_value is None else f"{c.p_value:.3g}"
            print(f"  shift {c.pa_class}: mean diff {c.mean_diff:+.4f} (p {p}), "
                  f"lower {c.frac_lower:.2f}, higher {c.frac_higher:.2f}")
    print(f"  calibration: worst gap {report.calibration.worst_gap:.4f}, violations {report.calibration.violations}")


def cmd_warp(args) -> int:
    cfg = load_config(args.config)
    if cfg.pa is None:
        raise ConfigError("protected_attribute = none: nothing to warp")
    d = pipeline.load_dataset(cfg)
    train, test = split(d, cfg.split_fraction, args.seed)
    wm = fit_warp_models(cfg.dag, train, cfg.reference_class, cfg.quantile_mode,
                         seed=args.seed, per_group_variance=cfg.per_group_variance)
    args.out.mkdir(parents=True, exist_ok=True)
    warp_dataset(wm, train, include_target=True, threads=args.threads).to_csv(args.out / "warped_train.csv", args.trace)
    warp_dataset(wm, test, include_target=False, threads=args.threads).to_csv(args.out / "warped_test.csv", args.trace)
    (args.out / "warp_model.json").write_text(json.dumps(wm.to_dict(), indent=1, sort_keys=True) + "\n")
    print(f"warped {train.n} training and {test.n} test rows into {args.out}")
    return 0


def cmd_audit(args) -> int:
    cfg = load_config(args.config)
    base = cfg.model_schema
    extra = (Column("real_pred", "continuous", "ignore"), Column("warped_pred", "continuous", "ignore"))
    d = load_csv(args.predictions, Schema(base.columns + extra))
    target = base.target
    feats = Schema(tuple(c for c in base.columns if c.role not in ("target", "id", "ignore")), require_target=False)
    features = Dataset(feats, {c: d[c] for c in feats.names})
    calib = audit.calibration_report(d["warped_pred"], d[target], features,
                                     cfg.audit.epsilon, cfg.audit.depth, cfg.audit.min_support)
    out = {"calibration": calib.to_dict()}
    if cfg.pa is not None:
        shift = audit.prediction_shift_report(d["real_pred"], d["warped_pred"], d[cfg.pa], cfg.audit.k_top)
        out["shift"] = shift.to_dict()
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "audit.json").write_text(json.dumps(out, indent=1, sort_keys=True, default=_json) + "\n")
    print(f"calibration: {len(calib.entries)} subgroups, worst gap {calib.worst_gap:.4f}, "
          f"violations {calib.violations}")
    if args.strict and calib.violations:
        return EXIT_VIOLATIONS
    return 0


def _json(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(type(obj).__name__)


def cmd_predict(args) -> int:
    cfg = load_config(args.config)
    artifacts = pipeline.Artifacts.load(args.models)
    rows = load_csv(args.input, cfg.schema.without_target())
    warped, preds, treatments = pipeline.predict_new(artifacts, rows, threads=args.threads)
    args.out.mkdir(parents=True, exist_ok=True)
    extra = warped.provenance() if args.trace else {}
    extra.update({"extrapolated": warped.extrapolated, "warped_pred": preds, "treatment": treatments})
    write_csv(warped.data, args.out / "predictions_new.csv", extra)
    flagged = int(warped.extrapolated.sum())
    print(f"scored {rows.n} rows ({flagged} outside the training support) into {args.out / 'predictions_new.csv'}")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "run": cmd_run,
    "warp": cmd_warp,
    "audit": cmd_audit,
    "predict": cmd_predict,
    "validate-config": cmd_validate,
}


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](args)
    except FindWorldError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
