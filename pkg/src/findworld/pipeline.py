"""End-to-end experiment: warp, train in both worlds, audit, treat.

Stages run in sequence; errors are re-raised as :class:`StageError` labelled
with the failing stage. Every random choice derives from the run seed, and
the report is bit-identical across thread counts.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np
from scipy import stats

from . import audit, glm
from .config import RunConfig
from .dag import identifiability_note
from .data import Dataset, FeatureEncoder, Schema, format_value, load_csv, recode_column, split
from .errors import FindWorldError
from .treatment import TreatmentRule, Worthiness, apply
from .warp import WarpedDataset, WarpModel, fit_warp_models, warp_dataset

log = logging.getLogger(__name__)

TARGET_FAMILY = {"binary": "bernoulli", "count": "poisson", "continuous": "gaussian"}


class StageError(FindWorldError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


class _stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        log.info("stage: %s", self.name)

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, StageError) and isinstance(exc, (FindWorldError, ValueError, OSError)):
            raise StageError(self.name, exc) from exc
        return False


@dataclass(frozen=True, eq=False)
class Artifacts:
    """Everything needed to score new individuals."""

    schema: Schema
    features: tuple[str, ...]
    encoder: FeatureEncoder
    real_model: glm.GlmFit
    warped_model: glm.GlmFit
    warp_model: WarpModel
    worthiness: Worthiness
    treatment: TreatmentRule
    pa_groups: Mapping[str, Any] | None = None

    def to_dict(self):
        return {
            "schema": self.schema.to_dict(),
            "features": list(self.features),
            "encoder": self.encoder.to_dict(),
            "real_model": self.real_model.to_dict(),
            "warped_model": self.warped_model.to_dict(),
            "warp_model": self.warp_model.to_dict(),
            "worthiness": self.worthiness.to_dict(),
            "treatment": self.treatment.to_dict(),
            "pa_groups": self.pa_groups,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            schema=Schema.from_dict(data["schema"]),
            features=tuple(data["features"]),
            encoder=FeatureEncoder.from_dict(data["encoder"]),
            real_model=glm.GlmFit.from_dict(data["real_model"]),
            warped_model=glm.GlmFit.from_dict(data["warped_model"]),
            warp_model=WarpModel.from_dict(data["warp_model"]),
            worthiness=Worthiness.from_dict(data["worthiness"]),
            treatment=TreatmentRule.from_dict(data["treatment"]),
            pa_groups=data.get("pa_groups"),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True, eq=False)
class ExperimentReport:
    config: RunConfig
    seed: int
    artifacts: Artifacts
    train: Dataset
    test: Dataset
    warped_train: WarpedDataset
    warped_test: WarpedDataset
    real_preds: np.ndarray
    warped_preds: np.ndarray
    worthiness: np.ndarray
    treatments: np.ndarray
    shift: audit.ShiftReport | None
    calibration: audit.CalibrationReport
    consistency: audit.ConsistencyReport
    probes: tuple[audit.DiscriminationProbe, ...]
    find_recovery: Mapping[str, Any] | None = None
    dropped_rows: int = 0
    notes: tuple[str, ...] = field(default=())

    @property
    def real_model(self):
        return self.artifacts.real_model

    @property
    def warped_model(self):
        return self.artifacts.warped_model

    @property
    def warp_model(self):
        return self.artifacts.warp_model

    @property
    def violations(self) -> int:
        return self.calibration.violations + len(self.consistency.violations)

    def manifest(self) -> dict:
        cfg = self.config
        wm = self.warp_model
        return {
            "config_sha256": cfg.digest,
            "seed": self.seed,
            "normative": cfg.normative,
            "rows": {
                "train": self.train.n,
                "test": self.test.n,
                "dropped": self.dropped_rows,
                "test_extrapolated": int(self.warped_test.extrapolated.sum()),
                "u_clamped_train": {n: int(t.clamped.sum()) for n, t in self.warped_train.trace.items()},
                "u_clamped_test": {n: int(t.clamped.sum()) for n, t in self.warped_test.trace.items()},
            },
            "features": list(self.artifacts.features),
            "real_model": self.real_model.to_dict(),
            "warped_model": self.warped_model.to_dict(),
            "warp": {"order": list(wm.order), "reference_class": wm.reference_class,
                     "quantile_mode": wm.quantile_mode, "per_group_variance": wm.per_group_variance},
            "shift": None if self.shift is None else self.shift.to_dict()["classes"],
            "calibration": self.calibration.to_dict(),
            "consistency": {"groups_checked": self.consistency.groups_checked,
                            "violations": list(self.consistency.violations)},
            "discrimination_probes": [vars(p) for p in self.probes],
            "find_recovery": self.find_recovery,
            "violations": self.violations,
            "notes": list(self.notes),
        }


def load_dataset(cfg: RunConfig, path=None, *, require_target=True) -> Dataset:
    schema = cfg.schema if require_target else cfg.schema.without_target()
    d = load_csv(path or cfg.data_path, schema)
    if cfg.pa is not None and cfg.pa_groups:
        d = recode_column(d, cfg.pa, cfg.pa_groups)
    return d


def _target_family(schema: Schema) -> str:
    return TARGET_FAMILY[schema.column(schema.target).kind]


def _worthiness(w: Worthiness, latent, d: Dataset):
    obs = d[w.observable] if w.observable else None
    return np.asarray(w.combine(latent, obs), dtype=np.float64)


def run_experiment(cfg: RunConfig, seed: int = 0, threads: int = 1) -> ExperimentReport:
    """Run the full experiment described by ``cfg``."""
    if cfg.data_path is None:
        raise StageError("load", ValueError("config has no data.path"))
    with _stage("load"):
        d = load_dataset(cfg)
    with _stage("split"):
        train, test = split(d, cfg.split_fraction, seed)
    family = _target_family(d.schema)
    target = d.schema.target
    with _stage("real-world model"):
        enc = FeatureEncoder.fit(train, cfg.features)
        real_model = glm.fit(family, enc.transform(train), train[target], feature_names=enc.names)
        _require_converged(real_model, "real-world model")
    with _stage("warp"):
        wm = fit_warp_models(cfg.dag, train, cfg.reference_class, cfg.quantile_mode,
                             seed=seed, per_group_variance=cfg.per_group_variance)
        w_train = warp_dataset(wm, train, include_target=True, threads=threads)
        # the target is warped last, so test features match prediction mode
        w_test = warp_dataset(wm, test, include_target=True, threads=threads)
    with _stage("warped-world model"):
        warped_model = glm.fit(family, enc.transform(w_train.data), w_train.data[target], feature_names=enc.names)
        _require_converged(warped_model, "warped-world model")
    with _stage("predict"):
        real_preds = glm.predict_mean(real_model, enc.transform(test))
        warped_preds = glm.predict_mean(warped_model, enc.transform(w_test.data))
        worth = _worthiness(cfg.worthiness, warped_preds, w_test.data)
        treatments = np.asarray(apply(cfg.treatment, worth), dtype=np.float64).reshape(-1)
    with _stage("audit"):
        shift = None
        if cfg.pa is not None:
            rows = {name: test[name] for name in cfg.features}
            rows.update({f"{n}_warped": w_test.data[n] for n in wm.order if n != target})
            shift = audit.prediction_shift_report(real_preds, warped_preds, test[cfg.pa], cfg.audit.k_top, rows)
        calib_features = {c.name: w_test.data[c.name] for c in w_test.data.schema.columns
                          if c.role not in ("target", "id", "ignore")}
        calib = audit.calibration_report(
            warped_preds, w_test.data[target], _typed(w_test.data, calib_features),
            cfg.audit.epsilon, cfg.audit.depth, cfg.audit.min_support,
        )
        consistency = audit.necessary_condition_check(w_test, warped_preds)

        def scorer(model):
            return lambda ds: glm.predict_mean(model, enc.transform(ds))

        probes = tuple(audit.discrimination_probe(scorer(warped_model), w_test.data, f) for f in cfg.features)
    find = None
    if cfg.find_path is not None:
        with _stage("find recovery"):
            find = _find_recovery(cfg, d, train, test, w_train, w_test, warped_preds)
    notes = []
    if cfg.pa is not None:
        notes.append(identifiability_note(wm.order))
    else:
        notes.append("protected_attribute = none: no warping; warped-world model equals the real-world model")
    artifacts = Artifacts(
        d.schema, tuple(cfg.features), enc, real_model, warped_model, wm,
        cfg.worthiness, cfg.treatment, dict(cfg.pa_groups) if cfg.pa_groups else None,
    )
    return ExperimentReport(
        cfg, seed, artifacts, train, test, w_train, w_test, real_preds, warped_preds, worth, treatments,
        shift, calib, consistency, probes, find, d.dropped, tuple(notes),
    )


def _typed(d: Dataset, cols):
    """Restrict a dataset to ``cols`` keeping column kinds for the calibration audit."""
    schema = Schema(tuple(d.schema.column(c) for c in cols), require_target=False)
    return Dataset(schema, {c: d[c] for c in cols})


def _require_converged(fit_: glm.GlmFit, what: str):
    if not fit_.converged:
        raise ValueError(f"{what} did not converge: {'; '.join(fit_.diagnostics)}")


def _read_psi(path, n_expected):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if "psi" not in (reader.fieldnames or ()):
            return None
        psi = np.array([float(r["psi"]) for r in reader])
    return psi if len(psi) == n_expected else None


def _find_recovery(cfg, d, train, test, w_train, w_test, warped_preds):
    find = load_csv(cfg.find_path, cfg.model_schema if cfg.pa_groups else cfg.schema)
    pos = {int(i): k for k, i in enumerate(find.index)}
    missing = [int(i) for i in d.index if int(i) not in pos]
    if missing:
        raise ValueError(f"FiND file lacks {len(missing)} data rows (first: file row {missing[0]})")
    out = {"nodes": {}}
    for part, w in (("train", w_train), ("test", w_test)):
        rows = np.array([pos[int(i)] for i in w.data.index])
        for node in w.trace:
            if part == "test" and node == cfg.schema.target:
                continue
            warped = w.data[node].astype(np.float64)
            truth = find[node][rows].astype(np.float64)
            rho = stats.spearmanr(warped, truth).statistic if np.ptp(warped) > 0 and np.ptp(truth) > 0 else float("nan")
            out["nodes"].setdefault(node, {})[part] = {
                "mae": float(np.mean(np.abs(warped - truth))),
                "spearman": float(rho),
            }
    psi = _read_psi(cfg.find_path, find.n)
    if psi is not None:
        rows = np.array([pos[int(i)] for i in test.index])
        out["psi_mae"] = float(np.mean(np.abs(warped_preds - psi[rows])))
    return out


def predict_new(artifacts: Artifacts, rows: Dataset, threads: int = 1):
    """Warp, score and treat new individuals (no target needed).

    Returns
    -------
    tuple
        ``(warped, predictions, treatments)`` where ``warped`` is the
        :class:`WarpedDataset` (its ``extrapolated`` flags mark rows whose
        covariates leave the training support).
    """
    d = rows
    wm = artifacts.warp_model
    if wm.pa is not None and artifacts.pa_groups and d.schema.column(wm.pa).levels != tuple(artifacts.pa_groups):
        d = recode_column(d, wm.pa, artifacts.pa_groups)
    warped = warp_dataset(wm, d, include_target=False, threads=threads)
    preds = glm.predict_mean(artifacts.warped_model, artifacts.encoder.transform(warped.data))
    worth = _worthiness(artifacts.worthiness, preds, warped.data)
    t = np.asarray(apply(artifacts.treatment, worth), dtype=np.float64).reshape(-1)
    return warped, preds, t


def _write_table(path: Path, header, rows):
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return "" if v is None else str(v)


def write_report(report: ExperimentReport, out, trace: bool = False) -> list[Path]:
    """Write manifest.json, the four CSV tables and models.json to ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    manifest = out / "manifest.json"
    manifest.write_text(json.dumps(report.manifest(), indent=1, sort_keys=True, default=_json_default) + "\n",
                        encoding="utf-8")
    written.append(manifest)

    test, wt = report.test, report.warped_test.data
    schema = wt.schema
    preds = out / "predictions.csv"
    header = ["row", *schema.names, "real_pred", "warped_pred", "diff"]
    rows = []
    for i in range(test.n):
        rows.append([str(int(test.index[i]))]
                    + [format_value(c, wt[c.name][i]) for c in schema.columns]
                    + [_cell(report.real_preds[i]), _cell(report.warped_preds[i]),
                       _cell(report.warped_preds[i] - report.real_preds[i])])
    _write_table(preds, header, rows)
    written.append(preds)

    shifts = out / "shifts.csv"
    if report.shift is not None:
        listing = [("bottom", r) for r in report.shift.bottom_shifted] + [("top", r) for r in report.shift.top_shifted]
        keys = list(listing[0][1]) if listing else ["row", "pa", "real", "warped", "diff"]
        _write_table(shifts, ["rank", *keys], [[tag, *(_cell(r[k]) for k in keys)] for tag, r in listing])
    else:
        _write_table(shifts, ["rank", "row", "pa", "real", "warped", "diff"], [])
    written.append(shifts)

    calib = out / "calibration.csv"
    _write_table(calib, ["predicate", "n", "mean_predicted", "mean_observed", "gap", "violation"],
                 [[e.predicate, e.n, _cell(e.mean_predicted), _cell(e.mean_observed), _cell(e.gap),
                   int(e.gap > report.calibration.epsilon)] for e in report.calibration.entries])
    written.append(calib)

    treat = out / "treatments.csv"
    pa = report.config.pa
    _write_table(treat, ["row", "pa", "worthiness", "treatment"],
                 [[str(int(test.index[i])), test[pa][i] if pa else "",
                   _cell(report.worthiness[i]), _cell(report.treatments[i])] for i in range(test.n)])
    written.append(treat)

    models = out / "models.json"
    report.artifacts.save(models)
    written.append(models)
    if trace:
        for name, wd in (("warped_train.csv", report.warped_train), ("warped_test.csv", report.warped_test)):
            wd.to_csv(out / name, trace=True)
            written.append(out / name)
    return written


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")
