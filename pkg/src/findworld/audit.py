"""Calibration and prediction-shift audits.

Calibration is checked on subgroups defined by conjunctions of up to
``depth`` single-feature predicates: equality for binary/categorical
features and empirical quartile bins for numeric ones.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .data import Dataset
from .ttest import ttest_1samp

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CalibrationEntry:
    predicate: str
    n: int
    mean_predicted: float
    mean_observed: float
    gap: float

    @property
    def signed_gap(self) -> float:
        return self.mean_predicted - self.mean_observed


@dataclass(frozen=True)
class CalibrationReport:
    epsilon: float
    depth: int
    min_support: int
    entries: tuple[CalibrationEntry, ...]
    warnings: tuple[str, ...] = ()

    @property
    def worst_gap(self) -> float:
        return max((e.gap for e in self.entries), default=0.0)

    @property
    def violations(self) -> int:
        return sum(e.gap > self.epsilon for e in self.entries)

    def to_dict(self):
        return {
            "epsilon": self.epsilon,
            "depth": self.depth,
            "min_support": self.min_support,
            "worst_gap": self.worst_gap,
            "violations": self.violations,
            "subgroups": len(self.entries),
            "warnings": list(self.warnings),
        }


def _fmt(x: float) -> str:
    return format(float(x), ".6g")


def _atoms(name: str, values: np.ndarray, numeric: bool):
    """Single-feature predicates as (label, mask) pairs."""
    if not numeric:
        return [(f"{name} == {v}", values == v) for v in sorted(set(values.tolist()))]
    vals = values.astype(np.float64)
    edges = np.unique(np.quantile(vals, [0.25, 0.5, 0.75]))
    out = []
    lo = None
    for hi in [*edges, None]:
        if lo is None and hi is None:
            out.append((f"{name} any", np.ones(len(vals), dtype=bool)))
        elif lo is None:
            out.append((f"{name} <= {_fmt(hi)}", vals <= hi))
        elif hi is None:
            out.append((f"{name} > {_fmt(lo)}", vals > lo))
        else:
            out.append((f"{_fmt(lo)} < {name} <= {_fmt(hi)}", (vals > lo) & (vals <= hi)))
        lo = hi
    return [(label, mask) for label, mask in out if mask.any()]


def _feature_columns(features) -> dict[str, tuple[np.ndarray, bool]]:
    if isinstance(features, Dataset):
        return {
            c.name: (features[c.name], c.is_numeric)
            for c in features.schema.columns
            if c.role not in ("target", "id", "ignore")
        }
    out = {}
    for name, values in dict(features).items():
        arr = np.asarray(values)
        out[name] = (arr, arr.dtype.kind in "fiu" and not set(np.unique(arr).tolist()) <= {0, 1})
    return out


def calibration_report(
    preds,
    outcomes,
    features: Dataset | Mapping[str, Sequence],
    epsilon: float = 0.05,
    depth: int = 2,
    min_support: int = 30,
) -> CalibrationReport:
    """Calibration gaps on every subgroup of up to ``depth`` predicates.

    ``features`` is a dataset (target, id and ignore columns are skipped) or
    a mapping of column arrays. Depth 0 is the single global group. Entries
    are sorted by predicate text.
    """
    p = np.asarray(preds, dtype=np.float64)
    y = np.asarray(outcomes, dtype=np.float64)
    if p.shape != y.shape or p.ndim != 1:
        raise ValueError(f"predictions and outcomes must be aligned vectors, got {p.shape} and {y.shape}")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if depth < 0:
        raise ValueError("depth must be non-negative")
    cols = _feature_columns(features)
    for name, (values, _) in cols.items():
        if len(values) != len(p):
            raise ValueError(f"feature {name!r} has {len(values)} rows, expected {len(p)}")
    atoms = {name: _atoms(name, values, numeric) for name, (values, numeric) in cols.items()}

    entries = []
    for k in range(0, min(depth, len(atoms)) + 1):
        for names in itertools.combinations(sorted(atoms), k):
            for combo in itertools.product(*(atoms[nm] for nm in names)):
                mask = np.ones(len(p), dtype=bool)
                for _, m in combo:
                    mask &= m
                n = int(mask.sum())
                if n < max(min_support, 1):
                    continue
                mp, mo = float(p[mask].mean()), float(y[mask].mean())
                label = " & ".join(lbl for lbl, _ in combo) or "(all)"
                entries.append(CalibrationEntry(label, n, mp, mo, abs(mp - mo)))
    entries.sort(key=lambda e: e.predicate)
    warnings = []
    if not entries:
        msg = f"no subgroup reaches min_support={min_support}"
        log.warning(msg)
        warnings.append(msg)
    return CalibrationReport(float(epsilon), int(depth), int(min_support), tuple(entries), tuple(warnings))


@dataclass(frozen=True)
class ClassShift:
    pa_class: str
    n: int
    mean_diff: float
    t_statistic: float | None
    p_value: float | None
    frac_lower: float
    frac_higher: float


@dataclass(frozen=True)
class ShiftReport:
    """Per-class summary of ``diff = warped - real`` plus extreme rows."""

    classes: tuple[ClassShift, ...]
    top_shifted: tuple[dict, ...]
    bottom_shifted: tuple[dict, ...]
    diff: np.ndarray = field(repr=False, default=None)

    def by_class(self, name) -> ClassShift:
        for c in self.classes:
            if c.pa_class == str(name):
                return c
        raise KeyError(name)

    def to_dict(self):
        return {
            "classes": [vars(c) for c in self.classes],
            "top_shifted": list(self.top_shifted),
            "bottom_shifted": list(self.bottom_shifted),
        }


def prediction_shift_report(
    real_preds,
    warped_preds,
    pa_values,
    k_top: int = 5,
    rows: Mapping[str, Sequence] | None = None,
) -> ShiftReport:
    """Compare warped-world and real-world predictions per PA class.

    ``top_shifted`` lists the ``k_top`` most positive diffs and
    ``bottom_shifted`` the ``k_top`` most negative, each as a dict with the
    row position, class, both predictions, the diff and any ``rows`` columns.
    Classes with fewer than two rows get no t-test.
    """
    real = np.asarray(real_preds, dtype=np.float64)
    warped = np.asarray(warped_preds, dtype=np.float64)
    pa = np.asarray(pa_values).astype(str)
    if not (real.shape == warped.shape == pa.shape) or real.ndim != 1:
        raise ValueError("real, warped and pa vectors must be aligned")
    diff = warped - real
    classes = []
    for cls in sorted(set(pa.tolist())):
        d = diff[pa == cls]
        t = p = None
        if len(d) >= 2:
            res = ttest_1samp(d)
            t, p = res.statistic, res.p_value
        classes.append(
            ClassShift(cls, len(d), float(d.mean()), t, p, float(np.mean(d < 0)), float(np.mean(d > 0)))
        )
    extra = {k: np.asarray(v) for k, v in (rows or {}).items()}

    def describe(i):
        rec = {"row": int(i), "pa": pa[i], "real": float(real[i]), "warped": float(warped[i]), "diff": float(diff[i])}
        rec.update({k: v[i].item() for k, v in extra.items()})
        return rec

    order = np.argsort(diff, kind="stable")
    k = min(k_top, len(diff))
    bottom = tuple(describe(i) for i in order[:k])
    top = tuple(describe(i) for i in order[::-1][:k])
    return ShiftReport(tuple(classes), top, bottom, diff)


@dataclass(frozen=True)
class ConsistencyReport:
    groups_checked: int
    violations: tuple[dict, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


def necessary_condition_check(
    warped,
    predictions=None,
    *,
    across_pa: bool = False,
    tolerance: float = 0.0,
) -> ConsistencyReport:
    """Check that PA-neutrally equal rows get equal warped rows and predictions.

    Within each PA class, rows that agree on every non-warped column and on
    every per-node ``u`` must receive identical warped values and (if given)
    identical predictions. With ``across_pa`` rows are instead grouped by
    all original columns except the PA, and predictions must agree across
    classes within ``tolerance``.
    """
    data, original = warped.data, warped.original
    nodes = list(warped.trace)
    schema = original.schema
    pa = schema.pa
    preds = None if predictions is None else np.asarray(predictions, dtype=np.float64)
    if across_pa:
        key_cols = [c for c in schema.names if c != pa]
    else:
        key_cols = [c for c in schema.names if c not in nodes]
    keys = [tuple(original[c][i].item() for c in key_cols) for i in range(original.n)]
    if not across_pa:
        for node in nodes:
            u = warped.trace[node].u
            orig = original[node]
            # unwarped rows carry no u; their value passes through unchanged
            keys = [k + ((orig[i].item(),) if np.isnan(u[i]) else (repr(float(u[i])),)) for i, k in enumerate(keys)]
    groups: dict[tuple, list[int]] = {}
    for i, k in enumerate(keys):
        groups.setdefault(k, []).append(i)

    violations = []
    checked = 0
    for members in groups.values():
        if len(members) < 2:
            continue
        checked += 1
        first = members[0]
        for j in members[1:]:
            if not across_pa:
                bad = [n for n in nodes if data[n][j] != data[n][first]]
                if bad:
                    violations.append({"rows": [first, j], "reason": f"warped values differ on {bad}"})
                    continue
            if preds is not None and abs(preds[j] - preds[first]) > tolerance:
                violations.append(
                    {"rows": [first, j], "reason": f"predictions differ: {preds[first]:.6g} vs {preds[j]:.6g}"}
                )
    return ConsistencyReport(checked, tuple(violations))


@dataclass(frozen=True)
class DiscriminationProbe:
    feature: str
    discriminative: bool
    max_abs_change: float
    pairs: int


def discrimination_probe(predict, d: Dataset, feature: str, tolerance: float = 0.0) -> DiscriminationProbe:
    """Descriptive check whether a model is statistically discriminative w.r.t. ``feature``.

    Every row of ``d`` is paired with copies differing only in ``feature``
    (every other observed value of it); ``predict`` maps a dataset to
    predictions. The model is flagged when any pair's predictions differ by
    more than ``tolerance``.
    """
    base = np.asarray(predict(d), dtype=np.float64)
    values = np.unique(d[feature])
    worst, pairs = 0.0, 0
    for v in values:
        other = d.replace({feature: np.full(d.n, v, dtype=d[feature].dtype)})
        changed = d[feature] != v
        if not changed.any():
            continue
        delta = np.abs(np.asarray(predict(other), dtype=np.float64) - base)[changed]
        worst = max(worst, float(delta.max()))
        pairs += int(changed.sum())
    return DiscriminationProbe(feature, worst > tolerance, worst, pairs)
