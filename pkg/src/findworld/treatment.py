"""Treatment functions mapping worthiness to treatment, and worthiness combiners.

Rules are normative configuration. Nothing here is learned from data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

RULE_KINDS = ("geometric", "arithmetic", "step", "piecewise_linear")


@dataclass(frozen=True)
class TreatmentRule:
    """Monotone map ``s`` from worthiness ``w`` to treatment ``t``.

    Use the constructors :meth:`geometric`, :meth:`arithmetic`, :meth:`step`
    and :meth:`piecewise_linear`. Construction checks the shape of the
    parameters; whether the map is actually nondecreasing is reported by
    :func:`check_monotone`.
    """

    kind: str
    k: float | None = None
    thresholds: tuple[float, ...] = ()
    levels: tuple[float, ...] = ()
    knots: tuple[tuple[float, float], ...] = ()
    description: str = ""

    def __post_init__(self):
        if self.kind not in RULE_KINDS:
            raise ValueError(f"unknown treatment rule kind {self.kind!r}; expected one of {RULE_KINDS}")
        if self.kind in ("geometric", "arithmetic"):
            if self.k is None or not np.isfinite(self.k):
                raise ValueError(f"{self.kind} rule needs a finite k")
        elif self.kind == "step":
            th = tuple(float(v) for v in self.thresholds)
            lv = tuple(float(v) for v in self.levels)
            if len(lv) != len(th) + 1:
                raise ValueError(f"step rule needs len(levels) == len(thresholds) + 1, got {len(lv)} and {len(th)}")
            if any(b <= a for a, b in zip(th, th[1:])):
                raise ValueError(f"step thresholds must be strictly ascending, got {th}")
            object.__setattr__(self, "thresholds", th)
            object.__setattr__(self, "levels", lv)
        else:
            kn = tuple((float(a), float(b)) for a, b in self.knots)
            if len(kn) < 2:
                raise ValueError("piecewise_linear rule needs at least two knots")
            xs = [a for a, _ in kn]
            if any(b <= a for a, b in zip(xs, xs[1:])):
                raise ValueError(f"piecewise_linear knot positions must be strictly ascending, got {xs}")
            ys = [b for _, b in kn]
            with np.errstate(over="ignore", divide="ignore"):
                slopes = np.diff(ys) / np.diff(xs)
            if not np.all(np.isfinite(slopes)):
                raise ValueError(f"piecewise_linear knots {kn} give a non-finite slope")
            object.__setattr__(self, "knots", kn)

    @classmethod
    def geometric(cls, k: float, description: str = "") -> "TreatmentRule":
        return cls("geometric", k=float(k), description=description)

    @classmethod
    def arithmetic(cls, k: float, description: str = "") -> "TreatmentRule":
        return cls("arithmetic", k=float(k), description=description)

    @classmethod
    def step(cls, thresholds: Sequence[float], levels: Sequence[float], description: str = "") -> "TreatmentRule":
        return cls("step", thresholds=tuple(thresholds), levels=tuple(levels), description=description)

    @classmethod
    def piecewise_linear(cls, knots: Sequence[tuple[float, float]], description: str = "") -> "TreatmentRule":
        return cls("piecewise_linear", knots=tuple(map(tuple, knots)), description=description)

    def breakpoints(self) -> list[float]:
        if self.kind == "step":
            return list(self.thresholds)
        if self.kind == "piecewise_linear":
            return [a for a, _ in self.knots]
        return []

    def to_dict(self):
        out = {"kind": self.kind, "description": self.description}
        if self.kind in ("geometric", "arithmetic"):
            out["k"] = self.k
        elif self.kind == "step":
            out.update(thresholds=list(self.thresholds), levels=list(self.levels))
        else:
            out["knots"] = [list(k) for k in self.knots]
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "TreatmentRule":
        kind = data.get("kind")
        desc = str(data.get("description", ""))
        if kind in ("geometric", "arithmetic"):
            if "k" not in data:
                raise ValueError(f"{kind} rule needs 'k'")
            return cls(kind, k=float(data["k"]), description=desc)
        if kind == "step":
            return cls.step(data.get("thresholds", ()), data.get("levels", ()), desc)
        if kind == "piecewise_linear":
            return cls.piecewise_linear(data.get("knots", ()), desc)
        raise ValueError(f"unknown treatment rule kind {kind!r}; expected one of {RULE_KINDS}")


def apply(rule: TreatmentRule, w):
    """Treatment ``t = s(w)`` for a scalar or an array of worthiness values.

    Step rules assign ``levels[i]`` on ``[thresholds[i-1], thresholds[i])``;
    piecewise-linear rules interpolate and stay flat beyond the outer knots.
    """
    arr = np.asarray(w, dtype=np.float64)
    if rule.kind == "geometric":
        out = rule.k * arr
    elif rule.kind == "arithmetic":
        out = np.full_like(arr, rule.k)
    elif rule.kind == "step":
        idx = np.searchsorted(np.asarray(rule.thresholds), arr, side="right")
        out = np.asarray(rule.levels)[idx]
    else:
        xs, ys = zip(*rule.knots)
        out = np.interp(arr, xs, ys)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class MonotonicityCheck:
    ok: bool
    strict: bool
    violation: str | None = None


def check_monotone(rule: TreatmentRule, lo: float = -1.0, hi: float = 2.0, grid: int = 2001) -> MonotonicityCheck:
    """Verify that ``rule`` is nondecreasing and report whether it is strict.

    The rule is evaluated on a dense grid over ``[lo, hi]`` plus its
    breakpoints (and points just either side of them). Plateaus are allowed
    but make the rule non-strict.
    """
    if rule.kind == "geometric":
        if rule.k < 0:
            return MonotonicityCheck(False, False, f"geometric rule with k={rule.k} is decreasing")
        return MonotonicityCheck(True, rule.k > 0)
    if rule.kind == "arithmetic":
        return MonotonicityCheck(True, False)
    pts = set(np.linspace(lo, hi, grid).tolist())
    for b in rule.breakpoints():
        pts.update((b, np.nextafter(b, -np.inf), np.nextafter(b, np.inf), b - 1.0, b + 1.0))
    ws = np.array(sorted(pts))
    ts = apply(rule, ws)
    steps = np.diff(ts)
    if np.any(steps < 0):
        i = int(np.argmax(steps < 0))
        return MonotonicityCheck(
            False, False, f"decreasing: s({ws[i]:.6g}) = {ts[i]:.6g} > s({ws[i + 1]:.6g}) = {ts[i + 1]:.6g}"
        )
    if rule.kind == "piecewise_linear":
        # strict on the knot range; flat extrapolation outside it is not audited
        ys = [b for _, b in rule.knots]
        return MonotonicityCheck(True, all(b > a for a, b in zip(ys, ys[1:])))
    return MonotonicityCheck(True, False)


COMBINERS = ("latent_only", "weighted", "custom")


@dataclass(frozen=True)
class Worthiness:
    """How worthiness ``w = f(v, z)`` is composed.

    ``latent_only`` uses the model estimate ``z`` alone. ``weighted`` uses
    ``alpha * v + (1 - alpha) * z``. ``custom`` looks up an affine map per
    observable category, ``w = scale[v] * z + offset[v]``; the table is taken
    as given.
    """

    combiner: str = "latent_only"
    observable: str | None = None
    alpha: float | None = None
    table: Mapping[str, tuple[float, float]] = field(default_factory=dict)
    description: str = ""

    def __post_init__(self):
        if self.combiner not in COMBINERS:
            raise ValueError(f"unknown worthiness combiner {self.combiner!r}; expected one of {COMBINERS}")
        if self.combiner != "latent_only" and not self.observable:
            raise ValueError(f"{self.combiner} worthiness needs an observable column")
        if self.combiner == "weighted" and (self.alpha is None or not 0.0 <= self.alpha <= 1.0):
            raise ValueError("weighted worthiness needs alpha in [0, 1]")
        if self.combiner == "custom" and not self.table:
            raise ValueError("custom worthiness needs a non-empty table")

    def combine(self, latent, observable=None):
        z = np.asarray(latent, dtype=np.float64)
        if self.combiner == "latent_only":
            return z
        if observable is None:
            raise ValueError(f"{self.combiner} worthiness needs observable values for {self.observable!r}")
        v = np.asarray(observable)
        if self.combiner == "weighted":
            return self.alpha * v.astype(np.float64) + (1.0 - self.alpha) * z
        keys = v.astype(str)
        missing = sorted(set(keys.tolist()) - set(self.table))
        if missing:
            raise ValueError(f"custom worthiness table has no entry for {missing}")
        scale = np.array([self.table[k][0] for k in keys])
        offset = np.array([self.table[k][1] for k in keys])
        return scale * z + offset

    def to_dict(self):
        out = {"combiner": self.combiner, "description": self.description}
        if self.observable:
            out["observable"] = self.observable
        if self.alpha is not None:
            out["alpha"] = self.alpha
        if self.table:
            out["table"] = {k: list(v) for k, v in self.table.items()}
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "Worthiness":
        table = {str(k): (float(v[0]), float(v[1])) for k, v in dict(data.get("table", {})).items()}
        alpha = data.get("alpha")
        return cls(
            combiner=data.get("combiner", "latent_only"),
            observable=data.get("observable"),
            alpha=None if alpha is None else float(alpha),
            table=table,
            description=str(data.get("description", "")),
        )
