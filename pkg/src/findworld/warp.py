"""Rank-preserving warping of PA descendants towards the reference group.

For every descendant of the protected attribute (in topological order) two
GLMs are fitted on the node's non-PA parents: one on the reference PA class
and one per non-reference class. A non-reference row is warped by locating
its value in the source model's conditional distribution at its *original*
parent values (position ``u``) and reading off the ``u``-quantile of the
reference model at its *warped* parent values. Reference rows are copied
unchanged.

Discrete values get a mid-quantile position ``F(v-1) + pmf(v)/2`` by
default, or a seeded draw from ``(F(v-1), F(v))`` in randomized mode.
Gaussian nodes share one pooled residual variance unless
``per_group_variance`` is set, in which case the map also rescales the
residual.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import stats

from . import glm
from .dag import CausalDag, pa_descendants
from .data import Dataset, FeatureEncoder, write_csv
from .errors import GlmError, RankDeficientError, WarpError
from .streams import uniforms

log = logging.getLogger(__name__)

U_CLAMP = 1e-12
QUANTILE_MODES = ("mid", "randomized")
KIND_FAMILY = {"binary": "bernoulli", "count": "poisson", "continuous": "gaussian"}


@dataclass(frozen=True, eq=False)
class NodeModel:
    """Warping models for one PA descendant."""

    node: str
    family: str
    parents: tuple[str, ...]
    encoder: FeatureEncoder
    reference_fit: glm.GlmFit
    source_fits: Mapping[str, glm.GlmFit]
    # per PA class: column -> (min, max) over training rows, numeric columns only
    support: Mapping[str, Mapping[str, tuple[float, float]]] = field(default_factory=dict)

    @property
    def source_fit(self) -> glm.GlmFit:
        """The single non-reference fit (binary PA)."""
        if len(self.source_fits) != 1:
            raise WarpError(f"node {self.node!r} has {len(self.source_fits)} source fits")
        return next(iter(self.source_fits.values()))

    def to_dict(self):
        return {
            "family": self.family,
            "parents": list(self.parents),
            "encoder": self.encoder.to_dict(),
            "reference_fit": self.reference_fit.to_dict(),
            "source_fits": {k: v.to_dict() for k, v in self.source_fits.items()},
            "support": {k: {c: list(r) for c, r in v.items()} for k, v in self.support.items()},
        }

    @classmethod
    def from_dict(cls, node, data):
        return cls(
            node=node,
            family=data["family"],
            parents=tuple(data["parents"]),
            encoder=FeatureEncoder.from_dict(data["encoder"]),
            reference_fit=glm.GlmFit.from_dict(data["reference_fit"]),
            source_fits={k: glm.GlmFit.from_dict(v) for k, v in data["source_fits"].items()},
            support={k: {c: tuple(r) for c, r in v.items()} for k, v in data.get("support", {}).items()},
        )


@dataclass(frozen=True, eq=False)
class WarpModel:
    """Fitted warping function from the real world to the warped world."""

    pa: str | None
    reference_class: str | None
    classes: tuple[str, ...]
    order: tuple[str, ...]
    nodes: Mapping[str, NodeModel]
    quantile_mode: str = "mid"
    seed: int = 0
    per_group_variance: bool = False
    target: str | None = None

    def to_dict(self):
        return {
            "pa": self.pa,
            "target": self.target,
            "reference_class": self.reference_class,
            "classes": list(self.classes),
            "order": list(self.order),
            "quantile_mode": self.quantile_mode,
            "seed": self.seed,
            "per_group_variance": self.per_group_variance,
            "nodes": {n: self.nodes[n].to_dict() for n in self.order},
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            pa=data["pa"],
            reference_class=data["reference_class"],
            classes=tuple(data["classes"]),
            order=tuple(data["order"]),
            nodes={n: NodeModel.from_dict(n, v) for n, v in data["nodes"].items()},
            quantile_mode=data["quantile_mode"],
            seed=int(data["seed"]),
            per_group_variance=bool(data["per_group_variance"]),
            target=data.get("target"),
        )


def node_family(dag: CausalDag, d: Dataset, node: str) -> str:
    kind = d.schema.column(node).kind
    expected = KIND_FAMILY.get(kind)
    fam = dag.families.get(node) or expected
    if fam is None:
        raise WarpError(f"node {node!r}: {kind} columns cannot be warped (no GLM family)")
    if fam != expected:
        raise WarpError(f"node {node!r}: family {fam!r} does not match column kind {kind!r} (expected {expected!r})")
    return fam


def _support(d: Dataset, mask, columns):
    out = {}
    for c in columns:
        if d.schema.column(c).is_numeric:
            vals = d[c][mask]
            out[c] = (float(vals.min()), float(vals.max()))
    return out


def fit_warp_models(
    dag: CausalDag,
    train: Dataset,
    reference_class: str,
    quantile_mode: str = "mid",
    *,
    seed: int = 0,
    per_group_variance: bool = False,
) -> WarpModel:
    """Fit reference and source GLMs for every PA descendant.

    Raises
    ------
    WarpError
        Unknown reference class, a PA class missing from ``train``, a
        subgroup with fewer than ``p + 2`` rows, a rank-deficient subgroup
        design or a non-converged fit. Messages name node and subgroup.
    """
    if quantile_mode not in QUANTILE_MODES:
        raise WarpError(f"unknown quantile mode {quantile_mode!r}; expected one of {QUANTILE_MODES}")
    pa = dag.pa
    if pa is None:
        return WarpModel(None, None, (), (), {}, quantile_mode, seed, per_group_variance, dag.target)
    pa_values = train[pa].astype(str)
    classes = tuple(sorted(set(pa_values.tolist())))
    reference_class = str(reference_class)
    if reference_class not in classes:
        raise WarpError(f"reference class {reference_class!r} not found in column {pa!r} (classes: {list(classes)})")
    others = tuple(c for c in classes if c != reference_class)
    if not others:
        raise WarpError(f"training data holds only the reference class {reference_class!r}")

    nodes = {}
    order = tuple(pa_descendants(dag))
    for node in order:
        family = node_family(dag, train, node)
        parents = tuple(p for p in dag.ordered_parents(node) if p != pa)
        encoder = FeatureEncoder.fit(train, parents)
        X = encoder.transform(train)
        y = train[node].astype(np.float64)
        fits, support = {}, {}
        for cls in (reference_class, *others):
            mask = pa_values == cls
            n_cls = int(mask.sum())
            need = X.shape[1] + 2
            if n_cls < need:
                raise WarpError(
                    f"node {node!r}: subgroup {pa}={cls!r} has {n_cls} rows, needs at least {need} "
                    f"for {X.shape[1]} parent feature(s)"
                )
            try:
                f = glm.fit(family, X[mask], y[mask], feature_names=encoder.names)
            except RankDeficientError as exc:
                raise WarpError(f"node {node!r}, subgroup {pa}={cls!r}: {exc}") from exc
            except GlmError as exc:
                raise WarpError(f"node {node!r}, subgroup {pa}={cls!r}: {exc}") from exc
            if not f.converged:
                raise WarpError(
                    f"node {node!r}, subgroup {pa}={cls!r}: {family} fit did not converge "
                    f"({'; '.join(f.diagnostics) or 'no diagnostics'})"
                )
            fits[cls] = f
            support[cls] = _support(train, mask, (*parents, node))
        if family == "gaussian" and not per_group_variance:
            fits = _pool_dispersion(fits, train, pa_values, X, y)
        ref = fits.pop(reference_class)
        nodes[node] = NodeModel(node, family, parents, encoder, ref, fits, support)
        log.debug("warp models for %s fitted (%s, parents %s)", node, family, list(parents))
    return WarpModel(pa, reference_class, classes, order, nodes, quantile_mode, seed, per_group_variance, dag.target)


def _pool_dispersion(fits, train, pa_values, X, y):
    rss, dof = 0.0, 0
    for cls, f in fits.items():
        mask = pa_values == cls
        resid = y[mask] - glm.predict_mean(f, X[mask])
        rss += float(resid @ resid)
        dof += int(mask.sum()) - len(f.coefficients)
    pooled = rss / dof if dof > 0 else 0.0
    return {cls: f.with_dispersion(pooled) for cls, f in fits.items()}


def _positions(family, mean, disp, values, mode, noise):
    """Conditional CDF position u of each value (before clamping)."""
    if family == "gaussian":
        sd = np.sqrt(disp)
        return stats.norm.cdf((values - mean) / sd) if sd > 0 else np.full(len(values), 0.5)
    lower = glm.distribution_cdf(family, mean, values - 1)
    mass = glm.distribution_pmf(family, mean, values)
    if mode == "mid":
        return lower + 0.5 * mass
    return lower + noise * mass


def warp_values(family, mean_src, mean_ref, disp_src, disp_ref, values, mode="mid", noise=None):
    """Vectorised core of :func:`warp_value`.

    Returns ``(warped, u, clamped)`` arrays.
    """
    values = np.asarray(values, dtype=np.float64)
    mean_src = np.broadcast_to(np.asarray(mean_src, dtype=np.float64), values.shape)
    mean_ref = np.broadcast_to(np.asarray(mean_ref, dtype=np.float64), values.shape)
    if mode == "randomized" and noise is None and family != "gaussian":
        raise WarpError("randomized mode needs uniform noise for discrete nodes")
    u = _positions(family, mean_src, disp_src, values, mode, noise)
    clamped = (u < U_CLAMP) | (u > 1.0 - U_CLAMP)
    u_c = np.clip(u, U_CLAMP, 1.0 - U_CLAMP)
    if family == "gaussian":
        sd_s, sd_r = np.sqrt(disp_src), np.sqrt(disp_ref)
        if sd_s == sd_r:
            warped = mean_ref + (values - mean_src)
        elif sd_s > 0:
            warped = mean_ref + sd_r * (values - mean_src) / sd_s
        else:
            warped = mean_ref.copy()
        if clamped.any():
            warped = np.where(clamped, glm.distribution_quantile("gaussian", mean_ref, u_c, disp_ref), warped)
    else:
        warped = glm.distribution_quantile(family, mean_ref, u_c)
    return warped, u_c, clamped


@dataclass(frozen=True)
class WarpedValue:
    value: float
    u: float
    clamped: bool


def warp_value(
    family: str,
    source_fit: glm.GlmFit,
    reference_fit: glm.GlmFit,
    source_parents_values,
    warped_parents_values,
    value,
    quantile_mode: str = "mid",
    noise: float | None = None,
) -> WarpedValue:
    """Warp a single value from the source to the reference conditional distribution.

    ``source_parents_values`` and ``warped_parents_values`` are encoded
    feature vectors (as produced by the node's :class:`FeatureEncoder`).
    ``noise`` is the uniform draw used in randomized mode.
    """
    if quantile_mode not in QUANTILE_MODES:
        raise WarpError(f"unknown quantile mode {quantile_mode!r}")
    mean_s = glm.predict_mean(source_fit, source_parents_values)
    mean_r = glm.predict_mean(reference_fit, warped_parents_values)
    nz = None if noise is None else np.array([noise])
    w, u, c = warp_values(
        family, [mean_s], [mean_r], source_fit.dispersion, reference_fit.dispersion, [value], quantile_mode, nz
    )
    return WarpedValue(float(w[0]), float(u[0]), bool(c[0]))


@dataclass(frozen=True, eq=False)
class NodeTrace:
    """Per-row audit trail for one node; ``u`` is NaN on rows left unwarped."""

    node: str
    original: np.ndarray
    u: np.ndarray
    warped: np.ndarray
    clamped: np.ndarray


@dataclass(frozen=True, eq=False)
class WarpedDataset:
    data: Dataset
    original: Dataset
    warped_rows: np.ndarray
    trace: Mapping[str, NodeTrace]
    extrapolated: np.ndarray

    def provenance(self) -> dict[str, np.ndarray]:
        out = {}
        for node, t in self.trace.items():
            out[f"{node}_orig"] = t.original
            out[f"{node}_u"] = t.u
        return out

    def to_csv(self, path, trace: bool = False):
        extra = self.provenance() if trace else {}
        if trace:
            extra["extrapolated"] = self.extrapolated
        write_csv(self.data, path, extra)


def _chunks(n, threads):
    if threads <= 1 or n < 2 * 1024:
        return [(0, n)]
    size = max(1024, -(-n // threads))
    return [(a, min(a + size, n)) for a in range(0, n, size)]


def warp_dataset(wm: WarpModel, d: Dataset, include_target: bool = False, *, threads: int = 1) -> WarpedDataset:
    """Warp every non-reference row of ``d`` into the warped world.

    Nodes are processed in topological order. The target is warped only with
    ``include_target`` (training data); prediction-time rows keep (or lack)
    their target. Results do not depend on ``threads``.

    Raises
    ------
    WarpError
        Missing columns or PA classes the model has not seen.
    """
    if wm.pa is None or not wm.order:
        return WarpedDataset(d, d, np.zeros(d.n, dtype=bool), {}, np.zeros(d.n, dtype=bool))
    if wm.pa not in d.schema:
        raise WarpError(f"dataset lacks PA column {wm.pa!r}")
    pa_values = d[wm.pa].astype(str)
    unknown = sorted(set(pa_values.tolist()) - set(wm.classes))
    if unknown:
        raise WarpError(f"unknown PA class(es) {unknown} in column {wm.pa!r}; model knows {list(wm.classes)}")
    nodes = [n for n in wm.order if include_target or n != wm.target]
    for node in nodes:
        for col in (*wm.nodes[node].parents, node):
            if col not in d.schema:
                raise WarpError(f"dataset lacks column {col!r} needed to warp {node!r}")

    spans = _chunks(d.n, threads)
    if len(spans) == 1:
        parts = [_warp_rows(wm, d, pa_values, nodes, 0, d.n)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda s: _warp_rows(wm, d, pa_values, nodes, *s), spans))

    updates, traces = {}, {}
    for node in nodes:
        warped = np.concatenate([p["warped"][node] for p in parts])
        u = np.concatenate([p["u"][node] for p in parts])
        clamped = np.concatenate([p["clamped"][node] for p in parts])
        updates[node] = warped
        traces[node] = NodeTrace(node, d[node], u, warped, clamped)
        if clamped.any():
            log.info("%s: %d row(s) had u clamped to [%g, 1 - %g]", node, int(clamped.sum()), U_CLAMP, U_CLAMP)
    extrapolated = np.concatenate([p["extrapolated"] for p in parts])
    return WarpedDataset(d.replace(updates), d, pa_values != wm.reference_class, traces, extrapolated)


def _encode_rows(encoder: FeatureEncoder, cols: Mapping[str, np.ndarray], n: int) -> np.ndarray:
    return encoder.transform(cols, n)


def _warp_rows(wm: WarpModel, d: Dataset, pa_values, nodes, start, stop):
    rows = slice(start, stop)
    orig = {name: d[name][rows] for name in d.schema.names}
    cur = dict(orig)
    pa_chunk = pa_values[rows]
    ids = d.index[rows]
    m = stop - start
    out = {"warped": {}, "u": {}, "clamped": {}}
    extrapolated = np.zeros(m, dtype=bool)
    for node in nodes:
        model = wm.nodes[node]
        X_src = _encode_rows(model.encoder, orig, m)
        X_ref = _encode_rows(model.encoder, cur, m)
        values = orig[node].astype(np.float64)
        warped = values.copy()
        u_all = np.full(m, np.nan)
        clamped_all = np.zeros(m, dtype=bool)
        noise = uniforms(wm.seed, f"warp:{node}", ids) if wm.quantile_mode == "randomized" else None
        for cls, src in model.source_fits.items():
            mask = pa_chunk == cls
            if not mask.any():
                continue
            mean_s = glm.predict_mean(src, X_src[mask])
            mean_r = glm.predict_mean(model.reference_fit, X_ref[mask])
            w, u, c = warp_values(
                model.family, mean_s, mean_r, src.dispersion, model.reference_fit.dispersion,
                values[mask], wm.quantile_mode, None if noise is None else noise[mask],
            )
            warped[mask] = w
            u_all[mask] = u
            clamped_all[mask] = c
            extrapolated[mask] |= _outside(model.support.get(cls, {}), orig, mask, (*model.parents, node))
            extrapolated[mask] |= _outside(model.support.get(wm.reference_class, {}), cur, mask, model.parents)
        col = d.schema.column(node)
        if col.kind in ("binary", "count"):
            warped_col = np.where(pa_chunk == wm.reference_class, orig[node], np.rint(warped).astype(np.int64))
        else:
            warped_col = np.where(pa_chunk == wm.reference_class, orig[node], warped)
        cur[node] = warped_col
        out["warped"][node] = warped_col
        out["u"][node] = u_all
        out["clamped"][node] = clamped_all
    out["extrapolated"] = extrapolated
    return out


def _outside(support, cols, mask, names):
    flag = np.zeros(int(mask.sum()), dtype=bool)
    for name in names:
        if name in support:
            lo, hi = support[name]
            vals = cols[name][mask].astype(np.float64)
            flag |= (vals < lo) | (vals > hi)
    return flag
