"""Run configuration (TOML).

Layout::

    [data]        path, split_fraction, optional find_path
    [schema]      columns = [{name, kind, role, levels?}, ...]
    [dag]         edges = ["a -> b", ...]; optional [dag.families]
    [normative]   worthiness, protected_attribute, reference_class,
                  treatment; optional [normative.pa_groups]
    [warp]        quantile_mode, per_group_variance
    [model]       features
    [audit]       epsilon, depth, min_support, k_top
    [synth]       SCM definition used by ``simulate``

The three normative answers (worthiness, protected attribute, treatment
rule) have no defaults. ``protected_attribute = "none"`` must be written out
to run without warping. Relative paths resolve against the config file.
"""

from __future__ import annotations

import hashlib
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dag import CausalDag, parse_dag
from .data import Column, Schema
from .errors import ConfigError, DagError, SchemaError
from .treatment import TreatmentRule, Worthiness, check_monotone
from .warp import KIND_FAMILY, QUANTILE_MODES

NO_PA = "none"


@dataclass(frozen=True)
class AuditSettings:
    epsilon: float = 0.05
    depth: int = 2
    min_support: int = 30
    k_top: int = 5


@dataclass(frozen=True, eq=False)
class RunConfig:
    """Validated run configuration."""

    raw: Mapping[str, Any]
    source: Path | None
    schema: Schema
    dag: CausalDag
    data_path: Path | None
    find_path: Path | None
    split_fraction: float
    pa: str | None
    reference_class: str | None
    pa_groups: Mapping[str, Any] | None
    worthiness: Worthiness
    treatment: TreatmentRule
    quantile_mode: str
    per_group_variance: bool
    features: tuple[str, ...]
    audit: AuditSettings = field(default_factory=AuditSettings)
    digest: str = ""

    @property
    def normative(self) -> Mapping[str, Any]:
        """The normative section exactly as written in the file."""
        return self.raw["normative"]

    @property
    def model_schema(self) -> Schema:
        """Schema after PA recoding (the PA becomes categorical over the group labels)."""
        if self.pa is None or not self.pa_groups:
            return self.schema
        return self.schema.replace_column(Column(self.pa, "categorical", "pa", tuple(self.pa_groups)))


def _table(raw, name, required=True) -> Mapping:
    value = raw.get(name)
    if value is None:
        if required:
            raise ConfigError(f"missing section [{name}]")
        return {}
    if not isinstance(value, Mapping):
        raise ConfigError(f"[{name}] must be a table")
    return value


def _require(table, section, key):
    if key not in table:
        raise ConfigError(f"missing required field {section}.{key}")
    return table[key]


def load_config(path) -> RunConfig:
    """Read and validate a TOML run configuration."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = tomllib.loads(blob.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: invalid TOML ({exc})") from None
    return parse_config(raw, base=path.parent, digest=hashlib.sha256(blob).hexdigest(), source=path)


def parse_config(raw: Mapping, base=None, digest: str = "", source=None) -> RunConfig:
    base = Path(base) if base is not None else Path.cwd()
    try:
        return _parse(raw, base, digest, source)
    except (SchemaError, DagError) as exc:
        raise ConfigError(str(exc)) from None


def _resolve(base, value):
    if value is None:
        return None
    p = Path(str(value))
    return p if p.is_absolute() else base / p


def _parse(raw, base, digest, source) -> RunConfig:
    data = _table(raw, "data", required=False)
    schema_t = _table(raw, "schema")
    columns = _require(schema_t, "schema", "columns")
    if not isinstance(columns, list) or not columns:
        raise ConfigError("schema.columns must be a non-empty array of tables")
    schema = Schema.from_dict(columns)

    # normative answers: no defaults
    norm = _table(raw, "normative")
    w_raw = _require(norm, "normative", "worthiness")
    pa_raw = _require(norm, "normative", "protected_attribute")
    t_raw = _require(norm, "normative", "treatment")
    try:
        worthiness = Worthiness.from_dict({"combiner": w_raw} if isinstance(w_raw, str) else w_raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"normative.worthiness: {exc}") from None
    if worthiness.observable and worthiness.observable not in schema:
        raise ConfigError(f"normative.worthiness: observable {worthiness.observable!r} is not a schema column")
    if not isinstance(t_raw, Mapping):
        raise ConfigError("normative.treatment must be a table with a 'kind'")
    try:
        rule = TreatmentRule.from_dict(t_raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"normative.treatment: {exc}") from None
    mono = check_monotone(rule)
    if not mono.ok:
        raise ConfigError(f"normative.treatment is not monotone: {mono.violation}")

    pa = str(pa_raw)
    schema_pa = schema.pa
    if pa.lower() == NO_PA:
        pa = None
        if schema_pa is not None:
            raise ConfigError(
                f"normative.protected_attribute is 'none' but column {schema_pa!r} has role 'pa'"
            )
        reference, groups = None, None
    else:
        if pa not in schema:
            raise ConfigError(f"normative.protected_attribute: {pa!r} is not a schema column")
        if schema_pa != pa:
            raise ConfigError(f"normative.protected_attribute: column {pa!r} must have role 'pa' in [schema]")
        reference = str(_require(norm, "normative", "reference_class"))
        groups = norm.get("pa_groups")
        if groups is not None:
            if not isinstance(groups, Mapping) or len(groups) < 2:
                raise ConfigError("normative.pa_groups must map at least two labels to value lists")
            if reference not in groups:
                raise ConfigError(f"normative.reference_class {reference!r} is not a pa_groups label")
        col = schema.column(pa)
        if col.kind not in ("categorical", "binary"):
            raise ConfigError(f"protected attribute {pa!r} must be categorical or binary")

    dag_t = _table(raw, "dag")
    nodes = {}
    for c in schema.columns:
        if c.role in ("pa", "confounder", "mediator", "target"):
            nodes[c.name] = {"role": c.role, "family": None}
    fams = dict(dag_t.get("families", {}))
    for name, fam in fams.items():
        if name not in nodes:
            raise ConfigError(f"dag.families: {name!r} is not a modelled schema column")
        nodes[name]["family"] = fam
    dag = parse_dag({"nodes": nodes, "edges": dag_t.get("edges", [])})
    for name in nodes:
        col = schema.column(name)
        fam = dag.families.get(name)
        if fam is not None and KIND_FAMILY.get(col.kind) != fam:
            raise ConfigError(f"dag.families: {name!r} is {col.kind}, family {fam!r} does not fit")
        if col.role in ("mediator", "target") and col.kind == "categorical" and name != pa:
            if dag.pa is not None and name in dag.descendants_of(dag.pa):
                raise ConfigError(f"PA descendant {name!r} is categorical; only binary/count/continuous can be warped")
    target_col = schema.column(schema.target)
    if target_col.kind == "categorical":
        raise ConfigError(f"target {target_col.name!r} must be binary, count or continuous")

    warp_t = _table(raw, "warp", required=False)
    mode = warp_t.get("quantile_mode", "mid")
    if mode not in QUANTILE_MODES:
        raise ConfigError(f"warp.quantile_mode must be one of {QUANTILE_MODES}, got {mode!r}")
    per_group = bool(warp_t.get("per_group_variance", False))

    model_t = _table(raw, "model", required=False)
    default_features = [c.name for c in schema.columns if c.role in ("confounder", "mediator")]
    features = tuple(model_t.get("features", default_features))
    for f in features:
        if f not in schema:
            raise ConfigError(f"model.features: {f!r} is not a schema column")
        if f == schema.target:
            raise ConfigError("model.features must not contain the target")
        if pa is not None and f == pa:
            raise ConfigError("model.features must not contain the protected attribute")

    audit_t = _table(raw, "audit", required=False)
    audit = AuditSettings(
        epsilon=float(audit_t.get("epsilon", 0.05)),
        depth=int(audit_t.get("depth", 2)),
        min_support=int(audit_t.get("min_support", 30)),
        k_top=int(audit_t.get("k_top", 5)),
    )
    if not audit.epsilon > 0 or audit.depth < 0 or audit.min_support < 1 or audit.k_top < 0:
        raise ConfigError(f"[audit] values out of range: {audit}")

    fraction = float(data.get("split_fraction", 0.8))
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"data.split_fraction must lie in (0, 1), got {fraction}")
    return RunConfig(
        raw=raw,
        source=source,
        schema=schema,
        dag=dag,
        data_path=_resolve(base, data.get("path")),
        find_path=_resolve(base, data.get("find_path")),
        split_fraction=fraction,
        pa=pa,
        reference_class=reference,
        pa_groups=groups,
        worthiness=worthiness,
        treatment=rule,
        quantile_mode=mode,
        per_group_variance=per_group,
        features=features,
        audit=audit,
        digest=digest,
    )
