"""Synthetic structural causal models with a ground-truth FiND world.

Each node gets one uniform draw per row (its exogenous noise). The real
world realises every node from its structural equation; the FiND world reuses
the same draws but drops the PA term everywhere, i.e. every row follows the
reference-class equations. Because both worlds invert the same uniform,
values share ranks within any stratum of identical parents.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple

import numpy as np

from . import glm
from .dag import CausalDag
from .data import Column, Dataset, Schema
from .errors import ConfigError
from .streams import uniforms

log = logging.getLogger(__name__)

FAMILY_KIND = {"gaussian": "continuous", "bernoulli": "binary", "poisson": "count"}


@dataclass(frozen=True)
class NodeEquation:
    """Structural equation ``node = g^-1(intercept + sum coef * parent) (+ noise)``.

    The PA parent enters through the indicator ``1{A != reference}``; its
    coefficient is either one number or a per-class mapping. ``noise_scale``
    is the gaussian standard deviation and is ignored for other families.
    """

    family: str
    intercept: float = 0.0
    coefficients: Mapping[str, float | Mapping[str, float]] = field(default_factory=dict)
    noise_scale: float = 1.0


@dataclass(frozen=True)
class ScmSpec:
    dag: CausalDag
    equations: Mapping[str, NodeEquation]
    pa_probabilities: Mapping[str, float]
    reference_class: str
    n: int
    seed: int = 0

    def __post_init__(self):
        validate(self)

    @property
    def classes(self) -> tuple[str, ...]:
        return tuple(self.pa_probabilities)

    def schema(self) -> Schema:
        cols = []
        for node, role in self.dag.nodes.items():
            if role == "pa":
                cols.append(Column(node, "categorical", "pa", self.classes))
            else:
                cols.append(Column(node, FAMILY_KIND[self.equations[node].family], role))
        return Schema(tuple(cols))


def validate(spec: ScmSpec) -> None:
    """Raise :class:`ConfigError` unless the SCM definition is internally consistent."""
    dag, pa = spec.dag, spec.dag.pa
    if spec.n < 1:
        raise ConfigError(f"synth: n must be positive, got {spec.n}")
    if pa is None:
        raise ConfigError("synth: the DAG needs a pa node")
    probs = np.array(list(spec.pa_probabilities.values()), dtype=float)
    if len(probs) < 2 or np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
        raise ConfigError(f"synth: pa_probabilities must list >= 2 classes summing to 1, got {dict(spec.pa_probabilities)}")
    if spec.reference_class not in spec.pa_probabilities:
        raise ConfigError(f"synth: reference class {spec.reference_class!r} not among {list(spec.pa_probabilities)}")
    for node in dag.nodes:
        if node == pa:
            continue
        eq = spec.equations.get(node)
        if eq is None:
            raise ConfigError(f"synth: node {node!r} has no structural equation")
        if eq.family not in FAMILY_KIND:
            raise ConfigError(f"synth: node {node!r}: unknown family {eq.family!r}")
        fam = dag.families.get(node)
        if fam is not None and fam != eq.family:
            raise ConfigError(f"synth: node {node!r}: equation family {eq.family!r} contradicts DAG family {fam!r}")
        parents = dag.parents_of(node)
        if set(eq.coefficients) != set(parents):
            raise ConfigError(
                f"synth: node {node!r}: coefficients {sorted(eq.coefficients)} must match parents {sorted(parents)}"
            )
        for p, c in eq.coefficients.items():
            if p == pa and isinstance(c, Mapping):
                extra = set(c) - set(spec.classes)
                if extra:
                    raise ConfigError(f"synth: node {node!r}: PA coefficients for unknown classes {sorted(extra)}")
            elif not np.isfinite(float(c)):
                raise ConfigError(f"synth: node {node!r}: coefficient on {p!r} is not finite")
        if eq.family == "gaussian" and not eq.noise_scale > 0:
            raise ConfigError(f"synth: gaussian node {node!r} needs noise_scale > 0")


class SynthResult(NamedTuple):
    real: Dataset
    find: Dataset
    psi: np.ndarray
    real_mean: np.ndarray
    noise: Mapping[str, np.ndarray]


def _pa_effect(coef, pa_values, reference):
    if isinstance(coef, Mapping):
        return np.array([0.0 if a == reference else float(coef.get(a, 0.0)) for a in pa_values])
    return np.where(pa_values == reference, 0.0, float(coef))


def structural_mean(spec: ScmSpec, node: str, values: Mapping[str, np.ndarray], find: bool = False) -> np.ndarray:
    """Mean of ``node`` given parent columns in ``values``.

    With ``find`` the PA term is dropped (reference-class equation).
    """
    eq = spec.equations[node]
    pa = spec.dag.pa
    n = len(next(iter(values.values()))) if values else spec.n
    eta = np.full(n, float(eq.intercept))
    for parent in spec.dag.ordered_parents(node):
        coef = eq.coefficients[parent]
        if parent == pa:
            term = _pa_effect(coef, values[pa], spec.reference_class)
            eta = eta + (np.zeros(n) if find else term)
        else:
            eta = eta + float(coef) * values[parent].astype(np.float64)
    return glm.inverse_link(eq.family, eta)


def _realise(eq: NodeEquation, mean, u):
    if eq.family == "gaussian":
        return glm.distribution_quantile("gaussian", mean, u, eq.noise_scale**2)
    out = glm.distribution_quantile(eq.family, mean, u)
    return out.astype(np.int64)


def generate(spec: ScmSpec) -> SynthResult:
    """Sample paired real-world and FiND-world datasets.

    Returns
    -------
    SynthResult
        ``psi`` is the FiND-world mean of the target at each row's FiND
        parents (a probability for bernoulli targets); ``real_mean`` is the
        real-world counterpart; ``noise`` holds the per-node uniform draws.
    """
    dag, pa = spec.dag, spec.dag.pa
    rows = np.arange(spec.n)
    classes = np.array(spec.classes)
    cum = np.cumsum([spec.pa_probabilities[c] for c in spec.classes])
    cum[-1] = 1.0
    u_pa = uniforms(spec.seed, f"scm:{pa}", rows)
    pa_values = classes[np.searchsorted(cum, u_pa, side="left")]

    real = {pa: pa_values}
    find = {pa: pa_values}
    noise = {}
    psi = real_mean = None
    for node in dag.topological_order():
        if node == pa:
            continue
        eq = spec.equations[node]
        u = uniforms(spec.seed, f"scm:{node}", rows)
        noise[node] = u
        mu_real = structural_mean(spec, node, real)
        mu_find = structural_mean(spec, node, find, find=True)
        real[node] = _realise(eq, mu_real, u)
        find[node] = _realise(eq, mu_find, u)
        if node == dag.target:
            real_mean, psi = mu_real, mu_find
    schema = spec.schema()
    log.debug("generated %d synthetic rows", spec.n)
    return SynthResult(Dataset(schema, real), Dataset(schema, find), psi, real_mean, noise)


def spec_from_config(dag: CausalDag, section: Mapping, seed: int) -> ScmSpec:
    """Build a :class:`ScmSpec` from a ``[synth]`` config table."""
    try:
        equations = {}
        for node, eq in dict(section["equations"]).items():
            equations[node] = NodeEquation(
                family=eq.get("family") or dag.families.get(node),
                intercept=float(eq.get("intercept", 0.0)),
                coefficients=dict(eq.get("coefficients", {})),
                noise_scale=float(eq.get("noise_scale", 1.0)),
            )
        return ScmSpec(
            dag=dag,
            equations=equations,
            pa_probabilities={str(k): float(v) for k, v in dict(section["pa_probabilities"]).items()},
            reference_class=str(section["reference_class"]),
            n=int(section["n"]),
            seed=seed,
        )
    except KeyError as exc:
        raise ConfigError(f"[synth] lacks field {exc.args[0]!r}") from None
