"""Causal DAG with node roles, validation and warp-order queries."""

from __future__ import annotations

import graphlib
from dataclasses import dataclass
from typing import Iterable, Mapping

from .errors import DagError

NODE_ROLES = ("pa", "confounder", "mediator", "target")
FAMILIES = ("gaussian", "bernoulli", "poisson")


@dataclass(frozen=True)
class CausalDag:
    """Validated real-world DAG.

    ``nodes`` maps node name to role, ``families`` maps node name to the
    distribution family used to model it (``None`` for unmodelled nodes such
    as the PA). Node declaration order is kept and breaks ties in every
    topological order this class returns, so results are deterministic.
    """

    nodes: Mapping[str, str]
    edges: tuple[tuple[str, str], ...]
    families: Mapping[str, str | None]

    def __post_init__(self):
        object.__setattr__(self, "nodes", dict(self.nodes))
        object.__setattr__(self, "families", {n: self.families.get(n) for n in self.nodes})
        object.__setattr__(self, "edges", tuple((str(a), str(b)) for a, b in self.edges))
        self._validate()

    def _validate(self):
        for name, role in self.nodes.items():
            if role not in NODE_ROLES:
                raise DagError(f"node {name!r}: unknown role {role!r}; expected one of {NODE_ROLES}")
            fam = self.families[name]
            if fam is not None and fam not in FAMILIES:
                raise DagError(f"node {name!r}: unknown family {fam!r}; expected one of {FAMILIES}")
        pas = [n for n, r in self.nodes.items() if r == "pa"]
        targets = [n for n, r in self.nodes.items() if r == "target"]
        if len(pas) > 1:
            raise DagError(f"at most one pa node allowed, got {pas}")
        if len(targets) != 1:
            raise DagError(f"exactly one target node required, got {targets}")
        seen = set()
        for a, b in self.edges:
            for end in (a, b):
                if end not in self.nodes:
                    raise DagError(f"edge {a} -> {b}: endpoint {end!r} is not a declared node")
            if a == b:
                raise DagError(f"self-loop on {a!r}")
            if (a, b) in seen:
                raise DagError(f"duplicate edge {a} -> {b}")
            seen.add((a, b))
        try:
            self.topological_order()
        except graphlib.CycleError as exc:
            cycle = exc.args[1]
            raise DagError("cycle detected: " + " -> ".join(cycle)) from None
        pa = self.pa
        if pa is not None and self.parents_of(pa):
            raise DagError(f"pa node {pa!r} must not have parents, has {sorted(self.parents_of(pa))}")
        if self.children_of(self.target):
            raise DagError(f"target {self.target!r} must not have outgoing edges")
        forbidden = {n for n, r in self.nodes.items() if r in ("pa", "mediator", "target")}
        for n, r in self.nodes.items():
            if r == "confounder":
                bad = self.parents_of(n) & forbidden
                if bad:
                    raise DagError(f"confounder {n!r} has parent(s) {sorted(bad)} among pa/mediators/target")

    @property
    def pa(self) -> str | None:
        return next((n for n, r in self.nodes.items() if r == "pa"), None)

    @property
    def target(self) -> str:
        return next(n for n, r in self.nodes.items() if r == "target")

    def parents_of(self, node: str) -> frozenset[str]:
        if node not in self.nodes:
            raise ValueError(f"unknown node {node!r}")
        return frozenset(a for a, b in self.edges if b == node)

    def children_of(self, node: str) -> frozenset[str]:
        if node not in self.nodes:
            raise ValueError(f"unknown node {node!r}")
        return frozenset(b for a, b in self.edges if a == node)

    def ordered_parents(self, node: str) -> list[str]:
        """Parents of ``node`` in node declaration order."""
        parents = self.parents_of(node)
        return [n for n in self.nodes if n in parents]

    def topological_order(self) -> list[str]:
        """All nodes, parents before children, ties broken by declaration order."""
        sorter = graphlib.TopologicalSorter({n: [a for a, b in self.edges if b == n] for n in self.nodes})
        sorter.prepare()
        rank = {n: i for i, n in enumerate(self.nodes)}
        order = []
        while sorter.is_active():
            ready = sorted(sorter.get_ready(), key=rank.__getitem__)
            order.extend(ready)
            sorter.done(*ready)
        return order

    def descendants_of(self, node: str) -> set[str]:
        stack, seen = [node], set()
        while stack:
            for child in self.children_of(stack.pop()):
                if child not in seen:
                    seen.add(child)
                    stack.append(child)
        return seen

    def without_pa_edges(self) -> "CausalDag":
        """FiND-world graph: the same DAG with every edge out of the PA removed."""
        pa = self.pa
        return CausalDag(self.nodes, tuple(e for e in self.edges if e[0] != pa), self.families)

    def to_dict(self):
        return {
            "nodes": {n: {"role": r, "family": self.families[n]} for n, r in self.nodes.items()},
            "edges": [f"{a} -> {b}" for a, b in self.edges],
        }


def _parse_edge(edge) -> tuple[str, str]:
    if isinstance(edge, str):
        parts = [p.strip() for p in edge.split("->")]
        if len(parts) != 2 or not all(parts):
            raise DagError(f"cannot parse edge {edge!r}; expected 'parent -> child'")
        return parts[0], parts[1]
    try:
        a, b = edge
    except (TypeError, ValueError):
        raise DagError(f"cannot parse edge {edge!r}") from None
    return str(a), str(b)


def parse_dag(spec: Mapping) -> CausalDag:
    """Build a :class:`CausalDag` from a mapping.

    ``spec["nodes"]`` maps names to either a role string or a table with
    ``role`` and optional ``family``; ``spec["edges"]`` lists ``"a -> b"``
    strings or ``(a, b)`` pairs.

    >>> dag = parse_dag({"nodes": {"A": "pa", "M": "mediator", "Y": "target"},
    ...                  "edges": ["A -> M", "M -> Y"]})
    >>> pa_descendants(dag)
    ['M', 'Y']
    """
    if "nodes" not in spec:
        raise DagError("dag spec lacks 'nodes'")
    nodes, families = {}, {}
    for name, decl in spec["nodes"].items():
        if isinstance(decl, str):
            nodes[name], families[name] = decl, None
        else:
            if "role" not in decl:
                raise DagError(f"node {name!r} lacks a role")
            nodes[name], families[name] = decl["role"], decl.get("family")
    edges = tuple(_parse_edge(e) for e in spec.get("edges", ()))
    return CausalDag(nodes, edges, families)


def pa_descendants(dag: CausalDag) -> list[str]:
    """Nodes reachable from the PA in topological order, target last.

    These are exactly the variables that must be warped. Returns ``[]`` when
    there is no PA or it has no outgoing edges.
    """
    if dag.pa is None:
        return []
    desc = dag.descendants_of(dag.pa)
    order = [n for n in dag.topological_order() if n in desc]
    if dag.target in order:
        order.remove(dag.target)
        order.append(dag.target)
    return order


def parents_of(dag: CausalDag, node: str) -> frozenset[str]:
    return dag.parents_of(node)


def identifiability_note(names: Iterable[str]) -> str:
    """Note recorded in reports: identifiability is assumed, not verified."""
    return (
        "warping assumes the supplied DAG identifies the counterfactual distributions of "
        + ", ".join(names)
        + " (no unobserved mediator-outcome confounding); this is not checked"
    )
