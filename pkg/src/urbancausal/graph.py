"""Directed graphs over factors: the shared structure type and queries on it."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import CyclicGraph, UnknownFactor


@dataclass(frozen=True)
class CausalGraph:
    """Binary adjacency over named factors; adjacency[i, j] = 1 means i -> j.

    A graph is only guaranteed acyclic once `finalized` is True (use
    :meth:`finalize`); raw sampled graphs may contain cycles.
    """

    adjacency: np.ndarray
    factor_names: list[str]
    finalized: bool = field(default=False)

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=np.int8)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ValueError(f"adjacency must be square, got shape {adj.shape}")
        if adj.shape[0] != len(self.factor_names):
            raise ValueError("factor_names length must match adjacency size")
        if not np.isin(adj, (0, 1)).all():
            raise ValueError("adjacency entries must be 0 or 1")
        if np.any(np.diag(adj) != 0):
            raise ValueError("adjacency diagonal must be zero")
        if len(set(self.factor_names)) != len(self.factor_names):
            raise ValueError("factor names must be unique")
        adj.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)
        if self.finalized and has_cycle(adj):
            raise CyclicGraph("cannot finalize a cyclic graph")

    @property
    def n_factors(self) -> int:
        return self.adjacency.shape[0]

    def index_of(self, name: str) -> int:
        try:
            return self.factor_names.index(name)
        except ValueError:
            raise UnknownFactor(name) from None

    def parents(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[:, j])

    def edges(self) -> list[tuple[str, str]]:
        """All edges as (cause, effect) name pairs in row-major order."""
        rows, cols = np.nonzero(self.adjacency)
        return [(self.factor_names[i], self.factor_names[j]) for i, j in zip(rows, cols)]

    def has_edge(self, cause: str, effect: str) -> bool:
        return bool(self.adjacency[self.index_of(cause), self.index_of(effect)])

    def finalize(self) -> "CausalGraph":
        """Return an acyclicity-checked copy; raises CyclicGraph otherwise."""
        return CausalGraph(self.adjacency.copy(), list(self.factor_names), finalized=True)

    def to_json(self, extra: dict | None = None) -> str:
        payload = {
            "factor_names": list(self.factor_names),
            "adjacency": self.adjacency.astype(int).tolist(),
        }
        if extra:
            payload.update(extra)
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str, finalized: bool = True) -> "CausalGraph":
        payload = json.loads(text)
        return cls(
            np.asarray(payload["adjacency"], dtype=np.int8),
            list(payload["factor_names"]),
            finalized=finalized,
        )

    def to_dot(self) -> str:
        lines = ["digraph causal {"]
        for name in self.factor_names:
            lines.append(f'  "{name}";')
        for cause, effect in self.edges():
            lines.append(f'  "{cause}" -> "{effect}";')
        lines.append("}")
        return "\n".join(lines) + "\n"


def empty_graph(factor_names: list[str]) -> CausalGraph:
    d = len(factor_names)
    return CausalGraph(np.zeros((d, d), dtype=np.int8), list(factor_names), finalized=True)


def has_cycle(adjacency: np.ndarray) -> bool:
    """Kahn elimination: True when some node can never reach in-degree zero."""
    adj = np.asarray(adjacency)
    d = adj.shape[0]
    indeg = adj.sum(axis=0).astype(int)
    alive = np.ones(d, dtype=bool)
    removed = 0
    frontier = [i for i in range(d) if indeg[i] == 0]
    while frontier:
        i = frontier.pop()
        alive[i] = False
        removed += 1
        for j in np.flatnonzero(adj[i]):
            if alive[j]:
                indeg[j] -= 1
                if indeg[j] == 0:
                    frontier.append(j)
    return removed < d


def causal_order(graph: CausalGraph) -> list[set[str]]:
    """Topological strata: level 0 has no parents, level k's parents all lie below."""
    if not graph.finalized:
        raise CyclicGraph("causal_order requires a finalized graph")
    adj = graph.adjacency
    d = graph.n_factors
    assigned = np.zeros(d, dtype=bool)
    levels: list[set[str]] = []
    while not assigned.all():
        ready = [
            j
            for j in range(d)
            if not assigned[j] and all(assigned[i] for i in np.flatnonzero(adj[:, j]))
        ]
        if not ready:
            raise CyclicGraph("graph contains a cycle")
        for j in ready:
            assigned[j] = True
        levels.append({graph.factor_names[j] for j in ready})
    return levels


def ancestors(graph: CausalGraph, node: str) -> set[str]:
    """Transitive closure of the parent relation, excluding the node itself."""
    if not graph.finalized:
        raise CyclicGraph("ancestors requires a finalized graph")
    target = graph.index_of(node)
    adj = graph.adjacency
    seen: set[int] = set()
    stack = list(np.flatnonzero(adj[:, target]))
    while stack:
        i = stack.pop()
        if i in seen:
            continue
        seen.add(i)
        stack.extend(np.flatnonzero(adj[:, i]))
    seen.discard(target)
    return {graph.factor_names[i] for i in seen}
