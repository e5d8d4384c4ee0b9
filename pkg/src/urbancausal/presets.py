"""Built-in synthetic structures for verification and demos."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import DEFAULT_SCHEMA, Dimension, FactorMeta
from .errors import InvalidGraphSpec
from .graph import CausalGraph

PRESET_NAMES = ("chain3", "diamond4", "confounded-triple", "paper16-random")


@dataclass(frozen=True)
class SynthSpec:
    graph: CausalGraph
    weights: np.ndarray
    noise_std: np.ndarray
    meta: list[FactorMeta]


def _build(names, dims, edges, noise):
    d = len(names)
    adj = np.zeros((d, d), dtype=np.int8)
    weights = np.zeros((d, d))
    index = {name: i for i, name in enumerate(names)}
    for cause, effect, weight in edges:
        adj[index[cause], index[effect]] = 1
        weights[index[cause], index[effect]] = weight
    graph = CausalGraph(adj, list(names), finalized=True)
    meta = [FactorMeta(n, dim, "synthetic factor") for n, dim in zip(names, dims)]
    return SynthSpec(graph, weights, np.asarray(noise, dtype=np.float64), meta)


def preset_spec(
    name: str,
    seed: int = 0,
    edge_weight: float = 0.8,
    noise_std: float = 0.5,
    confounder_weight: float = 3.0,
) -> SynthSpec:
    """Return the structure behind a named preset.

    chain3 / diamond4 use `edge_weight` and `noise_std` on every edge/node;
    confounded-triple has a single confounder driving both ends of an edge
    with `confounder_weight` on the treatment side; paper16-random draws a
    seeded three-tier graph over the 16-factor default schema.
    """
    if name == "chain3":
        return _build(
            ["A", "B", "C"],
            [Dimension.CITIZENS, Dimension.LOCATIONS, Dimension.MOBILITY],
            [("A", "B", edge_weight), ("B", "C", edge_weight)],
            [noise_std] * 3,
        )
    if name == "diamond4":
        return _build(
            ["A", "B", "C", "D"],
            [Dimension.CITIZENS, Dimension.LOCATIONS, Dimension.LOCATIONS, Dimension.MOBILITY],
            [
                ("A", "B", edge_weight),
                ("A", "C", edge_weight),
                ("B", "D", edge_weight),
                ("C", "D", edge_weight),
            ],
            [noise_std] * 4,
        )
    if name == "confounded-triple":
        return _build(
            ["X", "T", "Y"],
            [Dimension.CITIZENS, Dimension.LOCATIONS, Dimension.MOBILITY],
            [("X", "T", confounder_weight), ("X", "Y", 1.0), ("T", "Y", 1.0)],
            [1.0, 1.0, 1.0],
        )
    if name == "paper16-random":
        return _sixteen_factor_random(seed)
    raise InvalidGraphSpec(f"unknown preset {name!r} (choose from {PRESET_NAMES})")


def _sixteen_factor_random(seed: int) -> SynthSpec:
    """Seeded three-tier structure over the 16-factor default schema: upper
    tiers feed lower tiers, never the reverse."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 16]))
    meta = list(DEFAULT_SCHEMA)
    tier = {Dimension.CITIZENS: 0, Dimension.LOCATIONS: 1, Dimension.MOBILITY: 2}
    d = len(meta)
    adj = np.zeros((d, d), dtype=np.int8)
    weights = np.zeros((d, d))
    for i in range(d):
        for j in range(d):
            if tier[meta[i].dimension] < tier[meta[j].dimension] and rng.random() < 0.3:
                adj[i, j] = 1
                weights[i, j] = rng.uniform(0.4, 0.9) * rng.choice([-1.0, 1.0])
    noise = rng.uniform(0.5, 1.0, size=d)
    graph = CausalGraph(adj, [m.name for m in meta], finalized=True)
    return SynthSpec(graph, weights, noise, meta)
