"""Shared builders and independent oracles for the test suite."""

from __future__ import annotations

import numpy as np
import pytest
from scipy.special import expit

import urbancausal as uc
from urbancausal.dataset import Dimension, FactorMeta, FactorTable, quantile_levels
from urbancausal.graph import CausalGraph


def make_table(values, dims=None, names=None):
    values = np.asarray(values, dtype=np.float64)
    n, d = values.shape
    if names is None:
        names = [f"f{j}" for j in range(d)]
    if dims is None:
        dims = [Dimension.CITIZENS] * d
    meta = [FactorMeta(nm, dm) for nm, dm in zip(names, dims)]
    return FactorTable(values, meta, [f"r{i}" for i in range(n)])


def graph_from_edges(names, edges, finalized=True):
    d = len(names)
    idx = {name: i for i, name in enumerate(names)}
    adj = np.zeros((d, d), dtype=np.int8)
    for cause, effect in edges:
        adj[idx[cause], idx[effect]] = 1
    return CausalGraph(adj, list(names), finalized=finalized)


def dfs_has_cycle(adjacency) -> bool:
    """Independent oracle: recursive three-color DFS cycle detection."""
    adj = np.asarray(adjacency)
    d = adj.shape[0]
    color = [0] * d  # 0 white, 1 grey, 2 black

    def visit(u):
        color[u] = 1
        for v in range(d):
            if adj[u, v]:
                if color[v] == 1:
                    return True
                if color[v] == 0 and visit(v):
                    return True
        color[u] = 2
        return False

    return any(color[u] == 0 and visit(u) for u in range(d))


def ordinal_sample(w, theta, n, seed, k=4):
    """Draw (X, levels) from the proportional-odds model: the generating
    oracle for parameter-recovery tests."""
    rng = np.random.default_rng(seed)
    w = np.asarray(w, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    X = rng.standard_normal((n, w.shape[0]))
    cdf = expit(theta[None, :] - (X @ w)[:, None])
    levels = 1 + (rng.random(n)[:, None] > cdf).sum(axis=1)
    return X, levels.astype(np.int64)


def signflip_dataset(seed, n=2000, confound_t=-2.0, confound_y=4.0, effect=2.0):
    """Treatment effect `effect` per level with a confounder that flips the
    raw treatment-outcome correlation sign. Returns (table, graph, truth)."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    t_star = confound_t * x + rng.standard_normal(n)
    lv = quantile_levels(t_star, 4)
    y = effect * lv.levels + confound_y * x + rng.standard_normal(n)
    table = make_table(
        np.column_stack([x, t_star, y]),
        dims=[Dimension.CITIZENS, Dimension.LOCATIONS, Dimension.MOBILITY],
        names=["X", "T", "Y"],
    )
    graph = graph_from_edges(["X", "T", "Y"], [("X", "T"), ("X", "Y"), ("T", "Y")])
    return table, graph, {"effect": effect, "levels": lv}


THREE_TIER_NAMES = [
    "C1", "C2", "C3", "C4", "L1", "L2", "L3", "Y",
    "D1", "D2", "D3", "D4", "D5", "D6", "D7", "D8",
]


def three_tier_fixture(n=1500, seed=1):
    """16-factor table: a three-tier truth graph into outcome Y plus eight
    distractor children of the true causes (correlated with Y but never its
    ancestors)."""
    dims = (
        [Dimension.CITIZENS] * 4
        + [Dimension.LOCATIONS] * 3
        + [Dimension.MOBILITY]
        + [Dimension.LOCATIONS] * 8
    )
    edges = [
        ("C1", "L1", 0.8), ("C2", "L1", 0.8), ("C2", "L2", 0.8),
        ("C3", "L2", 0.8), ("C3", "L3", 0.8), ("C4", "L3", 0.8),
        ("L1", "Y", 0.8), ("L2", "Y", 0.8), ("L3", "Y", 0.8),
    ]
    for k, parent in enumerate(["C1", "C2", "C3", "C4", "L1", "L2", "L3", "C2"]):
        edges.append((parent, f"D{k + 1}", 1.0))
    d = len(THREE_TIER_NAMES)
    idx = {u: i for i, u in enumerate(THREE_TIER_NAMES)}
    adj = np.zeros((d, d), dtype=np.int8)
    weights = np.zeros((d, d))
    for cause, effect, weight in edges:
        adj[idx[cause], idx[effect]] = 1
        weights[idx[cause], idx[effect]] = weight
    noise = np.ones(d)
    for k in range(8):
        noise[idx[f"D{k + 1}"]] = 0.3
    graph = CausalGraph(adj, list(THREE_TIER_NAMES), finalized=True)
    meta = [FactorMeta(nm, dm) for nm, dm in zip(THREE_TIER_NAMES, dims)]
    table = uc.standardize(
        uc.generate_synthetic_sem(graph, weights, noise, n=n, seed=seed, meta=meta)
    )
    return graph, table


@pytest.fixture(scope="session")
def chain3_standardized():
    spec = uc.presets.preset_spec("chain3")
    table = uc.generate_synthetic_sem(
        spec.graph, spec.weights, spec.noise_std, n=1000, seed=11, meta=spec.meta
    )
    return spec.graph, uc.standardize(table)
