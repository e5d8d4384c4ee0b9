"""Policy-gradient search over adjacency matrices.

One episode = sample a batch of graphs from the current policy, reward each
with -BIC - lambda * acyclicity penalty, and take one REINFORCE step against
a scalar moving-average baseline. The best acyclic sample seen is returned.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..dataset import FactorTable
from ..errors import NoAcyclicSample, TooManyFactors
from ..graph import CausalGraph
from .policy import (
    PARAM_FIELDS,
    decode_edge_logits,
    encode,
    init_policy_params,
    sample_adjacency_batch,
    surrogate_gradients,
)
from .scoring import BicScorer, acyclicity_penalty

BASELINE_DECAY = 0.99
GRAD_CLIP = 5.0
MAX_FACTORS = 64


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 2000
    batch_size: int = 64
    learning_rate: float = 1e-3
    lambda_acyc: float | None = None  # None -> 10 * n_regions at run time
    minibatch_rows: int = 128
    hidden_width: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.episodes < 1:
            raise ValueError("episodes must be at least 1")
        for name in ("batch_size", "learning_rate", "minibatch_rows", "hidden_width"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.lambda_acyc is not None and self.lambda_acyc <= 0:
            raise ValueError("lambda_acyc must be positive")


@dataclass
class DiscoveryResult:
    best_graph: CausalGraph
    best_score: float
    reward_history: np.ndarray = field(repr=False)
    episodes_run: int
    best_score_history: np.ndarray = field(repr=False)


def _clip_global_norm(grads: dict, max_norm: float) -> dict:
    total = np.sqrt(sum(float(np.sum(np.square(g))) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        return {name: g * scale for name, g in grads.items()}
    return grads


def train_discovery(table: FactorTable, config: TrainConfig) -> DiscoveryResult:
    """Search for the lowest-BIC DAG on a standardized table.

    Deterministic for a fixed config: the row minibatch, parameter init, and
    every graph sample come from one seeded generator. Only acyclic samples
    may become the returned graph; the tracker starts from the empty graph,
    so the result's score never exceeds the empty-graph BIC.
    """
    d = table.n_factors
    if d > MAX_FACTORS:
        raise TooManyFactors(f"at most {MAX_FACTORS} factors supported, got {d}")
    n = table.n_regions
    lambda_acyc = config.lambda_acyc if config.lambda_acyc is not None else 10.0 * n

    rng = np.random.default_rng(config.seed)
    m = min(config.minibatch_rows, n)
    row_sample = rng.choice(n, size=m, replace=False)
    state_rows = table.values[row_sample]
    params = init_policy_params(m, config.hidden_width, rng)

    scorer = BicScorer(table.values)
    score_cache: dict[bytes, tuple[float, float]] = {}

    def scored(adjacency: np.ndarray) -> tuple[float, float]:
        key = adjacency.tobytes()
        hit = score_cache.get(key)
        if hit is None:
            hit = (scorer.score_adjacency(adjacency), acyclicity_penalty(adjacency))
            score_cache[key] = hit
        return hit

    empty = np.zeros((d, d), dtype=np.int8)
    best_adjacency = empty
    best_reward = -scored(empty)[0]

    reward_history = np.empty(config.episodes)
    best_history = np.empty(config.episodes)

    for episode in range(config.episodes):
        embeddings = encode(state_rows, params)
        logits = decode_edge_logits(embeddings, params)
        batch = sample_adjacency_batch(logits, config.batch_size, rng)

        rewards = np.empty(config.batch_size)
        for b in range(config.batch_size):
            bic, penalty = scored(batch[b])
            rewards[b] = -bic - lambda_acyc * penalty
            if penalty == 0.0 and rewards[b] > best_reward:
                best_reward = rewards[b]
                best_adjacency = batch[b].copy()

        if episode == 0:
            params.baseline = float(rewards.mean())
        advantages = rewards - params.baseline
        params.baseline = BASELINE_DECAY * params.baseline + (
            1.0 - BASELINE_DECAY
        ) * float(rewards.mean())

        _, grads = surrogate_gradients(state_rows, params, batch, advantages)
        grads = _clip_global_norm(grads, GRAD_CLIP)
        for name in PARAM_FIELDS:
            value = getattr(params, name)
            setattr(params, name, value - config.learning_rate * grads[name])

        reward_history[episode] = float(rewards.mean())
        best_history[episode] = scored(best_adjacency)[0]

    if best_adjacency is None:  # unreachable: the tracker is seeded above
        raise NoAcyclicSample("no acyclic graph was ever sampled")

    best_graph = CausalGraph(
        best_adjacency.astype(np.int8), table.factor_names, finalized=True
    )
    return DiscoveryResult(
        best_graph=best_graph,
        best_score=scored(best_adjacency)[0],
        reward_history=reward_history,
        episodes_run=config.episodes,
        best_score_history=best_history,
    )
