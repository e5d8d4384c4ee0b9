"""DAG search over factor tables: scoring, the sampling policy, training."""

from .policy import (
    PolicyParams,
    decode_edge_logits,
    encode,
    init_policy_params,
    sample_graph,
    surrogate_gradients,
    surrogate_loss,
)
from .scoring import (
    BicScorer,
    acyclicity_penalty,
    bic_score,
    count_dags,
    episode_reward,
    exhaustive_search,
)
from .training import DiscoveryResult, TrainConfig, train_discovery

__all__ = [
    "BicScorer",
    "DiscoveryResult",
    "PolicyParams",
    "TrainConfig",
    "acyclicity_penalty",
    "bic_score",
    "count_dags",
    "decode_edge_logits",
    "encode",
    "episode_reward",
    "exhaustive_search",
    "init_policy_params",
    "sample_graph",
    "surrogate_gradients",
    "surrogate_loss",
    "train_discovery",
]
