import numpy as np
import pytest

import urbancausal as uc
from urbancausal.discovery import (
    TrainConfig,
    bic_score,
    exhaustive_search,
    train_discovery,
)
from urbancausal.errors import TooManyFactors
from urbancausal.graph import empty_graph

from conftest import dfs_has_cycle, make_table


def small_config(seed=0, episodes=300):
    return TrainConfig(episodes=episodes, batch_size=32, seed=seed)


def test_training_is_deterministic(chain3_standardized):
    _, table = chain3_standardized
    one = train_discovery(table, small_config())
    two = train_discovery(table, small_config())
    assert one.best_graph.adjacency.tobytes() == two.best_graph.adjacency.tobytes()
    assert one.best_score == two.best_score
    np.testing.assert_array_equal(one.reward_history, two.reward_history)


def test_training_result_contract(chain3_standardized):
    _, table = chain3_standardized
    result = train_discovery(table, small_config())
    assert result.episodes_run == 300
    assert result.reward_history.shape == (300,)
    assert not dfs_has_cycle(result.best_graph.adjacency)
    assert result.best_graph.finalized
    # best_score equals the score recomputed from the returned graph
    assert abs(result.best_score - bic_score(result.best_graph, table)) < 1e-9


def test_training_empty_sem_recovers_empty_graph():
    graph = empty_graph(["a", "b", "c", "d"])
    table = uc.standardize(
        uc.generate_synthetic_sem(graph, np.zeros((4, 4)), np.ones(4), n=1000, seed=5)
    )
    _, oracle_score = exhaustive_search(table)
    result = train_discovery(table, small_config(episodes=400))
    assert result.best_graph.edges() == []
    assert abs(result.best_score - oracle_score) < 1e-6


def test_best_score_never_exceeds_empty_graph():
    rng = np.random.default_rng(3)
    for seed in range(3):
        table = uc.standardize(make_table(rng.standard_normal((200, 3))))
        result = train_discovery(table, TrainConfig(episodes=50, batch_size=16, seed=seed))
        empty_score = bic_score(empty_graph(table.factor_names), table)
        assert result.best_score <= empty_score + 1e-9


def test_monotone_learning_on_chain_task(chain3_standardized):
    _, table = chain3_standardized
    tail = 40  # 10% of 400 episodes
    for seed in range(5):
        result = train_discovery(table, TrainConfig(episodes=400, batch_size=32, seed=seed))
        first = result.reward_history[:tail].mean()
        last = result.reward_history[-tail:].mean()
        assert last >= first, f"seed {seed}: {last} < {first}"


def test_training_rejects_too_many_factors():
    table = make_table(np.random.default_rng(0).standard_normal((10, 65)))
    with pytest.raises(TooManyFactors):
        train_discovery(table, small_config())
