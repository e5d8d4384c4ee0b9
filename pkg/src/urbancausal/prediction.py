"""Input-selection strategies, two predictors, and the training-size grid.

The experiment harness re-estimates correlation p-values and causal effects
on each training split before selecting features, so no selection step ever
sees test rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy import stats

from . import effects as effects_lib
from .dataset import Dimension, FactorTable
from .errors import LengthMismatch, NonFiniteLoss, UnknownFactor, UrbanCausalError
from .graph import CausalGraph, ancestors

L1_GRID = np.geomspace(1e-4, 1.0, 13)
COORD_TOL = 1e-8
MAX_SWEEPS = 50_000


class StrategyKind(str, Enum):
    ALL_L1 = "all_l1"
    CORRELATION_P = "correlation_p"
    CAUSAL_ANCESTOR = "causal_ancestor"
    CAUSAL_SIGNIFICANCE = "causal_significance"


@dataclass(frozen=True)
class SelectionStrategy:
    kind: StrategyKind
    alpha: float = 0.05
    l1_lambda: float | None = None  # AllL1 only; None -> validation-grid pick

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.l1_lambda is not None and self.l1_lambda < 0:
            raise ValueError("l1_lambda must be non-negative")

    @property
    def label(self) -> str:
        return self.kind.value


@dataclass(frozen=True)
class MlpConfig:
    hidden_sizes: tuple[int, ...] = (64, 64)
    epochs: int = 6000
    learning_rate: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if any(s <= 0 for s in self.hidden_sizes):
            raise ValueError("hidden sizes must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


def _correlation_p(x: np.ndarray, y: np.ndarray) -> float:
    n = x.shape[0]
    if x.std() == 0.0 or y.std() == 0.0:
        return 1.0
    r = float(np.clip(np.corrcoef(x, y)[0, 1], -1.0, 1.0))
    t = r * np.sqrt((n - 2) / max(1.0 - r**2, np.finfo(float).tiny))
    return float(2.0 * stats.t.sf(abs(t), df=n - 2))


def select_features(
    strategy: SelectionStrategy,
    table: FactorTable,
    graph: CausalGraph,
    effects: list[effects_lib.AteResult],
    outcome: str,
) -> set[str]:
    """Pick predictor factors for one outcome.

    An empty result is a valid selection; the predictors then fit
    intercept-only models.
    """
    if outcome not in table.factor_names:
        raise UnknownFactor(outcome)
    if table.meta[table.index_of(outcome)].dimension != Dimension.MOBILITY:
        raise ValueError(f"outcome {outcome!r} is not a Mobility factor")

    if strategy.kind is StrategyKind.ALL_L1:
        return {
            m.name
            for m in table.meta
            if m.dimension != Dimension.MOBILITY and m.name != outcome
        }

    if strategy.kind is StrategyKind.CORRELATION_P:
        y = table.column(outcome)
        return {
            m.name
            for m in table.meta
            if m.name != outcome
            and _correlation_p(table.column(m.name), y) < strategy.alpha
        }

    if strategy.kind is StrategyKind.CAUSAL_ANCESTOR:
        return ancestors(graph, outcome)

    # Causal significance: ancestors in the subgraph of significant edges.
    pruned = np.zeros_like(graph.adjacency)
    for res in effects:
        if res.p_value < strategy.alpha:
            pruned[graph.index_of(res.treatment), graph.index_of(res.outcome)] = 1
    pruned_graph = CausalGraph(pruned, list(graph.factor_names), finalized=True)
    return ancestors(pruned_graph, outcome)


def _soft_threshold(value: float, threshold: float) -> float:
    return math.copysign(max(abs(value) - threshold, 0.0), value)


def fit_linear(
    X: np.ndarray, y: np.ndarray, l1_lambda: float = 0.0
) -> tuple[np.ndarray, float]:
    """OLS (ridge fallback 1e-10) or, with l1_lambda > 0, coordinate-descent
    lasso on (1/2n)||y - Xw - b||^2 + lambda ||w||_1 with a free intercept."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = y.shape[0]
    if X.ndim != 2 or X.shape[0] != n:
        raise LengthMismatch("X rows must match y length")
    k = X.shape[1]
    if k == 0:
        return np.zeros(0), float(y.mean())

    if l1_lambda == 0.0:
        Z = np.column_stack([np.ones(n), X])
        A = Z.T @ Z
        b = Z.T @ y
        try:
            np.linalg.cholesky(A)
            coef = np.linalg.solve(A, b)
        except np.linalg.LinAlgError:
            coef = np.linalg.solve(A + 1e-10 * np.eye(k + 1), b)
        return coef[1:], float(coef[0])

    xsq = (X**2).mean(axis=0)
    w = np.zeros(k)
    intercept = float(y.mean())
    residual = y - intercept
    for _ in range(MAX_SWEEPS):
        max_change = 0.0
        delta_b = float(residual.mean())
        intercept += delta_b
        residual -= delta_b
        max_change = abs(delta_b)
        for j in range(k):
            if xsq[j] == 0.0:
                continue
            old = w[j]
            rho = float(X[:, j] @ residual) / n + xsq[j] * old
            new = _soft_threshold(rho, l1_lambda) / xsq[j]
            if new != old:
                residual += X[:, j] * (old - new)
                w[j] = new
            max_change = max(max_change, abs(new - old))
        if max_change < COORD_TOL:
            break
    return w, intercept


@dataclass
class MlpModel:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    loss_history: np.ndarray = field(repr=False)
    eval_history: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def predict(self, X: np.ndarray) -> np.ndarray:
        a = np.asarray(X, dtype=np.float64)
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            a = np.maximum(a @ W + b, 0.0)
        return (a @ self.weights[-1] + self.biases[-1]).ravel()


def mlp_loss_and_gradients(
    weights: list[np.ndarray],
    biases: list[np.ndarray],
    X: np.ndarray,
    y: np.ndarray,
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Mean-squared-error loss with hand-derived backprop gradients."""
    n = X.shape[0]
    activations = [np.asarray(X, dtype=np.float64)]
    for W, b in zip(weights[:-1], biases[:-1]):
        activations.append(np.maximum(activations[-1] @ W + b, 0.0))
    pred = (activations[-1] @ weights[-1] + biases[-1]).ravel()
    err = pred - y
    loss = float(np.mean(err**2))

    g_pred = (2.0 / n) * err[:, None]
    grads_w = [np.zeros_like(W) for W in weights]
    grads_b = [np.zeros_like(b) for b in biases]
    grads_w[-1] = activations[-1].T @ g_pred
    grads_b[-1] = g_pred.sum(axis=0)
    g_a = g_pred @ weights[-1].T
    for layer in range(len(weights) - 2, -1, -1):
        g_z = g_a * (activations[layer + 1] > 0)
        grads_w[layer] = activations[layer].T @ g_z
        grads_b[layer] = g_z.sum(axis=0)
        if layer > 0:
            g_a = g_z @ weights[layer].T
    return loss, grads_w, grads_b


def fit_mlp(
    X: np.ndarray,
    y: np.ndarray,
    config: MlpConfig,
    eval_sets: dict[str, tuple[np.ndarray, np.ndarray]] | None = None,
) -> MlpModel:
    """Full-batch gradient descent on a ReLU network with linear output.

    Deterministic for a fixed seed; per-epoch training loss (and RMSE on any
    eval sets) is recorded. A non-finite loss aborts with NonFiniteLoss.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 1:
        raise ValueError("X must have at least one feature column")
    rng = np.random.default_rng(config.seed)
    sizes = [X.shape[1], *config.hidden_sizes, 1]
    weights = [
        rng.normal(scale=np.sqrt(2.0 / sizes[i]), size=(sizes[i], sizes[i + 1]))
        for i in range(len(sizes) - 1)
    ]
    biases = [np.zeros(sizes[i + 1]) for i in range(len(sizes) - 1)]

    model = MlpModel(weights, biases, loss_history=np.empty(config.epochs))
    if eval_sets:
        model.eval_history = {
            name: np.empty(config.epochs) for name in eval_sets
        }
    for epoch in range(config.epochs):
        with np.errstate(over="ignore", invalid="ignore"):
            loss, grads_w, grads_b = mlp_loss_and_gradients(weights, biases, X, y)
        if not np.isfinite(loss):
            raise NonFiniteLoss(epoch, loss)
        for layer in range(len(weights)):
            weights[layer] -= config.learning_rate * grads_w[layer]
            biases[layer] -= config.learning_rate * grads_b[layer]
        model.loss_history[epoch] = loss
        if eval_sets:
            for name, (Xe, ye) in eval_sets.items():
                rmse, _ = evaluate(model.predict(Xe), ye)
                model.eval_history[name][epoch] = rmse
    return model


def evaluate(predictions: np.ndarray, targets: np.ndarray) -> tuple[float, float]:
    """(RMSE, MAE); RMSE >= MAE by the power-mean inequality."""
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape:
        raise LengthMismatch(
            f"length mismatch: {predictions.shape} vs {targets.shape}"
        )
    err = predictions - targets
    return float(np.sqrt(np.mean(err**2))), float(np.mean(np.abs(err)))


@dataclass(frozen=True)
class ExperimentRow:
    outcome: str
    strategy: str
    predictor: str
    train_fraction: float
    repeat: int
    rmse: float
    mae: float
    selected_features: tuple[str, ...]
    error: str = ""


@dataclass
class ExperimentReport:
    rows: list[ExperimentRow]

    def ok_rows(self) -> list[ExperimentRow]:
        return [r for r in self.rows if not r.error]

    def mean_metric(self, metric: str = "rmse", **filters) -> float:
        picked = [
            getattr(r, metric)
            for r in self.ok_rows()
            if all(getattr(r, key) == value for key, value in filters.items())
        ]
        return float(np.mean(picked))

    def summary(self) -> dict:
        """Per-(outcome, strategy, predictor) means/stds plus per-fraction means."""
        cells: dict[tuple, list[ExperimentRow]] = {}
        for row in self.ok_rows():
            cells.setdefault((row.outcome, row.strategy, row.predictor), []).append(row)
        out = []
        for (outcome, strategy, predictor), rows in sorted(cells.items()):
            rmses = np.array([r.rmse for r in rows])
            maes = np.array([r.mae for r in rows])
            fractions = sorted({r.train_fraction for r in rows})
            out.append(
                {
                    "outcome": outcome,
                    "strategy": strategy,
                    "predictor": predictor,
                    "rmse_mean": float(rmses.mean()),
                    "rmse_std": float(rmses.std()),
                    "mae_mean": float(maes.mean()),
                    "mae_std": float(maes.std()),
                    "by_fraction": {
                        str(f): {
                            "rmse_mean": float(
                                np.mean([r.rmse for r in rows if r.train_fraction == f])
                            ),
                            "mae_mean": float(
                                np.mean([r.mae for r in rows if r.train_fraction == f])
                            ),
                        }
                        for f in fractions
                    },
                }
            )
        n_failed = len(self.rows) - len(self.ok_rows())
        return {"cells": out, "n_rows": len(self.rows), "n_failed": n_failed}


def _train_standardizer(X: np.ndarray):
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std == 0.0, 1.0, std)
    return lambda A: (A - mean) / std


def _pick_l1_lambda(
    X: np.ndarray, y: np.ndarray, rng: np.random.Generator
) -> float:
    """Hold out a quarter of the rows, score the geometric grid, keep the
    lambda with the smallest validation RMSE."""
    n = X.shape[0]
    perm = rng.permutation(n)
    n_val = max(1, n // 4)
    val, sub = perm[:n_val], perm[n_val:]
    if sub.size == 0:
        return float(L1_GRID[0])
    best_rmse, best_lam = np.inf, float(L1_GRID[0])
    for lam in L1_GRID:
        w, b = fit_linear(X[sub], y[sub], float(lam))
        rmse, _ = evaluate(X[val] @ w + b, y[val])
        if rmse < best_rmse:
            best_rmse, best_lam = rmse, float(lam)
    return best_lam


def run_experiment(
    table: FactorTable,
    graph: CausalGraph,
    effects: list[effects_lib.AteResult],
    outcomes: list[str],
    strategies: list[SelectionStrategy],
    predictors: list[str],
    fractions: list[float],
    repeats: int,
    seed: int,
    levels: int = 4,
    mlp: MlpConfig | None = None,
) -> ExperimentReport:
    """Run the (outcome x strategy x predictor x fraction x repeat) grid.

    Each (fraction, repeat) cell draws a seeded train split; correlation
    p-values and causal effects are recomputed on the training rows only,
    shared across strategies so cells stay comparable. The graph topology
    is fixed (it is not re-discovered per split). Failed cells are recorded
    with an error tag and the grid continues. Deterministic given `seed`.

    The full-data `effects` argument documents the prerequisite stage; the
    selection itself always uses the split-recomputed effects.
    """
    if effects is None:
        raise ValueError("effects must be computed before running experiments")
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    if any(not 0.0 < f < 1.0 for f in fractions):
        raise ValueError("fractions must lie strictly between 0 and 1")
    mlp = mlp or MlpConfig()
    n = table.n_regions
    rows: list[ExperimentRow] = []

    # One permutation per repeat, sliced by fraction: larger fractions extend
    # the same training set, which keeps curves across fractions comparable.
    for fi, fraction in enumerate(fractions):
        for rep in range(repeats):
            rng = np.random.default_rng(np.random.SeedSequence([seed, rep]))
            perm = rng.permutation(n)
            n_train = int(math.ceil(fraction * n))
            train_idx = np.sort(perm[:n_train])
            test_idx = np.sort(perm[n_train:])
            train_table = table.subset_rows(train_idx)

            split_effects = effects_lib.estimate_all_effects(
                graph, train_table, k=levels
            ).ates

            for outcome in outcomes:
                y_train = train_table.column(outcome)
                y_test = table.values[test_idx, table.index_of(outcome)]
                for si, strategy in enumerate(strategies):
                    try:
                        features = sorted(
                            select_features(
                                strategy, train_table, graph, split_effects, outcome
                            )
                        )
                    except UrbanCausalError as exc:
                        for predictor in predictors:
                            rows.append(
                                ExperimentRow(
                                    outcome, strategy.label, predictor, fraction,
                                    rep, float("nan"), float("nan"), (),
                                    error=f"{type(exc).__name__}: {exc}",
                                )
                            )
                        continue

                    cols = [table.index_of(f) for f in features]
                    X_train = train_table.values[:, cols]
                    X_test = table.values[np.ix_(test_idx, cols)]
                    if cols:
                        scale = _train_standardizer(X_train)
                        X_train, X_test = scale(X_train), scale(X_test)

                    for pi, predictor in enumerate(predictors):
                        try:
                            if predictor == "linear":
                                lam = 0.0
                                if strategy.kind is StrategyKind.ALL_L1 and cols:
                                    if strategy.l1_lambda is not None:
                                        lam = strategy.l1_lambda
                                    else:
                                        lam_rng = np.random.default_rng(
                                            np.random.SeedSequence([seed, fi, rep, si, 101])
                                        )
                                        lam = _pick_l1_lambda(X_train, y_train, lam_rng)
                                w, b = fit_linear(X_train, y_train, lam)
                                preds = X_test @ w + b
                            elif predictor == "mlp":
                                if not cols:
                                    preds = np.full(test_idx.size, y_train.mean())
                                else:
                                    cell_seed = int(
                                        np.random.SeedSequence(
                                            [seed, fi, rep, si, pi, 7]
                                        ).generate_state(1)[0]
                                    )
                                    model = fit_mlp(
                                        X_train, y_train,
                                        replace(mlp, seed=cell_seed),
                                    )
                                    preds = model.predict(X_test)
                            else:
                                raise ValueError(f"unknown predictor {predictor!r}")
                            rmse, mae = evaluate(preds, y_test)
                            assert rmse >= mae - 1e-9
                            rows.append(
                                ExperimentRow(
                                    outcome, strategy.label, predictor, fraction,
                                    rep, rmse, mae, tuple(features),
                                )
                            )
                        except (UrbanCausalError, np.linalg.LinAlgError) as exc:
                            rows.append(
                                ExperimentRow(
                                    outcome, strategy.label, predictor, fraction,
                                    rep, float("nan"), float("nan"), tuple(features),
                                    error=f"{type(exc).__name__}: {exc}",
                                )
                            )
    return ExperimentReport(rows)


def epoch_curves(
    table: FactorTable,
    graph: CausalGraph,
    outcome: str,
    strategies: list[SelectionStrategy],
    mlp: MlpConfig,
    seed: int,
    levels: int = 4,
) -> list[tuple[str, int, float, float]]:
    """Per-epoch dev/test RMSE under a 20/20/60 train/dev/test split, one MLP
    per strategy, for overfitting curves."""
    n = table.n_regions
    rng = np.random.default_rng(np.random.SeedSequence([seed, 777]))
    perm = rng.permutation(n)
    n_train = int(math.ceil(0.2 * n))
    n_dev = int(math.ceil(0.2 * n))
    train_idx = np.sort(perm[:n_train])
    dev_idx = np.sort(perm[n_train : n_train + n_dev])
    test_idx = np.sort(perm[n_train + n_dev :])
    train_table = table.subset_rows(train_idx)

    split_effects = effects_lib.estimate_all_effects(graph, train_table, k=levels).ates

    out: list[tuple[str, int, float, float]] = []
    for si, strategy in enumerate(strategies):
        features = sorted(
            select_features(strategy, train_table, graph, split_effects, outcome)
        )
        if not features:
            continue
        cols = [table.index_of(f) for f in features]
        X_train = train_table.values[:, cols]
        scale = _train_standardizer(X_train)
        X_train = scale(X_train)
        X_dev = scale(table.values[np.ix_(dev_idx, cols)])
        X_test = scale(table.values[np.ix_(test_idx, cols)])
        y_train = train_table.column(outcome)
        y_dev = table.values[dev_idx, table.index_of(outcome)]
        y_test = table.values[test_idx, table.index_of(outcome)]

        cell_seed = int(
            np.random.SeedSequence([seed, 777, si]).generate_state(1)[0]
        )
        model = fit_mlp(
            X_train, y_train, replace(mlp, seed=cell_seed),
            eval_sets={"dev": (X_dev, y_dev), "test": (X_test, y_test)},
        )
        for epoch in range(mlp.epochs):
            out.append(
                (
                    strategy.label,
                    epoch,
                    float(model.eval_history["dev"][epoch]),
                    float(model.eval_history["test"][epoch]),
                )
            )
    return out
