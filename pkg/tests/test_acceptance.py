"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines and timings.
"""

import hashlib
import json
import math
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

import urbancausal as uc
from urbancausal.cli import main as cli_main
from urbancausal.dataset import TreatmentAssignment
from urbancausal.discovery import (
    TrainConfig,
    acyclicity_penalty,
    exhaustive_search,
    train_discovery,
)
from urbancausal.discovery.policy import (
    PARAM_FIELDS,
    decode_edge_logits,
    encode,
    init_policy_params,
    sample_adjacency_batch,
    surrogate_gradients,
    surrogate_loss,
)
from urbancausal.effects import (
    estimate_all_effects,
    fit_ordinal_regression,
    naive_slope_estimate,
    ordinal_objective,
)
from urbancausal.graph import causal_order
from urbancausal.prediction import (
    SelectionStrategy,
    StrategyKind,
    mlp_loss_and_gradients,
    run_experiment,
)

from conftest import dfs_has_cycle, ordinal_sample, signflip_dataset, three_tier_fixture


@contextmanager
def criterion(number, name, limit_s):
    started = time.time()
    try:
        yield
        elapsed = time.time() - started
        assert elapsed < limit_s, f"runtime {elapsed:.1f}s exceeds {limit_s}s limit"
    except BaseException:
        print(f"[criterion {number}] {name}: FAIL")
        raise
    print(f"[criterion {number}] {name}: PASS ({elapsed:.1f}s)")


def preset_table(name, n, seed, **kwargs):
    spec = uc.presets.preset_spec(name, **kwargs)
    table = uc.generate_synthetic_sem(
        spec.graph, spec.weights, spec.noise_std, n=n, seed=seed, meta=spec.meta
    )
    return spec, uc.standardize(table)


def test_criterion_1_acyclicity_oracle_equivalence():
    with criterion(1, "acyclicity oracle equivalence", limit_s=5.0):
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            d = int(rng.integers(2, 9))
            adj = (rng.random((d, d)) < 0.3).astype(np.int8)
            np.fill_diagonal(adj, 0)
            assert (acyclicity_penalty(adj) == 0.0) == (not dfs_has_cycle(adj))
        two_cycle = acyclicity_penalty(np.array([[0, 1], [1, 0]]))
        assert abs(two_cycle - (2.0 * math.cosh(1.0) - 2.0)) < 1e-6


def test_criterion_2_bic_exhaustive_optimum_recovery():
    with criterion(2, "BIC exhaustive-optimum recovery", limit_s=300.0):
        for preset in ("chain3", "diamond4"):
            spec, table = preset_table(preset, n=1000, seed=11)
            _, oracle_score = exhaustive_search(table)
            hits = 0
            for seed in range(5):
                result = train_discovery(
                    table, TrainConfig(episodes=2000, batch_size=64, seed=seed)
                )
                if abs(result.best_score - oracle_score) < 1e-6:
                    hits += 1
            assert hits >= 4, f"{preset}: only {hits}/5 seeds reached the optimum"


def _relative_error(a, b):
    a = np.atleast_1d(np.asarray(a, dtype=np.float64)).ravel()
    b = np.atleast_1d(np.asarray(b, dtype=np.float64)).ravel()
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


def test_criterion_3_gradient_checks():
    with criterion(3, "gradient checks vs central differences", limit_s=60.0):
        # policy surrogate loss
        rng = np.random.default_rng(0)
        X = rng.standard_normal((10, 4))
        for trial in range(3):
            params = init_policy_params(10, 5, np.random.default_rng(300 + trial))
            logits = decode_edge_logits(encode(X, params), params)
            batch = sample_adjacency_batch(logits, 6, rng)
            advantages = rng.standard_normal(6) * 2.0
            _, grads = surrogate_gradients(X, params, batch, advantages)
            eps = 1e-5
            for name in PARAM_FIELDS:
                value = getattr(params, name)
                if np.ndim(value) == 0:
                    setattr(params, name, value + eps)
                    up = surrogate_loss(X, params, batch, advantages)
                    setattr(params, name, value - eps)
                    down = surrogate_loss(X, params, batch, advantages)
                    setattr(params, name, value)
                    fd = (up - down) / (2 * eps)
                else:
                    fd = np.zeros_like(value)
                    it = np.nditer(value, flags=["multi_index"])
                    for _ in it:
                        idx = it.multi_index
                        orig = value[idx]
                        value[idx] = orig + eps
                        up = surrogate_loss(X, params, batch, advantages)
                        value[idx] = orig - eps
                        down = surrogate_loss(X, params, batch, advantages)
                        value[idx] = orig
                        fd[idx] = (up - down) / (2 * eps)
                assert _relative_error(grads[name], fd) < 1e-4, name

        # ordinal regression log-likelihood
        Xo = rng.standard_normal((120, 2))
        lv = rng.integers(1, 5, size=120)
        for trial in range(3):
            point = np.random.default_rng(400 + trial).standard_normal(5)
            _, grad = ordinal_objective(point, Xo, lv, 4)
            fd = np.zeros_like(point)
            for i in range(point.size):
                up = point.copy()
                up[i] += 1e-6
                down = point.copy()
                down[i] -= 1e-6
                fd[i] = (
                    ordinal_objective(up, Xo, lv, 4)[0]
                    - ordinal_objective(down, Xo, lv, 4)[0]
                ) / 2e-6
            assert _relative_error(grad, fd) < 1e-4

        # MLP loss
        Xm = rng.standard_normal((5, 3))
        ym = rng.standard_normal(5)
        for trial in range(3):
            rng_m = np.random.default_rng(500 + trial)
            sizes = [3, 4, 1]
            weights = [
                rng_m.normal(scale=np.sqrt(2.0 / sizes[i]), size=(sizes[i], sizes[i + 1]))
                for i in range(2)
            ]
            biases = [rng_m.normal(size=sizes[i + 1]) * 0.1 for i in range(2)]
            _, grads_w, grads_b = mlp_loss_and_gradients(weights, biases, Xm, ym)
            for store, grads in ((weights, grads_w), (biases, grads_b)):
                for arr, grad in zip(store, grads):
                    fd = np.zeros_like(arr)
                    it = np.nditer(arr, flags=["multi_index"])
                    for _ in it:
                        idx = it.multi_index
                        orig = arr[idx]
                        arr[idx] = orig + 1e-6
                        up = mlp_loss_and_gradients(weights, biases, Xm, ym)[0]
                        arr[idx] = orig - 1e-6
                        down = mlp_loss_and_gradients(weights, biases, Xm, ym)[0]
                        arr[idx] = orig
                        fd[idx] = (up - down) / 2e-6
                    assert _relative_error(grad, fd) < 1e-4


def test_criterion_4_ordinal_parameter_recovery():
    with criterion(4, "ordinal parameter recovery", limit_s=30.0):
        X, lv = ordinal_sample([1.5], [-1.0, 0.0, 1.0], n=20_000, seed=7)
        model = fit_ordinal_regression(X, TreatmentAssignment(lv, 4))
        assert abs(model.w[0] - 1.5) <= 0.1
        assert np.abs(model.theta - np.array([-1.0, 0.0, 1.0])).max() <= 0.1

        levels = TreatmentAssignment(np.repeat([1, 2, 3, 4], 5000), 4)
        thresholds_only = fit_ordinal_regression(np.zeros((20_000, 0)), levels)
        expected = np.log(np.array([0.25, 0.5, 0.75]) / np.array([0.75, 0.5, 0.25]))
        assert np.abs(thresholds_only.theta - expected).max() <= 0.02


def test_criterion_5_balancing():
    with criterion(5, "confounder balancing after matching", limit_s=30.0):
        for seed in range(5):
            spec, table = preset_table(
                "confounded-triple", n=2000, seed=seed, confounder_weight=3.0
            )
            result = estimate_all_effects(spec.graph, table)
            balance = result.balances[("T", "Y")]
            for before, after in zip(balance.rel_diff_before, balance.rel_diff_after):
                assert before > 0.5
                assert after < 0.5 * before


def test_criterion_6_ate_recovery_and_sign_flip():
    with criterion(6, "ATE recovery under a sign-flipping confounder", limit_s=60.0):
        good_seeds = 0
        for seed in range(5):
            table, graph, truth = signflip_dataset(seed=seed, n=2000)
            raw_corr = np.corrcoef(table.column("T"), table.column("Y"))[0, 1]
            result = estimate_all_effects(graph, table)
            matched = next(
                a for a in result.ates if a.treatment == "T" and a.outcome == "Y"
            )
            naive = naive_slope_estimate(table.column("Y"), truth["levels"])
            ok = (
                1.5 <= matched.ate <= 2.5
                and matched.significant
                and raw_corr < 0
                and abs(naive - 2.0) > abs(matched.ate - 2.0)
            )
            good_seeds += ok
        assert good_seeds >= 3, f"only {good_seeds}/5 seeds satisfied the criterion"


def test_criterion_7_small_sample_selection_benefit():
    with criterion(7, "causal selection benefit and RMSE decline", limit_s=300.0):
        graph, table = three_tier_fixture(n=1500, seed=1)
        effects = estimate_all_effects(graph, table).ates
        strategies = [
            SelectionStrategy(StrategyKind.ALL_L1),
            SelectionStrategy(StrategyKind.CORRELATION_P),
            SelectionStrategy(StrategyKind.CAUSAL_ANCESTOR),
            SelectionStrategy(StrategyKind.CAUSAL_SIGNIFICANCE),
        ]
        fractions = [0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]
        report = run_experiment(
            table, graph, effects, ["Y"], strategies, ["linear"],
            fractions, repeats=5, seed=2,
        )
        assert not any(r.error for r in report.rows)

        cs = report.mean_metric("rmse", strategy="causal_significance", train_fraction=0.2)
        cp = report.mean_metric("rmse", strategy="correlation_p", train_fraction=0.2)
        assert cs <= cp, f"causal significance {cs} vs correlation {cp}"

        # aggregate decline: the mean curve ends below its start and trends down
        for strategy in strategies:
            curve = np.array(
                [
                    report.mean_metric("rmse", strategy=strategy.label, train_fraction=f)
                    for f in fractions
                ]
            )
            assert curve[-1] <= curve[0], f"{strategy.label}: {curve}"
            slope = np.polyfit(fractions, curve, 1)[0]
            assert slope < 0, f"{strategy.label}: slope {slope}"


def _run_chain(config_path, out_dir):
    for command in ("synth", "discover", "effects", "predict", "report"):
        code = cli_main([command, "--config", config_path, "--out", str(out_dir)])
        assert code == 0, f"{command} exited {code}"


def _tree_hashes(root: Path):
    out = {}
    for path in sorted(root.rglob("*")):
        if path.is_file() and path.name != "manifest.json":
            out[str(path.relative_to(root))] = hashlib.sha256(
                path.read_bytes()
            ).hexdigest()
    return out


def test_criterion_8_pipeline_determinism(tmp_path):
    with criterion(8, "byte-identical pipeline outputs", limit_s=600.0):
        suites = {
            "chain3": {
                "seed": 7,
                "synth": {"preset": "chain3", "n": 400},
                "discovery": {"episodes": 300, "batch_size": 32},
                "effects": {"levels": 4, "alpha": 0.05},
                "prediction": {
                    "outcomes": ["C"],
                    "predictors": ["linear"],
                    "fractions": [0.2, 0.5, 0.8],
                    "repeats": 2,
                },
            },
            "confounded-triple": {
                "seed": 21,
                "synth": {"preset": "confounded-triple", "n": 400},
                "discovery": {"episodes": 300, "batch_size": 32},
                "effects": {"levels": 4, "alpha": 0.05},
                "prediction": {
                    "outcomes": ["Y"],
                    "predictors": ["linear"],
                    "fractions": [0.2, 0.5, 0.8],
                    "repeats": 2,
                },
            },
        }
        for name, payload in suites.items():
            config_path = tmp_path / f"{name}.json"
            config_path.write_text(json.dumps(payload), encoding="utf-8")
            first = tmp_path / f"{name}-run1"
            second = tmp_path / f"{name}-run2"
            _run_chain(str(config_path), first)
            _run_chain(str(config_path), second)
            hashes_first = _tree_hashes(first)
            hashes_second = _tree_hashes(second)
            assert hashes_first, f"{name}: no outputs written"
            assert hashes_first == hashes_second, f"{name}: outputs differ"


def test_criterion_9_causal_order_on_diamond():
    with criterion(9, "causal order stratification", limit_s=1.0):
        spec = uc.presets.preset_spec("diamond4")
        assert causal_order(spec.graph) == [{"A"}, {"B", "C"}, {"D"}]
