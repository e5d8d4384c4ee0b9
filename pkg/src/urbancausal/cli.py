"""Pipeline entry point: synth -> discover -> effects -> predict -> report.

Each stage reads its inputs from files, writes its outputs under --out, and
is a pure function of (config, input files); timestamps live only in the
manifest. Exit codes: 0 ok, 1 validation error, 2 missing prerequisite,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import platform
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import matplotlib
import numpy as np
import scipy

from . import __version__, report as report_mod
from .dataset import (
    Dimension,
    FactorMeta,
    generate_synthetic_sem,
    load_factor_table,
    load_schema,
    save_schema,
    standardize,
    write_factor_table,
)
from .discovery import TrainConfig, train_discovery
from .effects import AteResult, estimate_all_effects, significance_matrix
from .errors import (
    ConfigError,
    InvalidGraphSpec,
    MissingStageOutput,
    UrbanCausalError,
)
from .graph import CausalGraph
from .prediction import (
    MlpConfig,
    SelectionStrategy,
    StrategyKind,
    epoch_curves,
    run_experiment,
)
from .presets import preset_spec

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_MISSING = 2
EXIT_NUMERICAL = 3

TOP_KEYS = {
    "seed", "out", "data", "schema", "standardize",
    "synth", "discovery", "effects", "prediction",
}
SYNTH_KEYS = {
    "preset", "n", "edge_weight", "noise_std", "confounder_weight",
    "factors", "adjacency", "weights",
}
DISCOVERY_KEYS = {
    "episodes", "batch_size", "learning_rate", "lambda_acyc",
    "minibatch_rows", "hidden_width",
}
EFFECTS_KEYS = {"levels", "alpha"}
PREDICTION_KEYS = {
    "outcomes", "strategies", "predictors", "fractions", "repeats",
    "alpha", "l1_lambda", "mlp", "epoch_curve", "epoch_curve_outcome",
}
MLP_KEYS = {"hidden_sizes", "epochs", "learning_rate"}


@dataclass
class RunConfig:
    raw: dict
    config_dir: Path
    out: Path
    seed: int

    def section(self, name: str) -> dict:
        return self.raw.get(name) or {}

    def resolve(self, key: str, default_name: str) -> Path:
        """Config paths resolve against the config file; omitted paths
        default to the stage artifact of the same name under --out."""
        value = self.raw.get(key)
        if value is None:
            return self.out / default_name
        return (self.config_dir / value).resolve()

    @property
    def standardize_data(self) -> bool:
        return bool(self.raw.get("standardize", True))


def _check_keys(section: dict, allowed: set[str], where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")


def load_config(path: str, out_override: str | None, seed_override: int | None) -> RunConfig:
    config_path = Path(path)
    if not config_path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(config_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    _check_keys(raw, TOP_KEYS, "top-level")
    _check_keys(raw.get("synth") or {}, SYNTH_KEYS, "synth")
    _check_keys(raw.get("discovery") or {}, DISCOVERY_KEYS, "discovery")
    _check_keys(raw.get("effects") or {}, EFFECTS_KEYS, "effects")
    _check_keys(raw.get("prediction") or {}, PREDICTION_KEYS, "prediction")
    _check_keys((raw.get("prediction") or {}).get("mlp") or {}, MLP_KEYS, "prediction.mlp")

    seed = seed_override if seed_override is not None else raw.get("seed")
    if seed is None:
        raise ConfigError("a seed is required (config 'seed' or --seed)")
    out = out_override if out_override is not None else raw.get("out")
    if out is None:
        raise ConfigError("an output directory is required (config 'out' or --out)")
    return RunConfig(
        raw=raw, config_dir=config_path.parent.resolve(),
        out=Path(out), seed=int(seed),
    )


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(
    cfg: RunConfig, command: str, inputs: list[Path], outputs: list[str],
    started: float, warnings: list | None = None,
) -> None:
    manifest = {
        "command": command,
        "seed": cfg.seed,
        "inputs": {str(p): _sha256(p) for p in inputs if p.exists()},
        "outputs": sorted(outputs),
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "matplotlib": matplotlib.__version__,
            "urbancausal": __version__,
        },
        "wall_time_s": time.time() - started,
        "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "warnings": warnings or [],
    }
    (cfg.out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _require_stage_file(path: Path) -> Path:
    if not path.exists():
        raise MissingStageOutput(str(path))
    return path


def _load_table(cfg: RunConfig):
    data_path = _require_stage_file(cfg.resolve("data", "data.csv"))
    schema_path = _require_stage_file(cfg.resolve("schema", "schema.json"))
    table = load_factor_table(data_path, load_schema(schema_path))
    if cfg.standardize_data:
        table = standardize(table)
    return table, [data_path, schema_path]


def _load_graph(cfg: RunConfig) -> tuple[CausalGraph, Path]:
    path = _require_stage_file(cfg.out / "graph.json")
    return CausalGraph.from_json(path.read_text(encoding="utf-8")), path


def _synth_spec(cfg: RunConfig):
    section = cfg.section("synth")
    if not section:
        raise ConfigError("synth command requires a 'synth' config section")
    if "preset" in section:
        kwargs = {}
        for key in ("edge_weight", "noise_std", "confounder_weight"):
            if key in section:
                kwargs[key] = float(section[key])
        return preset_spec(section["preset"], seed=cfg.seed, **kwargs)

    for key in ("factors", "adjacency", "weights", "noise_std"):
        if key not in section:
            raise InvalidGraphSpec(f"inline graph spec needs {key!r}")
    factors = section["factors"]
    try:
        meta = [FactorMeta(f["name"], Dimension(f["dimension"])) for f in factors]
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidGraphSpec(f"bad factors list: {exc}") from None
    names = [m.name for m in meta]
    adjacency = np.asarray(section["adjacency"], dtype=np.int8)
    weights = np.asarray(section["weights"], dtype=np.float64)
    noise = np.asarray(section["noise_std"], dtype=np.float64)
    d = len(names)
    if adjacency.shape != (d, d) or weights.shape != (d, d) or noise.shape != (d,):
        raise InvalidGraphSpec("adjacency/weights/noise_std shapes do not match factors")
    try:
        graph = CausalGraph(adjacency, names, finalized=True)
    except (ValueError, UrbanCausalError) as exc:
        raise InvalidGraphSpec(str(exc)) from None

    from .presets import SynthSpec

    return SynthSpec(graph, weights, noise, meta)


def cmd_synth(cfg: RunConfig) -> int:
    started = time.time()
    spec = _synth_spec(cfg)
    n = int(cfg.section("synth").get("n", 1000))
    table = generate_synthetic_sem(
        spec.graph, spec.weights, spec.noise_std, n=n, seed=cfg.seed, meta=spec.meta
    )
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_factor_table(table, cfg.out / "data.csv")
    save_schema(spec.meta, cfg.out / "schema.json")
    _write_json(
        cfg.out / "truth.json",
        {
            "factor_names": spec.graph.factor_names,
            "adjacency": spec.graph.adjacency.astype(int).tolist(),
            "weights": spec.weights.tolist(),
            "noise_std": spec.noise_std.tolist(),
            "seed": cfg.seed,
            "n": n,
        },
    )
    _write_manifest(cfg, "synth", [], ["data.csv", "schema.json", "truth.json"], started)
    return EXIT_OK


def cmd_discover(cfg: RunConfig) -> int:
    started = time.time()
    table, inputs = _load_table(cfg)
    section = cfg.section("discovery")
    config = TrainConfig(
        episodes=int(section.get("episodes", 2000)),
        batch_size=int(section.get("batch_size", 64)),
        learning_rate=float(section.get("learning_rate", 1e-3)),
        lambda_acyc=(
            float(section["lambda_acyc"]) if section.get("lambda_acyc") is not None else None
        ),
        minibatch_rows=int(section.get("minibatch_rows", 128)),
        hidden_width=int(section.get("hidden_width", 16)),
        seed=cfg.seed,
    )
    result = train_discovery(table, config)
    cfg.out.mkdir(parents=True, exist_ok=True)
    (cfg.out / "graph.json").write_text(
        result.best_graph.to_json(extra={"bic": result.best_score, "seed": cfg.seed})
        + "\n",
        encoding="utf-8",
    )
    (cfg.out / "graph.dot").write_text(result.best_graph.to_dot(), encoding="utf-8")
    _write_csv(
        cfg.out / "reward_history.csv",
        ["episode", "mean_reward", "best_score"],
        [
            [i, repr(float(r)), repr(float(b))]
            for i, (r, b) in enumerate(
                zip(result.reward_history, result.best_score_history)
            )
        ],
    )
    _write_manifest(
        cfg, "discover", inputs,
        ["graph.json", "graph.dot", "reward_history.csv"], started,
    )
    return EXIT_OK


def _ate_to_dict(res: AteResult) -> dict:
    return {
        "treatment": res.treatment,
        "outcome": res.outcome,
        "ate": res.ate,
        "p_value": res.p_value,
        "n_pairs": res.n_pairs,
        "significant": res.significant,
        "confounded": res.confounded,
    }


def cmd_effects(cfg: RunConfig) -> int:
    started = time.time()
    table, inputs = _load_table(cfg)
    graph, graph_path = _load_graph(cfg)
    section = cfg.section("effects")
    levels = int(section.get("levels", 4))
    alpha = float(section.get("alpha", 0.05))

    result = estimate_all_effects(graph, table, k=levels)
    _write_json(cfg.out / "effects.json", [_ate_to_dict(a) for a in result.ates])

    matrix = significance_matrix(graph, result.ates, alpha=alpha)
    names = graph.factor_names
    _write_csv(
        cfg.out / "significance_matrix.csv",
        ["cause"] + names,
        [[names[i]] + [int(v) for v in matrix[i]] for i in range(len(names))],
    )

    balance_rows = []
    for (treatment, outcome), bal in sorted(result.balances.items()):
        for name, before, after in zip(
            bal.confounders, bal.rel_diff_before, bal.rel_diff_after
        ):
            balance_rows.append(
                [f"{treatment}->{outcome}", name, repr(float(before)), repr(float(after))]
            )
    _write_csv(
        cfg.out / "balance.csv",
        ["edge", "confounder", "rel_diff_before", "rel_diff_after"],
        balance_rows,
    )
    warnings = [
        {"edge": f"{t}->{o}", "error": msg} for t, o, msg in result.errors
    ]
    _write_manifest(
        cfg, "effects", inputs + [graph_path],
        ["effects.json", "significance_matrix.csv", "balance.csv"], started,
        warnings=warnings,
    )
    return EXIT_OK


def _load_effects(path: Path) -> list[AteResult]:
    payload = json.loads(path.read_text(encoding="utf-8"))
    return [
        AteResult(
            treatment=e["treatment"],
            outcome=e["outcome"],
            ate=e["ate"],
            p_value=e["p_value"],
            n_pairs=e["n_pairs"],
            significant=e["significant"],
            confounded=e["confounded"],
        )
        for e in payload
    ]


def _strategies_from(section: dict) -> list[SelectionStrategy]:
    names = section.get(
        "strategies",
        ["all_l1", "correlation_p", "causal_ancestor", "causal_significance"],
    )
    alpha = float(section.get("alpha", 0.05))
    l1_lambda = section.get("l1_lambda")
    out = []
    for name in names:
        try:
            kind = StrategyKind(name)
        except ValueError:
            raise ConfigError(f"unknown strategy {name!r}") from None
        out.append(
            SelectionStrategy(
                kind,
                alpha=alpha,
                l1_lambda=(
                    float(l1_lambda)
                    if l1_lambda is not None and kind is StrategyKind.ALL_L1
                    else None
                ),
            )
        )
    return out


def cmd_predict(cfg: RunConfig) -> int:
    started = time.time()
    table, inputs = _load_table(cfg)
    graph, graph_path = _load_graph(cfg)
    effects_path = _require_stage_file(cfg.out / "effects.json")
    effects = _load_effects(effects_path)

    section = cfg.section("prediction")
    outcomes = section.get("outcomes") or [
        m.name for m in table.meta if m.dimension == Dimension.MOBILITY
    ]
    if not outcomes:
        raise ConfigError("no Mobility outcomes available to predict")
    strategies = _strategies_from(section)
    predictors = section.get("predictors", ["linear"])
    fractions = [float(f) for f in section.get("fractions", [0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8])]
    repeats = int(section.get("repeats", 5))
    levels = int(cfg.section("effects").get("levels", 4))
    mlp_section = section.get("mlp") or {}
    mlp = MlpConfig(
        hidden_sizes=tuple(mlp_section.get("hidden_sizes", (64, 64))),
        epochs=int(mlp_section.get("epochs", 6000)),
        learning_rate=float(mlp_section.get("learning_rate", 0.01)),
    )

    report = run_experiment(
        table, graph, effects, outcomes, strategies, predictors,
        fractions, repeats, seed=cfg.seed, levels=levels, mlp=mlp,
    )
    _write_csv(
        cfg.out / "experiment.csv",
        [
            "outcome", "strategy", "predictor", "train_fraction", "repeat",
            "rmse", "mae", "selected_features", "error",
        ],
        [
            [
                r.outcome, r.strategy, r.predictor, repr(r.train_fraction), r.repeat,
                repr(r.rmse), repr(r.mae), ";".join(r.selected_features), r.error,
            ]
            for r in report.rows
        ],
    )
    _write_json(cfg.out / "experiment_summary.json", report.summary())
    outputs = ["experiment.csv", "experiment_summary.json"]

    if section.get("epoch_curve"):
        outcome = section.get("epoch_curve_outcome", outcomes[0])
        rows = epoch_curves(
            table, graph, outcome, strategies, mlp, seed=cfg.seed, levels=levels
        )
        _write_csv(
            cfg.out / "epoch_curves.csv",
            ["strategy", "epoch", "dev_rmse", "test_rmse"],
            [[s, e, repr(d), repr(t)] for s, e, d, t in rows],
        )
        outputs.append("epoch_curves.csv")

    _write_manifest(
        cfg, "predict", inputs + [graph_path, effects_path], outputs, started
    )
    return EXIT_OK


def cmd_report(cfg: RunConfig) -> int:
    started = time.time()
    graph_path = _require_stage_file(cfg.out / "graph.json")
    written = report_mod.write_report(cfg.out)
    _write_manifest(cfg, "report", [graph_path], written, started)
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "discover": cmd_discover,
    "effects": cmd_effects,
    "predict": cmd_predict,
    "report": cmd_report,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="urbancausal",
        description="Causal discovery, effect estimation, and prediction pipeline.",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="path to the JSON run config")
    parser.add_argument("--out", default=None, help="output directory (overrides config)")
    parser.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.out, args.seed)
        cfg.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg)
    except MissingStageOutput as exc:
        _emit_error(exc, EXIT_MISSING)
        return EXIT_MISSING
    except (ConfigError, InvalidGraphSpec) as exc:
        _emit_error(exc, EXIT_VALIDATION)
        return EXIT_VALIDATION
    except (UrbanCausalError, ValueError, np.linalg.LinAlgError) as exc:
        _emit_error(exc, EXIT_NUMERICAL)
        return EXIT_NUMERICAL


def _emit_error(exc: Exception, code: int) -> None:
    print(
        json.dumps(
            {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
        ),
        file=sys.stderr,
    )


if __name__ == "__main__":
    sys.exit(main())
