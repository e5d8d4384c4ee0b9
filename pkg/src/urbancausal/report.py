"""Merge stage artifacts into a markdown summary and render figures.

Everything is read back from the files the pipeline commands wrote, so the
report is a pure function of the output directory's contents.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.colors import ListedColormap

from .graph import CausalGraph, causal_order

FIGURE_DPI = 120


def _read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _md_table(header: list[str], rows: list[list[str]]) -> str:
    lines = ["| " + " | ".join(header) + " |"]
    lines.append("|" + "|".join([" --- "] * len(header)) + "|")
    for row in rows:
        lines.append("| " + " | ".join(row) + " |")
    return "\n".join(lines)


def _fig_reward_history(path: Path, out: Path) -> None:
    header, rows = _read_csv(path)
    episodes = np.array([int(r[0]) for r in rows])
    mean_reward = np.array([float(r[1]) for r in rows])
    best_score = np.array([float(r[2]) for r in rows])
    fig, axes = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    axes[0].plot(episodes, mean_reward, lw=0.8)
    axes[0].set_ylabel("mean episode reward")
    axes[1].plot(episodes, best_score, lw=0.8, color="tab:orange")
    axes[1].set_ylabel("best score so far")
    axes[1].set_xlabel("episode")
    fig.tight_layout()
    fig.savefig(out, dpi=FIGURE_DPI)
    plt.close(fig)


def _fig_significance(path: Path, out: Path) -> None:
    header, rows = _read_csv(path)
    names = header[1:]
    matrix = np.array([[int(c) for c in row[1:]] for row in rows])
    fig, ax = plt.subplots(figsize=(0.45 * len(names) + 2.5, 0.45 * len(names) + 2))
    cmap = ListedColormap(["#b2182b", "#f7f7f7", "#2166ac"])  # neg, none, pos
    ax.imshow(matrix, cmap=cmap, vmin=-1, vmax=1)
    ax.set_xticks(range(len(names)), names, rotation=90, fontsize=7)
    ax.set_yticks(range(len(names)), names, fontsize=7)
    ax.set_xlabel("effect")
    ax.set_ylabel("cause")
    ax.set_title("significant causal effects (blue +, red -)")
    fig.tight_layout()
    fig.savefig(out, dpi=FIGURE_DPI)
    plt.close(fig)


def _fig_balance(path: Path, out: Path) -> bool:
    header, rows = _read_csv(path)
    if not rows:
        return False
    labels = [f"{r[0]} | {r[1]}" for r in rows]
    before = np.array([float(r[2]) for r in rows])
    after = np.array([float(r[3]) for r in rows])
    y = np.arange(len(labels))
    fig, ax = plt.subplots(figsize=(7, 0.35 * len(labels) + 1.8))
    ax.barh(y + 0.2, before, height=0.38, color="tab:orange", label="before matching")
    ax.barh(y - 0.2, after, height=0.38, color="tab:blue", label="after matching")
    ax.set_yticks(y, labels, fontsize=7)
    ax.invert_yaxis()
    ax.set_xlabel("standardized confounder difference")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out, dpi=FIGURE_DPI)
    plt.close(fig)
    return True


def _fig_prediction(path: Path, out: Path) -> None:
    header, rows = _read_csv(path)
    col = {name: i for i, name in enumerate(header)}
    ok = [r for r in rows if not r[col["error"]]]
    outcomes = sorted({r[col["outcome"]] for r in ok})
    predictors = sorted({r[col["predictor"]] for r in ok})
    fig, axes = plt.subplots(
        len(predictors),
        len(outcomes),
        figsize=(4.5 * len(outcomes), 3.2 * len(predictors)),
        squeeze=False,
    )
    for pi, predictor in enumerate(predictors):
        for oi, outcome in enumerate(outcomes):
            ax = axes[pi][oi]
            cell = [
                r
                for r in ok
                if r[col["predictor"]] == predictor and r[col["outcome"]] == outcome
            ]
            strategies = sorted({r[col["strategy"]] for r in cell})
            for strategy in strategies:
                pts: dict[float, list[float]] = {}
                for r in cell:
                    if r[col["strategy"]] == strategy:
                        pts.setdefault(float(r[col["train_fraction"]]), []).append(
                            float(r[col["rmse"]])
                        )
                fractions = sorted(pts)
                means = [float(np.mean(pts[f])) for f in fractions]
                ax.plot(fractions, means, marker="o", ms=3, label=strategy)
            ax.set_title(f"{outcome} ({predictor})", fontsize=9)
            ax.set_xlabel("training fraction")
            ax.set_ylabel("mean test RMSE")
            ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out, dpi=FIGURE_DPI)
    plt.close(fig)


def _fig_epoch_curves(path: Path, out: Path) -> None:
    header, rows = _read_csv(path)
    strategies = sorted({r[0] for r in rows})
    fig, axes = plt.subplots(
        1, len(strategies), figsize=(5 * len(strategies), 3.4), squeeze=False
    )
    for si, strategy in enumerate(strategies):
        ax = axes[0][si]
        sub = [r for r in rows if r[0] == strategy]
        epochs = [int(r[1]) for r in sub]
        ax.plot(epochs, [float(r[2]) for r in sub], lw=0.8, label="dev")
        ax.plot(epochs, [float(r[3]) for r in sub], lw=0.8, label="test")
        ax.set_title(strategy, fontsize=9)
        ax.set_xlabel("epoch")
        ax.set_ylabel("RMSE")
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out, dpi=FIGURE_DPI)
    plt.close(fig)


def write_report(out_dir: str | Path) -> list[str]:
    """Build summary.md plus figures/*.png from whatever artifacts exist.

    Requires graph.json; every other section is included when its stage
    output is present. Returns the list of files written (relative names).
    """
    out_dir = Path(out_dir)
    fig_dir = out_dir / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    written: list[str] = []
    sections: list[str] = ["# Run summary", ""]

    graph = CausalGraph.from_json((out_dir / "graph.json").read_text(encoding="utf-8"))
    payload = json.loads((out_dir / "graph.json").read_text(encoding="utf-8"))

    sections.append("## Discovered graph")
    sections.append("")
    sections.append(f"- factors: {graph.n_factors}")
    sections.append(f"- edges: {len(graph.edges())}")
    if "bic" in payload:
        sections.append(f"- score: {payload['bic']:.6f}")
    sections.append("")
    sections.append("### Causal order")
    sections.append("")
    levels = causal_order(graph)
    sections.append(
        _md_table(
            ["Level", "Factors"],
            [[str(i), ", ".join(sorted(level))] for i, level in enumerate(levels)],
        )
    )
    sections.append("")

    reward_csv = out_dir / "reward_history.csv"
    if reward_csv.exists():
        _fig_reward_history(reward_csv, fig_dir / "reward_history.png")
        written.append("figures/reward_history.png")
        sections.append("![training reward](figures/reward_history.png)")
        sections.append("")

    sig_csv = out_dir / "significance_matrix.csv"
    if sig_csv.exists():
        sections.append("## Significant effects")
        sections.append("")
        header, rows = _read_csv(sig_csv)
        mark = {"1": "+", "-1": "-", "0": ""}
        sections.append(
            _md_table(header, [[row[0]] + [mark[c] for c in row[1:]] for row in rows])
        )
        sections.append("")
        _fig_significance(sig_csv, fig_dir / "significance_matrix.png")
        written.append("figures/significance_matrix.png")
        sections.append("![significance matrix](figures/significance_matrix.png)")
        sections.append("")

    balance_csv = out_dir / "balance.csv"
    if balance_csv.exists():
        header, rows = _read_csv(balance_csv)
        if rows:
            sections.append("## Confounder balance")
            sections.append("")
            sections.append(
                _md_table(
                    ["Edge", "Confounder", "Before", "After"],
                    [
                        [r[0], r[1], f"{float(r[2]):.4f}", f"{float(r[3]):.4f}"]
                        for r in rows
                    ],
                )
            )
            sections.append("")
            if _fig_balance(balance_csv, fig_dir / "balance.png"):
                written.append("figures/balance.png")
                sections.append("![confounder balance](figures/balance.png)")
                sections.append("")

    experiment_csv = out_dir / "experiment.csv"
    if experiment_csv.exists():
        sections.append("## Prediction experiments")
        sections.append("")
        header, rows = _read_csv(experiment_csv)
        col = {name: i for i, name in enumerate(header)}
        ok = [r for r in rows if not r[col["error"]]]
        if ok:
            fractions = sorted({float(r[col["train_fraction"]]) for r in ok})
            smallest = fractions[0]
            outcomes = sorted({r[col["outcome"]] for r in ok})
            predictors = sorted({r[col["predictor"]] for r in ok})
            for outcome in outcomes:
                sections.append(
                    f"### {outcome}: mean RMSE / MAE at training fraction {smallest:g}"
                )
                sections.append("")
                table_rows = []
                strategies = sorted({r[col["strategy"]] for r in ok})
                for strategy in strategies:
                    row = [strategy]
                    for predictor in predictors:
                        picked = [
                            (float(r[col["rmse"]]), float(r[col["mae"]]))
                            for r in ok
                            if r[col["outcome"]] == outcome
                            and r[col["strategy"]] == strategy
                            and r[col["predictor"]] == predictor
                            and float(r[col["train_fraction"]]) == smallest
                        ]
                        if picked:
                            rmse = np.mean([p[0] for p in picked])
                            mae = np.mean([p[1] for p in picked])
                            row.append(f"{rmse:.4f} / {mae:.4f}")
                        else:
                            row.append("-")
                    table_rows.append(row)
                sections.append(
                    _md_table(["Inputs"] + list(predictors), table_rows)
                )
                sections.append("")
            _fig_prediction(experiment_csv, fig_dir / "prediction_rmse.png")
            written.append("figures/prediction_rmse.png")
            sections.append("![prediction curves](figures/prediction_rmse.png)")
            sections.append("")

    curves_csv = out_dir / "epoch_curves.csv"
    if curves_csv.exists():
        _fig_epoch_curves(curves_csv, fig_dir / "epoch_curves.png")
        written.append("figures/epoch_curves.png")
        sections.append("## Overfitting curves")
        sections.append("")
        sections.append("![epoch curves](figures/epoch_curves.png)")
        sections.append("")

    (out_dir / "summary.md").write_text("\n".join(sections), encoding="utf-8")
    written.insert(0, "summary.md")
    return written
