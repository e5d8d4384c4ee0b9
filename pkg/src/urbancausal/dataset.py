"""Region-by-factor tables: ingestion, standardization, quantile treatments,
correlation diagnostics, and a linear-Gaussian synthetic generator."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np
from scipy import stats

from .errors import (
    CyclicGraph,
    DimensionMismatch,
    EmptyTable,
    MissingColumn,
    NonNumericCell,
    TooFewRows,
    ZeroVariance,
)
from .graph import CausalGraph, causal_order

MISSING_TOKENS = {"", "na", "nan", "null", "n/a"}


class Dimension(str, Enum):
    CITIZENS = "Citizens"
    LOCATIONS = "Locations"
    MOBILITY = "Mobility"


@dataclass(frozen=True)
class FactorMeta:
    name: str
    dimension: Dimension
    description: str = ""


@dataclass(frozen=True)
class FactorTable:
    """Immutable n x d numeric matrix with per-factor metadata.

    All entries are finite after construction; operations return new tables.
    """

    values: np.ndarray
    meta: list[FactorMeta]
    region_ids: list[str]
    n_dropped_rows: int = field(default=0, compare=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("values must be a 2-d matrix")
        n, d = values.shape
        if n < 2 or d < 2:
            raise EmptyTable(f"need at least 2 regions and 2 factors, got {n}x{d}")
        if len(self.meta) != d:
            raise DimensionMismatch("meta length must equal column count")
        if len(self.region_ids) != n:
            raise DimensionMismatch("region_ids length must equal row count")
        if len(set(self.region_ids)) != n:
            raise ValueError("region_ids must be unique")
        names = [m.name for m in self.meta]
        if len(set(names)) != d:
            raise ValueError("factor names must be unique")
        if not np.isfinite(values).all():
            raise ValueError("values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n_regions(self) -> int:
        return self.values.shape[0]

    @property
    def n_factors(self) -> int:
        return self.values.shape[1]

    @property
    def factor_names(self) -> list[str]:
        return [m.name for m in self.meta]

    def index_of(self, name: str) -> int:
        for i, m in enumerate(self.meta):
            if m.name == name:
                return i
        raise MissingColumn(name)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.index_of(name)]

    def subset_rows(self, indices: np.ndarray) -> "FactorTable":
        idx = np.asarray(indices)
        return FactorTable(
            self.values[idx],
            list(self.meta),
            [self.region_ids[i] for i in idx],
        )


@dataclass(frozen=True)
class TreatmentAssignment:
    """Quantile-bucket levels 1..k for one factor across all regions."""

    levels: np.ndarray
    k: int
    factor_index: int = -1

    def __post_init__(self):
        levels = np.asarray(self.levels, dtype=np.int64)
        if levels.min() < 1 or levels.max() > self.k:
            raise ValueError(f"levels must lie in 1..{self.k}")
        levels.setflags(write=False)
        object.__setattr__(self, "levels", levels)


# The 16-factor schema of the reference dataset, grouped by dimension.
DEFAULT_SCHEMA: list[FactorMeta] = [
    FactorMeta("Total population", Dimension.CITIZENS),
    FactorMeta("Male rate", Dimension.CITIZENS),
    FactorMeta("Female rate", Dimension.CITIZENS),
    FactorMeta("Minors rate", Dimension.CITIZENS),
    FactorMeta("Elders rate", Dimension.CITIZENS),
    FactorMeta("Median age", Dimension.CITIZENS),
    FactorMeta("Poverty level", Dimension.CITIZENS),
    FactorMeta("Transport", Dimension.LOCATIONS),
    FactorMeta("Entertainment", Dimension.LOCATIONS),
    FactorMeta("Catering", Dimension.LOCATIONS),
    FactorMeta("Education", Dimension.LOCATIONS),
    FactorMeta("Service", Dimension.LOCATIONS),
    FactorMeta("Shopping", Dimension.LOCATIONS),
    FactorMeta("Proportion of people traveling by public transport", Dimension.MOBILITY),
    FactorMeta("Mean travel time to work", Dimension.MOBILITY),
    FactorMeta("Population mobility", Dimension.MOBILITY),
]


def load_schema(path: str | Path) -> list[FactorMeta]:
    """Read a schema file: JSON list of {name, dimension[, description]}."""
    entries = json.loads(Path(path).read_text(encoding="utf-8"))
    return [
        FactorMeta(e["name"], Dimension(e["dimension"]), e.get("description", ""))
        for e in entries
    ]


def save_schema(meta: list[FactorMeta], path: str | Path) -> None:
    entries = [
        {"name": m.name, "dimension": m.dimension.value, "description": m.description}
        for m in meta
    ]
    Path(path).write_text(json.dumps(entries, indent=2) + "\n", encoding="utf-8")


def load_factor_table(path: str | Path, schema: list[FactorMeta]) -> FactorTable:
    """Load a UTF-8 CSV (header row, `region_id` first column) against a schema.

    Columns are reordered to match the schema; extra columns are ignored.
    Rows containing missing or non-finite cells are dropped and counted in
    ``n_dropped_rows``; unparseable text raises NonNumericCell.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyTable(f"{path}: no header row") from None
        rows = list(reader)

    if not header or header[0] != "region_id":
        raise MissingColumn("region_id")
    col_index = {name: i for i, name in enumerate(header)}
    for m in schema:
        if m.name not in col_index:
            raise MissingColumn(m.name)
    take = [col_index[m.name] for m in schema]

    region_ids: list[str] = []
    data: list[list[float]] = []
    dropped = 0
    for r, row in enumerate(rows):
        parsed: list[float] = []
        ok = True
        for c in take:
            cell = row[c].strip() if c < len(row) else ""
            if cell.lower() in MISSING_TOKENS:
                ok = False
                break
            try:
                value = float(cell)
            except ValueError:
                raise NonNumericCell(r, header[c]) from None
            if not np.isfinite(value):
                ok = False
                break
            parsed.append(value)
        if ok:
            region_ids.append(row[0])
            data.append(parsed)
        else:
            dropped += 1

    if not data:
        raise EmptyTable(f"{path}: no valid rows after dropping {dropped}")
    return FactorTable(np.asarray(data), list(schema), region_ids, n_dropped_rows=dropped)


def write_factor_table(table: FactorTable, path: str | Path) -> None:
    """Write a table in the same CSV format consumed by load_factor_table."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["region_id"] + table.factor_names)
        for rid, row in zip(table.region_ids, table.values):
            writer.writerow([rid] + [repr(float(v)) for v in row])


def standardize(table: FactorTable) -> FactorTable:
    """Z-score every column using the population (1/n) standard deviation."""
    means = table.values.mean(axis=0)
    stds = table.values.std(axis=0)
    for j, s in enumerate(stds):
        if s == 0.0:
            raise ZeroVariance(table.meta[j].name)
    return replace(table, values=(table.values - means) / stds)


def quantile_levels(values: np.ndarray, k: int, factor_index: int = -1) -> TreatmentAssignment:
    """Assign rank-based quantile levels 1..k, near-equal bucket sizes.

    Ties are broken by original row order (stable sort); the first n mod k
    buckets in ascending value order take the extra region.
    """
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[0]
    if k < 2:
        raise ValueError("k must be at least 2")
    if n < k:
        raise TooFewRows(f"need at least {k} rows for {k} levels, got {n}")
    order = np.argsort(values, kind="stable")
    levels = np.empty(n, dtype=np.int64)
    for level, bucket in enumerate(np.array_split(order, k), start=1):
        levels[bucket] = level
    return TreatmentAssignment(levels, k, factor_index)


def correlation_matrix(table: FactorTable) -> tuple[np.ndarray, np.ndarray]:
    """Pairwise Pearson r with two-sided p-values (t distribution, n-2 df)."""
    n = table.n_regions
    stds = table.values.std(axis=0)
    for j, s in enumerate(stds):
        if s == 0.0:
            raise ZeroVariance(table.meta[j].name)
    r = np.corrcoef(table.values, rowvar=False)
    r = np.clip((r + r.T) / 2.0, -1.0, 1.0)
    np.fill_diagonal(r, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        t = r * np.sqrt((n - 2) / np.maximum(1.0 - r**2, np.finfo(float).tiny))
    p = 2.0 * stats.t.sf(np.abs(t), df=n - 2)
    np.fill_diagonal(p, 0.0)
    return r, p


def generate_synthetic_sem(
    graph: CausalGraph,
    weights: np.ndarray,
    noise_std: np.ndarray,
    n: int,
    seed: int,
    meta: list[FactorMeta] | None = None,
) -> FactorTable:
    """Sample n rows from a linear-Gaussian structural model on an acyclic graph.

    Column j is built in topological order as the weighted sum of its parent
    columns plus Normal(0, noise_std[j]^2) noise; weights[i, j] carries the
    coefficient of edge i -> j and must be zero off the graph's edges.
    Deterministic for a fixed seed.
    """
    d = graph.n_factors
    weights = np.asarray(weights, dtype=np.float64)
    noise_std = np.asarray(noise_std, dtype=np.float64)
    if weights.shape != (d, d):
        raise DimensionMismatch(f"weights must be {d}x{d}, got {weights.shape}")
    if noise_std.shape != (d,):
        raise DimensionMismatch(f"noise_std must have length {d}")
    if np.any(noise_std < 0):
        raise ValueError("noise_std entries must be non-negative")
    if np.any((weights != 0) & (graph.adjacency == 0)):
        raise ValueError("weights must be zero off the edge support")
    finalized = graph if graph.finalized else graph.finalize()  # raises CyclicGraph

    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((n, d)) * noise_std
    values = np.zeros((n, d))
    for level in causal_order(finalized):
        for name in sorted(level):
            j = finalized.index_of(name)
            parents = finalized.parents(j)
            values[:, j] = values[:, parents] @ weights[parents, j] + noise[:, j]

    if meta is None:
        meta = [
            FactorMeta(name, Dimension.CITIZENS, "synthetic factor")
            for name in finalized.factor_names
        ]
    region_ids = [f"r{i:05d}" for i in range(n)]
    return FactorTable(values, meta, region_ids)
