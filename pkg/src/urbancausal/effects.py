"""Deconfounded effect estimation on the edges of a causal graph.

For each confounded edge: discretize the treatment into quantile levels, fit
a proportional-odds model of level on the confounders, match every region to
its nearest cross-level neighbor by propensity distance, and average the
per-pair effects. Unconfounded edges reduce to a regression slope.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import expit

from .dataset import FactorTable, TreatmentAssignment, quantile_levels
from .errors import (
    Degenerate,
    DimensionMismatch,
    NotAnEdge,
    SingleLevel,
    UrbanCausalError,
    ZeroVariance,
)
from .graph import CausalGraph, ancestors

GRAD_TOL = 1e-6
MAX_ITER = 10_000


@dataclass(frozen=True)
class OrdinalModel:
    """Proportional-odds fit: confounder weights plus monotone thresholds."""

    w: np.ndarray
    theta: np.ndarray
    converged: bool
    final_loglik: float

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        theta = np.asarray(self.theta, dtype=np.float64)
        if not (np.isfinite(w).all() and np.isfinite(theta).all()):
            raise ValueError("model parameters must be finite")
        if np.any(np.diff(theta) < 0):
            raise ValueError("thresholds must be non-decreasing")
        if self.final_loglik > 0:
            raise ValueError("log-likelihood cannot be positive")
        w.setflags(write=False)
        theta.setflags(write=False)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "theta", theta)


@dataclass(frozen=True)
class MatchedPairs:
    """Each region paired with its nearest neighbor at a different level."""

    pairs: list[tuple[int, int, float]]
    levels: np.ndarray
    scores: np.ndarray


@dataclass(frozen=True)
class AteResult:
    treatment: str
    outcome: str
    ate: float
    p_value: float
    n_pairs: int
    significant: bool
    confounded: bool

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError("p_value must lie in [0, 1]")
        if self.significant != (self.p_value < 0.05):
            raise ValueError("significant flag must equal p_value < 0.05")


@dataclass(frozen=True)
class BalanceReport:
    """Standardized confounder gaps before (top vs bottom half) and after
    matching (higher vs lower pair member)."""

    confounders: list[str]
    rel_diff_before: np.ndarray
    rel_diff_after: np.ndarray


@dataclass
class EffectsResult:
    ates: list[AteResult]
    balances: dict[tuple[str, str], BalanceReport] = field(default_factory=dict)
    errors: list[tuple[str, str, str]] = field(default_factory=list)


def confounders_of(graph: CausalGraph, treatment: str, outcome: str) -> set[str]:
    """Common ancestors of both edge endpoints, where the path into the
    outcome does not run through the treatment."""
    if not graph.has_edge(treatment, outcome):
        raise NotAnEdge(treatment, outcome)
    treatment_ancestors = ancestors(graph, treatment)

    # Ancestors of the outcome in the graph with the treatment node removed.
    t = graph.index_of(treatment)
    pruned = graph.adjacency.copy()
    pruned[t, :] = 0
    pruned[:, t] = 0
    pruned_graph = CausalGraph(pruned, list(graph.factor_names), finalized=True)
    outcome_ancestors = ancestors(pruned_graph, outcome)

    common = treatment_ancestors & outcome_ancestors
    common.discard(treatment)
    common.discard(outcome)
    return common


def _log_sigmoid(z: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -z)


def _log1mexp(t: np.ndarray) -> np.ndarray:
    """log(1 - exp(t)) for t <= 0, stable over the whole range."""
    out = np.empty_like(t)
    small = t < -0.6931471805599453  # ln 2
    with np.errstate(divide="ignore"):
        out[small] = np.log1p(-np.exp(t[small]))
        out[~small] = np.log(-np.expm1(t[~small]))
    return out


def _thresholds_from_raw(raw: np.ndarray) -> np.ndarray:
    theta = np.empty_like(raw)
    theta[0] = raw[0]
    if raw.shape[0] > 1:
        theta[1:] = raw[0] + np.cumsum(np.exp(raw[1:]))
    return theta


def _raw_from_thresholds(theta: np.ndarray) -> np.ndarray:
    raw = np.empty_like(theta)
    raw[0] = theta[0]
    if theta.shape[0] > 1:
        raw[1:] = np.log(np.diff(theta))
    return raw


def ordinal_objective(
    params: np.ndarray, X: np.ndarray, levels: np.ndarray, k: int
) -> tuple[float, np.ndarray]:
    """Mean log-likelihood of the proportional-odds model and its gradient.

    `params` stacks the confounder weights with raw thresholds (first
    threshold free, later ones as log-increments, which keeps the fitted
    thresholds monotone by construction).
    """
    n, c = X.shape
    w = params[:c]
    raw = params[c:]
    theta = _thresholds_from_raw(raw)
    theta_ext = np.concatenate([[-np.inf], theta, [np.inf]])

    score = X @ w
    upper = theta_ext[levels] - score
    lower = theta_ext[levels - 1] - score

    logp = _log_sigmoid(upper) + _log_sigmoid(-lower) + _log1mexp(lower - upper)
    mean_ll = float(logp.mean())

    p = np.maximum(np.exp(logp), 1e-300)
    sig_upper = expit(upper)
    sig_lower = expit(lower)
    d_upper = sig_upper * (1.0 - sig_upper) / p
    d_lower = -sig_lower * (1.0 - sig_lower) / p

    grad_w = -X.T @ (d_upper + d_lower) / n

    grad_theta = np.zeros(k - 1)
    for j in range(1, k):
        grad_theta[j - 1] = (
            d_upper[levels == j].sum() + d_lower[levels == j + 1].sum()
        ) / n

    grad_raw = np.empty_like(grad_theta)
    suffix = np.cumsum(grad_theta[::-1])[::-1]
    grad_raw[0] = suffix[0]
    if k > 2:
        grad_raw[1:] = np.exp(raw[1:]) * suffix[1:]

    return mean_ll, np.concatenate([grad_w, grad_raw])


def fit_ordinal_regression(X: np.ndarray, levels: TreatmentAssignment) -> OrdinalModel:
    """Maximize the proportional-odds likelihood by gradient ascent with a
    backtracking line search; the likelihood never decreases across steps."""
    X = np.asarray(X, dtype=np.float64)
    lv = levels.levels
    k = levels.k
    n = lv.shape[0]
    if X.shape[0] != n:
        raise DimensionMismatch("X rows must match the treatment assignment")
    counts = np.bincount(lv, minlength=k + 1)[1:]
    if np.any(counts == 0):
        raise Degenerate("every treatment level must be occupied")
    c = X.shape[1]

    cum = np.cumsum(counts)[:-1] / n
    theta0 = np.log(cum / (1.0 - cum))
    params = np.concatenate([np.zeros(c), _raw_from_thresholds(theta0)])

    ll, grad = ordinal_objective(params, X, lv, k)
    converged = False
    step = 1.0
    for _ in range(MAX_ITER):
        gnorm = float(np.linalg.norm(grad))
        if gnorm < GRAD_TOL:
            converged = True
            break
        step = min(step * 2.0, 1e6)
        improved = False
        while step > 1e-20:
            candidate = params + step * grad
            cand_ll, cand_grad = ordinal_objective(candidate, X, lv, k)
            if cand_ll >= ll + 1e-4 * step * gnorm**2:
                params, ll, grad = candidate, cand_ll, cand_grad
                improved = True
                break
            step *= 0.5
        if not improved:
            break

    gnorm = float(np.linalg.norm(grad))
    converged = converged or gnorm < GRAD_TOL
    theta = _thresholds_from_raw(params[c:])
    return OrdinalModel(
        w=params[:c], theta=theta, converged=converged, final_loglik=n * ll
    )


def propensity_score(model: OrdinalModel, x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != model.w.shape:
        raise DimensionMismatch(f"expected vector of length {model.w.shape[0]}")
    return float(model.w @ x)


def match_pairs(scores: np.ndarray, levels: TreatmentAssignment) -> MatchedPairs:
    """Match every region with its nearest cross-level neighbor (with
    replacement) under distance |score_i - score_j| / |level_i - level_j|;
    ties go to the smaller index."""
    scores = np.asarray(scores, dtype=np.float64)
    lv = levels.levels
    n = scores.shape[0]
    if n < 2:
        raise ValueError("need at least two regions to match")
    if np.unique(lv).size < 2:
        raise SingleLevel("all regions share one treatment level")

    level_gap = np.abs(lv[:, None] - lv[None, :]).astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        dist = np.abs(scores[:, None] - scores[None, :]) / level_gap
    dist[level_gap == 0] = np.inf

    partner = np.argmin(dist, axis=1)
    pairs = [(i, int(partner[i]), float(dist[i, partner[i]])) for i in range(n)]
    return MatchedPairs(pairs=pairs, levels=lv, scores=scores)


def estimate_ate(
    pairs: MatchedPairs,
    outcome: np.ndarray,
    levels: TreatmentAssignment,
    treatment_name: str = "treatment",
    outcome_name: str = "outcome",
    confounded: bool = True,
) -> AteResult:
    """Average of per-pair effects (outcome gap over level gap) with a
    two-sided one-sample t-test against a zero mean."""
    outcome = np.asarray(outcome, dtype=np.float64)
    lv = levels.levels
    ite = np.array(
        [(outcome[i] - outcome[j]) / (lv[i] - lv[j]) for i, j, _ in pairs.pairs]
    )
    m = ite.shape[0]
    ate = float(ite.mean())
    sd = float(ite.std(ddof=1)) if m > 1 else 0.0
    if sd == 0.0:
        p_value = 0.0 if ate != 0.0 else 1.0
    else:
        t_stat = ate / (sd / np.sqrt(m))
        p_value = float(2.0 * stats.t.sf(abs(t_stat), df=m - 1))
    return AteResult(
        treatment=treatment_name,
        outcome=outcome_name,
        ate=ate,
        p_value=p_value,
        n_pairs=m,
        significant=p_value < 0.05,
        confounded=confounded,
    )


def naive_slope_estimate(outcome: np.ndarray, levels: TreatmentAssignment) -> float:
    """Unmatched baseline: top-half vs bottom-half outcome gap per level."""
    outcome = np.asarray(outcome, dtype=np.float64)
    lv = levels.levels
    top = lv > levels.k // 2
    return float(
        (outcome[top].mean() - outcome[~top].mean())
        / (lv[top].mean() - lv[~top].mean())
    )


def balance_report(
    X: np.ndarray, levels: TreatmentAssignment, pairs: MatchedPairs,
    confounder_names: list[str] | None = None,
) -> BalanceReport:
    """Standardized mean differences per confounder, before matching (levels
    over 2 vs the rest) and after (higher vs lower member of each pair).
    The denominator is the population std over all regions."""
    X = np.asarray(X, dtype=np.float64)
    if levels.k != 4:
        raise ValueError("balance report assumes the 4-level quantile design")
    if X.shape[1] < 1:
        raise ValueError("need at least one confounder column")
    if confounder_names is None:
        confounder_names = [f"c{j}" for j in range(X.shape[1])]

    pooled = X.std(axis=0)
    for j, s in enumerate(pooled):
        if s == 0.0:
            raise ZeroVariance(confounder_names[j])

    lv = levels.levels
    top = lv > 2
    before = np.abs(X[top].mean(axis=0) - X[~top].mean(axis=0)) / pooled

    hi_idx = [i if lv[i] > lv[j] else j for i, j, _ in pairs.pairs]
    lo_idx = [j if lv[i] > lv[j] else i for i, j, _ in pairs.pairs]
    after = np.abs(X[hi_idx].mean(axis=0) - X[lo_idx].mean(axis=0)) / pooled

    return BalanceReport(
        confounders=list(confounder_names),
        rel_diff_before=before,
        rel_diff_after=after,
    )


def _slope_and_correlation_p(t_col: np.ndarray, y_col: np.ndarray) -> tuple[float, float]:
    n = t_col.shape[0]
    var_t = t_col.var()
    if var_t == 0.0:
        raise ZeroVariance("treatment column")
    slope = float(np.cov(t_col, y_col, bias=True)[0, 1] / var_t)
    sy = y_col.std()
    if sy == 0.0:
        return slope, 1.0
    r = float(np.clip(np.corrcoef(t_col, y_col)[0, 1], -1.0, 1.0))
    with np.errstate(over="ignore"):
        t_stat = r * np.sqrt((n - 2) / max(1.0 - r**2, np.finfo(float).tiny))
    return slope, float(2.0 * stats.t.sf(abs(t_stat), df=n - 2))


def estimate_all_effects(
    graph: CausalGraph, table: FactorTable, k: int = 4
) -> EffectsResult:
    """Run the per-edge effect pipeline over every edge of a finalized graph.

    Edges without confounders get the regression slope and correlation test;
    confounded edges go through quantiles, the ordinal fit, matching, and the
    matched-pair t-test, plus a balance report. Per-edge failures are
    recorded and do not abort the remaining edges.
    """
    result = EffectsResult(ates=[])
    for treatment, outcome in graph.edges():
        try:
            confs = sorted(confounders_of(graph, treatment, outcome))
            t_col = table.column(treatment)
            y_col = table.column(outcome)
            if not confs:
                slope, p = _slope_and_correlation_p(t_col, y_col)
                result.ates.append(
                    AteResult(
                        treatment=treatment,
                        outcome=outcome,
                        ate=slope,
                        p_value=p,
                        n_pairs=0,
                        significant=p < 0.05,
                        confounded=False,
                    )
                )
                continue

            levels = quantile_levels(t_col, k, factor_index=table.index_of(treatment))
            raw = np.column_stack([table.column(c) for c in confs])
            means, stds = raw.mean(axis=0), raw.std(axis=0)
            for name, s in zip(confs, stds):
                if s == 0.0:
                    raise ZeroVariance(name)
            Xc = (raw - means) / stds

            model = fit_ordinal_regression(Xc, levels)
            scores = Xc @ model.w
            pairs = match_pairs(scores, levels)
            result.ates.append(
                estimate_ate(
                    pairs, y_col, levels,
                    treatment_name=treatment, outcome_name=outcome, confounded=True,
                )
            )
            if k == 4:
                result.balances[(treatment, outcome)] = balance_report(
                    Xc, levels, pairs, confounder_names=confs
                )
        except UrbanCausalError as exc:
            result.errors.append((treatment, outcome, f"{type(exc).__name__}: {exc}"))
    return result


def significance_matrix(
    graph: CausalGraph, ates: list[AteResult], alpha: float = 0.05
) -> np.ndarray:
    """Signed d x d significance encoding: +1 positive, -1 negative, 0 none."""
    d = graph.n_factors
    out = np.zeros((d, d), dtype=np.int64)
    for res in ates:
        if res.p_value < alpha and res.ate != 0.0:
            i = graph.index_of(res.treatment)
            j = graph.index_of(res.outcome)
            out[i, j] = 1 if res.ate > 0 else -1
    return out
