"""Trainable graph-sampling policy: a self-attention encoder embeds each
factor column, a bilinear decoder scores every directed edge, and graphs are
drawn entry-wise Bernoulli from the edge logits.

Gradients are hand-derived; `surrogate_gradients` is checked against central
finite differences in the test suite."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeMismatch
from ..graph import CausalGraph

PARAM_FIELDS = ("w_embed", "w_query", "w_key", "w_value", "w_ff", "w_dec", "b_dec")


@dataclass
class PolicyParams:
    """Encoder/decoder weights plus the scalar critic baseline."""

    w_embed: np.ndarray  # (m, h) input projection of each factor column
    w_query: np.ndarray  # (h, h)
    w_key: np.ndarray  # (h, h)
    w_value: np.ndarray  # (h, h)
    w_ff: np.ndarray  # (h, h) post-attention feed-forward
    w_dec: np.ndarray  # (h, h) bilinear edge scorer
    b_dec: float
    baseline: float = 0.0

    def validate(self, m: int | None = None) -> None:
        h = self.w_query.shape[0]
        shapes = {
            "w_query": (h, h),
            "w_key": (h, h),
            "w_value": (h, h),
            "w_ff": (h, h),
            "w_dec": (h, h),
        }
        for name, want in shapes.items():
            got = getattr(self, name).shape
            if got != want:
                raise ShapeMismatch(f"{name} must be {want}, got {got}")
        if self.w_embed.shape[1] != h:
            raise ShapeMismatch("w_embed second dimension must equal hidden width")
        if m is not None and self.w_embed.shape[0] != m:
            raise ShapeMismatch(
                f"w_embed expects {self.w_embed.shape[0]} state rows, got {m}"
            )
        for name in PARAM_FIELDS[:-1]:
            if not np.isfinite(getattr(self, name)).all():
                raise ValueError(f"{name} contains non-finite entries")
        if not np.isfinite(self.b_dec):
            raise ValueError("b_dec must be finite")


def init_policy_params(m: int, h: int, rng: np.random.Generator) -> PolicyParams:
    return PolicyParams(
        w_embed=rng.normal(scale=1.0 / np.sqrt(m), size=(m, h)),
        w_query=rng.normal(scale=1.0 / np.sqrt(h), size=(h, h)),
        w_key=rng.normal(scale=1.0 / np.sqrt(h), size=(h, h)),
        w_value=rng.normal(scale=1.0 / np.sqrt(h), size=(h, h)),
        w_ff=rng.normal(scale=1.0 / np.sqrt(h), size=(h, h)),
        w_dec=rng.normal(scale=0.01 / np.sqrt(h), size=(h, h)),
        b_dec=0.0,
        baseline=0.0,
    )


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _forward(state_rows: np.ndarray, params: PolicyParams) -> dict:
    X = np.asarray(state_rows, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeMismatch("state_rows must be an m x d matrix")
    params.validate(m=X.shape[0])
    h = params.w_query.shape[0]

    e0 = X.T @ params.w_embed  # (d, h) one embedding per factor
    q = e0 @ params.w_query
    k = e0 @ params.w_key
    v = e0 @ params.w_value
    scores = q @ k.T / np.sqrt(h)
    attn = _softmax_rows(scores)
    z = attn @ v
    r = np.maximum(z, 0.0)
    s = e0 + r @ params.w_ff  # residual keeps the raw projection visible
    return {"X": X, "e0": e0, "q": q, "k": k, "v": v, "attn": attn, "z": z, "r": r, "s": s}


def encode(state_rows: np.ndarray, params: PolicyParams) -> np.ndarray:
    """Embed each factor column into an h-vector (attention mixes columns)."""
    return _forward(state_rows, params)["s"]


def decode_edge_logits(embeddings: np.ndarray, params: PolicyParams) -> np.ndarray:
    """Bilinear edge logits s_i' W s_j + b; the diagonal is forced to -inf."""
    s = np.asarray(embeddings, dtype=np.float64)
    if s.ndim != 2 or s.shape[1] != params.w_dec.shape[0]:
        raise ShapeMismatch(f"embeddings must be d x {params.w_dec.shape[0]}")
    logits = s @ params.w_dec @ s.T + params.b_dec
    np.fill_diagonal(logits, -np.inf)
    return logits


def edge_probabilities(logits: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        p = 1.0 / (1.0 + np.exp(-logits))
    np.fill_diagonal(p, 0.0)
    return p


def sample_log_prob(logits: np.ndarray, adjacency: np.ndarray) -> float:
    """Log-probability of a sampled adjacency under independent edge draws."""
    d = logits.shape[0]
    off = ~np.eye(d, dtype=bool)
    l = logits[off]
    u = np.asarray(adjacency, dtype=np.float64)[off]
    # log sigma(l) = -softplus(-l); log(1 - sigma(l)) = -softplus(l)
    return float(-(u * np.logaddexp(0.0, -l) + (1.0 - u) * np.logaddexp(0.0, l)).sum())


def sample_graph(
    logits: np.ndarray,
    rng_seed: int | np.random.Generator,
    factor_names: list[str] | None = None,
) -> tuple[CausalGraph, float]:
    """Draw one adjacency entry-wise Bernoulli(sigmoid(logit)); returns the
    (not finalized) graph and its sample log-probability."""
    rng = (
        rng_seed
        if isinstance(rng_seed, np.random.Generator)
        else np.random.default_rng(rng_seed)
    )
    p = edge_probabilities(np.asarray(logits, dtype=np.float64))
    d = p.shape[0]
    adjacency = (rng.random((d, d)) < p).astype(np.int8)
    np.fill_diagonal(adjacency, 0)
    if factor_names is None:
        factor_names = [f"f{i}" for i in range(d)]
    graph = CausalGraph(adjacency, factor_names, finalized=False)
    return graph, sample_log_prob(logits, adjacency)


def sample_adjacency_batch(
    logits: np.ndarray, batch_size: int, rng: np.random.Generator
) -> np.ndarray:
    p = edge_probabilities(logits)
    d = p.shape[0]
    batch = (rng.random((batch_size, d, d)) < p).astype(np.int8)
    batch[:, np.arange(d), np.arange(d)] = 0
    return batch


def surrogate_loss(
    state_rows: np.ndarray,
    params: PolicyParams,
    adjacency_batch: np.ndarray,
    advantages: np.ndarray,
) -> float:
    """REINFORCE surrogate: -mean_b advantage_b * log p(graph_b | params)."""
    cache = _forward(state_rows, params)
    logits = decode_edge_logits(cache["s"], params)
    total = 0.0
    for adj, adv in zip(adjacency_batch, advantages):
        total += adv * sample_log_prob(logits, adj)
    return -total / len(advantages)


def surrogate_gradients(
    state_rows: np.ndarray,
    params: PolicyParams,
    adjacency_batch: np.ndarray,
    advantages: np.ndarray,
) -> tuple[float, dict[str, np.ndarray | float]]:
    """Loss value and its gradient w.r.t. every policy parameter."""
    cache = _forward(state_rows, params)
    s = cache["s"]
    d = s.shape[0]
    h = params.w_query.shape[0]
    batch = np.asarray(adjacency_batch, dtype=np.float64)
    adv = np.asarray(advantages, dtype=np.float64)
    n_batch = batch.shape[0]

    logits_raw = s @ params.w_dec @ s.T + params.b_dec
    off = ~np.eye(d, dtype=bool)
    with np.errstate(over="ignore"):
        p = 1.0 / (1.0 + np.exp(-logits_raw))

    loss = 0.0
    for b in range(n_batch):
        l = logits_raw[off]
        u = batch[b][off]
        loss -= adv[b] * float(
            -(u * np.logaddexp(0.0, -l) + (1.0 - u) * np.logaddexp(0.0, l)).sum()
        )
    loss /= n_batch

    # d loss / d logit[i,j] = -(1/B) sum_b adv_b (u_b[i,j] - p[i,j]) off-diagonal
    g_logits = -(np.tensordot(adv, batch, axes=(0, 0)) - adv.sum() * p) / n_batch
    g_logits[~off] = 0.0

    g_s = g_logits @ s @ params.w_dec.T + g_logits.T @ s @ params.w_dec
    g_w_dec = s.T @ g_logits @ s
    g_b_dec = float(g_logits.sum())

    # s = e0 + relu(z) @ w_ff
    g_w_ff = cache["r"].T @ g_s
    g_r = g_s @ params.w_ff.T
    g_e0 = g_s.copy()
    g_z = g_r * (cache["z"] > 0)

    # z = attn @ v ; attn = rowsoftmax(q k' / sqrt(h))
    attn = cache["attn"]
    g_attn = g_z @ cache["v"].T
    g_v = attn.T @ g_z
    g_scores = attn * (g_attn - (attn * g_attn).sum(axis=1, keepdims=True))
    g_q = g_scores @ cache["k"] / np.sqrt(h)
    g_k = g_scores.T @ cache["q"] / np.sqrt(h)

    e0 = cache["e0"]
    g_w_query = e0.T @ g_q
    g_w_key = e0.T @ g_k
    g_w_value = e0.T @ g_v
    g_e0 += g_q @ params.w_query.T + g_k @ params.w_key.T + g_v @ params.w_value.T
    g_w_embed = cache["X"] @ g_e0

    grads = {
        "w_embed": g_w_embed,
        "w_query": g_w_query,
        "w_key": g_w_key,
        "w_value": g_w_value,
        "w_ff": g_w_ff,
        "w_dec": g_w_dec,
        "b_dec": g_b_dec,
    }
    return loss, grads
