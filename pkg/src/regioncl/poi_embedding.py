"""POI-aware region representations.

Pipeline: a skip-gram model embeds POI categories from same-region
co-occurrence (frozen preprocessing), each region pools its categories'
vectors weighted by count, a 2-layer perceptron projects the pooled vector
to the working dimension, and region-wise multi-head self-attention with a
residual connection spreads information across regions.

Corpus convention: every region contributes one sentence listing each
category token min(count, window_cap) times; the context window is the whole
sentence. Because the window is the sentence, pair frequencies collapse to a
category co-occurrence matrix and training runs full-batch over its nonzero
entries with freshly sampled negatives per epoch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .errors import ConfigError, DataError, ShapeError
from .numcore import GradientTape, Tensor
from .region_data import PoiMatrix


@dataclass(frozen=True)
class SkipgramConfig:
    d_sg: int = 96
    window_cap: int = 20
    negatives: int = 5
    # one full-batch step per epoch over frequency-normalized pair weights,
    # so the step size is large by minibatch standards
    epochs: int = 200
    lr: float = 2.0
    seed: int = 0


def cooccurrence(poi: PoiMatrix, window_cap: int) -> np.ndarray:
    """Category-pair counts implied by the one-sentence-per-region corpus.

    For a sentence with m_a copies of token a, ordered (center, context)
    pairs number m_a * m_b for a != b and m_a * (m_a - 1) on the diagonal.
    """
    m = np.minimum(poi.counts, window_cap).astype(np.float64)
    M = m.T @ m
    np.fill_diagonal(M, (m * m).sum(axis=0) - m.sum(axis=0))
    return M


def train_skipgram(poi: PoiMatrix, cfg: SkipgramConfig) -> np.ndarray:
    """Negative-sampling skip-gram over the co-occurrence corpus.

    Returns the (C, d_sg) center-vector table. A corpus with categories but
    no co-occurring pairs trains zero steps and returns the initialization;
    an all-zero POI matrix is an error.
    """
    if not np.any(poi.counts > 0):
        raise DataError("empty POI corpus")
    C = poi.n_categories
    rng = np.random.default_rng(cfg.seed)
    center = rng.normal(scale=0.5 / np.sqrt(cfg.d_sg), size=(C, cfg.d_sg))
    context = rng.normal(scale=0.5 / np.sqrt(cfg.d_sg), size=(C, cfg.d_sg))

    M = cooccurrence(poi, cfg.window_cap)
    a_idx, b_idx = np.nonzero(M)
    if a_idx.size == 0:
        return center
    w = M[a_idx, b_idx]
    w = w / w.sum()

    token_counts = np.minimum(poi.counts, cfg.window_cap).sum(axis=0)
    noise = np.power(token_counts.astype(np.float64), 0.75)
    if noise.sum() == 0.0:
        raise DataError("empty POI corpus")
    noise = noise / noise.sum()

    def sigmoid(x):
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out

    for _ in range(cfg.epochs):
        # positive pairs, full batch weighted by corpus frequency
        u = center[a_idx]
        v = context[b_idx]
        s = sigmoid((u * v).sum(axis=1))
        coef = (w * (s - 1.0))[:, None]
        gu = coef * v
        gv = coef * u
        # negatives: fresh draws each epoch from the unigram^0.75 table
        negs = rng.choice(C, size=(a_idx.size, cfg.negatives), p=noise)
        vn = context[negs]                                # (P, N, d)
        sn = sigmoid(np.einsum("pd,pnd->pn", u, vn))
        coef_n = w[:, None] * sn / cfg.negatives
        gu += np.einsum("pn,pnd->pd", coef_n, vn)
        gvn = coef_n[:, :, None] * u[:, None, :]
        np.subtract.at(center, a_idx, cfg.lr * gu)
        np.subtract.at(context, b_idx, cfg.lr * gv)
        np.subtract.at(context, negs.reshape(-1),
                       cfg.lr * gvn.reshape(-1, cfg.d_sg))
    return center


def pooled_vectors(table: np.ndarray, poi: PoiMatrix) -> np.ndarray:
    """Count-weighted mean of category vectors per region; zero rows stay 0."""
    if table.shape[0] != poi.n_categories:
        raise ShapeError(f"table has {table.shape[0]} categories, POI matrix "
                         f"has {poi.n_categories}")
    counts = poi.counts.astype(np.float64)
    totals = counts.sum(axis=1, keepdims=True)
    safe = np.where(totals > 0, totals, 1.0)
    return (counts @ table) / safe


@dataclass
class MlpParams:
    """y = W2 relu(W1 x + b1) + b2, applied row-wise."""
    w1: Tensor    # (hidden, d_in)
    b1: Tensor    # (1, hidden)
    w2: Tensor    # (d_out, hidden)
    b2: Tensor    # (1, d_out)

    @property
    def d_in(self) -> int:
        return self.w1.data.shape[1]

    @property
    def d_out(self) -> int:
        return self.w2.data.shape[0]


def init_mlp(tape: GradientTape, prefix: str, d_in: int, d_hidden: int,
             d_out: int, rng: np.random.Generator) -> MlpParams:
    def p(name, shape, scale):
        return tape.parameter(f"{prefix}.{name}",
                              rng.normal(scale=scale, size=shape))

    return MlpParams(
        w1=p("w1", (d_hidden, d_in), 1.0 / np.sqrt(d_in)),
        b1=tape.parameter(f"{prefix}.b1", np.zeros((1, d_hidden))),
        w2=p("w2", (d_out, d_hidden), 1.0 / np.sqrt(d_hidden)),
        b2=tape.parameter(f"{prefix}.b2", np.zeros((1, d_out))))


def mlp_forward(x: Tensor, mlp: MlpParams) -> Tensor:
    h = nc.relu(nc.add(nc.matmul(x, nc.transpose(mlp.w1)), mlp.b1))
    return nc.add(nc.matmul(h, nc.transpose(mlp.w2)), mlp.b2)


def project_regions(table: np.ndarray, poi: PoiMatrix,
                    mlp: MlpParams) -> Tensor:
    """Pooled category vectors pushed through the projection perceptron."""
    pooled = pooled_vectors(table, poi)
    if pooled.shape[1] != mlp.d_in:
        raise ShapeError(f"pooled dimension {pooled.shape[1]} vs MLP input "
                         f"{mlp.d_in}")
    return mlp_forward(Tensor(pooled), mlp)


@dataclass
class AttentionParams:
    """Per-head projections, each (d/H, d)."""
    q: list[Tensor]
    k: list[Tensor]
    v: list[Tensor]

    @property
    def heads(self) -> int:
        return len(self.q)

    @property
    def d_model(self) -> int:
        return self.q[0].data.shape[1]


def init_attention(tape: GradientTape, prefix: str, d: int, heads: int,
                   rng: np.random.Generator) -> AttentionParams:
    if d % heads != 0:
        raise ConfigError(f"embedding dim {d} not divisible by {heads} heads")
    dh = d // heads
    scale = 1.0 / np.sqrt(d)

    def bank(name):
        return [tape.parameter(f"{prefix}.{name}{h}",
                               rng.normal(scale=scale, size=(dh, d)))
                for h in range(heads)]

    return AttentionParams(q=bank("q"), k=bank("k"), v=bank("v"))


def attention_weights(E: Tensor, params: AttentionParams) -> list[Tensor]:
    """Per-head (I, I) row-stochastic attention matrices."""
    if E.data.shape[1] != params.d_model:
        raise ShapeError(f"embeddings dim {E.data.shape[1]} vs attention "
                         f"dim {params.d_model}")
    dh = params.d_model // params.heads
    alphas = []
    for h in range(params.heads):
        qe = nc.matmul(E, nc.transpose(params.q[h]))     # (I, dh)
        ke = nc.matmul(E, nc.transpose(params.k[h]))     # (I, dh)
        scores = nc.scale(nc.matmul(qe, nc.transpose(ke)), 1.0 / np.sqrt(dh))
        alphas.append(nc.softmax_rows(scores))
    return alphas


def self_attention(E: Tensor, params: AttentionParams) -> Tensor:
    """Multi-head attention over regions with a residual connection."""
    alphas = attention_weights(E, params)
    heads = [nc.matmul(alpha, nc.matmul(E, nc.transpose(params.v[h])))
             for h, alpha in enumerate(alphas)]
    return nc.add(nc.concat_cols(heads), E)
