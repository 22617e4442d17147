"""Contrastive objectives and the reward signals that drive view learning.

InfoNCE pulls a node's two view embeddings together against other shared
nodes; InfoBN contrasts each view against a re-encode of itself with a
fraction of edges dropped, penalizing representations that depend on
superfluous edges. The overall loss is their convex combination. Rewards
score the generated views: R1 is a two-valued InfoMin signal (high loss
means the views are hard, reward 1; otherwise a small xi), R2 is one minus
the mean aligned-row cosine (views that agree too much earn little). The
sampler objective multiplies the combined reward, treated as a constant,
onto the two reconstruction losses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .errors import ConfigError, DegenerateBatchError
from .numcore import Tensor


@dataclass(frozen=True)
class LossConfig:
    beta: float = 0.1
    tau: float = 0.5
    eps_prime: float = 1.2
    xi: float = 0.1
    w1: float = 0.5
    infobn_drop: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must be in [0,1], got {self.beta}")
        if self.tau <= 0.0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if not 0.0 < self.xi < 1.0:
            raise ConfigError(f"xi must be in (0,1), got {self.xi}")
        if not 0.0 <= self.w1 <= 1.0:
            raise ConfigError(f"w1 must be in [0,1], got {self.w1}")
        if not 0.0 <= self.infobn_drop < 1.0:
            raise ConfigError(f"infobn_drop must be in [0,1), "
                              f"got {self.infobn_drop}")


@dataclass
class ViewEmbeddings:
    """Per-view encoder outputs with their node-id alignment."""
    h1: Tensor
    nodes1: tuple
    h2: Tensor
    nodes2: tuple

    def shared(self):
        """Shared node ids with their row positions in each view."""
        pos1 = {node: k for k, node in enumerate(self.nodes1)}
        pos2 = {node: k for k, node in enumerate(self.nodes2)}
        ids = sorted(set(pos1) & set(pos2))
        return ids, [pos1[i] for i in ids], [pos2[i] for i in ids]


def _nce_sum(A: Tensor, B: Tensor, tau: float) -> Tensor:
    """Sum over rows i of -log softmax_j(cos(A_i, B_j)/tau) at j = i."""
    sims = nc.matmul(nc.normalize_rows(A),
                     nc.transpose(nc.normalize_rows(B)))
    probs = nc.softmax_rows(nc.scale(sims, 1.0 / tau))
    return nc.neg(nc.tsum(nc.log(nc.diag_part(probs))))


def info_nce(views: ViewEmbeddings, tau: float) -> Tensor:
    """Cross-view contrastive loss over the nodes present in both views."""
    ids, idx1, idx2 = views.shared()
    if len(ids) < 2:
        raise DegenerateBatchError(f"InfoNCE needs >= 2 shared nodes, "
                                   f"got {len(ids)}")
    return _nce_sum(nc.rows(views.h1, idx1), nc.rows(views.h2, idx2), tau)


def drop_edges(edges: frozenset, drop_rate: float,
               rng: np.random.Generator) -> frozenset:
    """Remove round(drop_rate * |E|) edges uniformly without replacement."""
    if not 0.0 <= drop_rate < 1.0:
        raise ConfigError(f"drop rate must be in [0,1), got {drop_rate}")
    ordered = sorted(edges)
    k = int(round(drop_rate * len(ordered)))
    if k == 0:
        return frozenset(ordered)
    dropped = set(rng.choice(len(ordered), size=k, replace=False).tolist())
    return frozenset(e for i, e in enumerate(ordered) if i not in dropped)


def infobn_augment(edges: frozenset, encode_fn, drop_rate: float,
                   rng: np.random.Generator) -> Tensor:
    """Re-encode a view after dropping a fraction of its edges.

    ``encode_fn`` maps an edge set to node embeddings for the view; the
    caller closes it over the initial features and encoder weights.
    """
    return encode_fn(drop_edges(edges, drop_rate, rng))


def info_bn(h1: Tensor, h1_aug: Tensor, h2: Tensor, h2_aug: Tensor,
            tau: float) -> Tensor:
    """Per-view information bottleneck: each view against its own re-encode."""
    for name, (a, b) in {"view 1": (h1, h1_aug),
                         "view 2": (h2, h2_aug)}.items():
        if a.data.shape[0] == 0:
            raise DegenerateBatchError(f"InfoBN got an empty {name}")
        if a.data.shape != b.data.shape:
            raise DegenerateBatchError(
                f"InfoBN {name} shapes differ: {a.data.shape} "
                f"vs {b.data.shape}")
    return nc.add(_nce_sum(h1, h1_aug, tau), _nce_sum(h2, h2_aug, tau))


def overall_loss(nce: Tensor, bn: Tensor, beta: float) -> Tensor:
    if not 0.0 <= beta <= 1.0:
        raise ConfigError(f"beta must be in [0,1], got {beta}")
    return nc.add(nc.scale(nce, beta), nc.scale(bn, 1.0 - beta))


def reward_r1(loss_value: float, eps_prime: float, xi: float) -> float:
    """InfoMin reward: 1 for hard views (loss above the bar), else xi."""
    if not 0.0 < xi < 1.0:
        raise ConfigError(f"xi must be in (0,1), got {xi}")
    return 1.0 if loss_value > eps_prime else xi


def reward_r2(views: ViewEmbeddings) -> float:
    """One minus the mean cosine of aligned shared rows (constant, no grad)."""
    ids, idx1, idx2 = views.shared()
    if not ids:
        raise DegenerateBatchError("alignment reward needs >= 1 shared node")
    a = views.h1.data[idx1]
    b = views.h2.data[idx2]
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    denom = np.where((na > 0) & (nb > 0), na * nb, 1.0)
    cos = np.where((na > 0) & (nb > 0), (a * b).sum(axis=1) / denom, 0.0)
    return float(1.0 - cos.mean())


def combined_reward(r1: float, r2: float, w1: float) -> float:
    if not 0.0 <= w1 <= 1.0:
        raise ConfigError(f"w1 must be in [0,1], got {w1}")
    return w1 * r1 + (1.0 - w1) * r2


def sampler_objective(reward: float, lrec1: Tensor, lrec2: Tensor) -> Tensor:
    """reward * (L_Rec1 + L_Rec2); the reward is a stop-gradient constant."""
    return nc.scale(nc.add(lrec1, lrec2), float(reward))
