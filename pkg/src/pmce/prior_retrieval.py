"""Semantics-guided prior retrieval and MAP prototype calibration.

A novel class prototype starts as the mean of its support features. The
class-name embedding scores every bank class by cosine similarity; the k
best-matching classes form a temperature-softmax weighted prior mean, and
the calibrated prototype is the convex combination
alpha * p_init + (1 - alpha) * mu_prior.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pmce.knowledge_bank import KnowledgeBank

ALPHA_ONE_SHOT = 0.33
ALPHA_FIVE_SHOT = 0.7


@dataclass(frozen=True)
class PriorConfig:
    k: int = 7
    tau: float = 1.0
    alpha: float = ALPHA_ONE_SHOT

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")


def default_alpha(k_shot: int) -> float:
    """Fusion weight by shot count: 0.33 for 1-shot, 0.7 for 5 or more."""
    return ALPHA_ONE_SHOT if k_shot < 5 else ALPHA_FIVE_SHOT


def cosine_scores(query_emb: np.ndarray, bank: KnowledgeBank) -> np.ndarray:
    """Cosine similarity of *query_emb* against every bank name embedding."""
    q = np.asarray(query_emb, dtype=np.float64)
    q_norm = np.linalg.norm(q)
    if q_norm == 0.0:
        raise ValueError("query embedding has zero norm")
    bank_norms = np.linalg.norm(bank.name_embs, axis=1)
    if (bank_norms == 0.0).any():
        bad = int(np.argmax(bank_norms == 0.0))
        raise ValueError(f"bank name embedding {bad} has zero norm")
    return (bank.name_embs @ q) / (bank_norms * q_norm)


def top_k(scores: np.ndarray, k: int) -> list[int]:
    """Indices of the k largest scores, descending; ties break low-index-first."""
    scores = np.asarray(scores)
    if not 1 <= k <= scores.shape[0]:
        raise ValueError(f"k={k} out of range for {scores.shape[0]} scores")
    # stable sort on negated scores keeps ascending-index order within ties
    order = np.argsort(-scores, kind="stable")
    return [int(i) for i in order[:k]]


def prior_weights(scores_at_topk: np.ndarray, tau: float) -> np.ndarray:
    """Temperature softmax over the retained scores, max-shifted for safety."""
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    z = np.asarray(scores_at_topk, dtype=np.float64) / tau
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def prior_mean(
    bank: KnowledgeBank, neighbor_indices: list[int], weights: np.ndarray
) -> np.ndarray:
    """Weighted combination of the selected bank means."""
    idx = np.asarray(neighbor_indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= bank.num_classes):
        raise IndexError(f"neighbor index out of range for {bank.num_classes} classes")
    w = np.asarray(weights, dtype=np.float64)
    return w @ bank.means[idx]


def map_fuse(p_init: np.ndarray, mu_prior: np.ndarray, alpha: float) -> np.ndarray:
    """Convex combination alpha * p_init + (1 - alpha) * mu_prior."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    p = np.asarray(p_init, dtype=np.float64)
    m = np.asarray(mu_prior, dtype=np.float64)
    return alpha * p + (1.0 - alpha) * m


def alpha_from_variances(sigma_prior_sq: float, sigma_like_sq: float) -> float:
    """Fusion weight implied by prior and likelihood variances."""
    if sigma_prior_sq <= 0 or sigma_like_sq <= 0:
        raise ValueError("variances must be positive")
    return sigma_prior_sq / (sigma_prior_sq + sigma_like_sq)


def calibrate_prototype(
    support_feats: np.ndarray,
    class_name_emb: np.ndarray,
    bank: KnowledgeBank,
    cfg: PriorConfig,
) -> np.ndarray:
    """Full calibration chain: support mean fused with a retrieved prior."""
    feats = np.asarray(support_feats, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] < 1:
        raise ValueError("support_feats must be a (k_shot, d_v) matrix")
    if cfg.k > bank.num_classes:
        raise ValueError(f"k={cfg.k} exceeds bank size {bank.num_classes}")
    p_init = feats.mean(axis=0)
    scores = cosine_scores(class_name_emb, bank)
    neighbors = top_k(scores, cfg.k)
    weights = prior_weights(scores[neighbors], cfg.tau)
    mu_prior = prior_mean(bank, neighbors, weights)
    return map_fuse(p_init, mu_prior, cfg.alpha)
