"""Training losses with exact analytic gradients.

Three terms: cross-entropy on enhanced features through an auxiliary
linear classifier, an L1 prototype-preserving term that discourages drift
from the frozen per-class means, and a supervised contrastive term that
pulls projected captions of the same class together. The total objective
is their weighted sum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LossWeights:
    lambda_rec: float = 1.0
    lambda_con: float = 1.0
    tau_c: float = 0.1

    def __post_init__(self) -> None:
        if self.lambda_rec < 0 or self.lambda_con < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.tau_c <= 0:
            raise ValueError(f"tau_c must be > 0, got {self.tau_c}")


@dataclass
class ClassifierParams:
    W_c: np.ndarray  # (d_v, num_classes)
    b_c: np.ndarray  # (num_classes,)

    def __post_init__(self) -> None:
        self.W_c = np.asarray(self.W_c, dtype=np.float64)
        self.b_c = np.asarray(self.b_c, dtype=np.float64)
        if not (np.isfinite(self.W_c).all() and np.isfinite(self.b_c).all()):
            raise ValueError("classifier parameters must be finite")


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(
    logits_batch: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood and its exact logit gradients."""
    logits = np.asarray(logits_batch, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    batch, num_classes = logits.shape
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError(f"labels out of range [0, {num_classes})")
    probs = _softmax_rows(logits)
    rows = np.arange(batch)
    loss = float(-np.log(probs[rows, labels]).mean())
    grad = probs.copy()
    grad[rows, labels] -= 1.0
    return loss, grad / batch


def rec_loss(
    v_out_batch: np.ndarray, class_means: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean L1 distance to the per-sample class mean; sign(0) taken as 0."""
    v = np.asarray(v_out_batch, dtype=np.float64)
    mu = np.asarray(class_means, dtype=np.float64)
    if v.shape != mu.shape:
        raise ValueError(f"shape mismatch: {v.shape} vs {mu.shape}")
    diff = v - mu
    batch = v.shape[0]
    loss = float(np.abs(diff).sum() / batch)
    return loss, np.sign(diff) / batch


def supcon_loss(
    caption_proj_batch: np.ndarray, labels: np.ndarray, tau_c: float
) -> tuple[float, np.ndarray]:
    """Supervised contrastive loss over row-normalized inputs.

    Anchors without any same-class partner contribute zero but still count
    in the 1/B average. Gradients are exact, including the path through
    the row normalization.
    """
    X = np.asarray(caption_proj_batch, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    batch = X.shape[0]
    if batch < 2:
        raise ValueError("supcon_loss needs a batch of at least 2")
    norms = np.linalg.norm(X, axis=1)
    if (norms == 0.0).any():
        bad = int(np.argmax(norms == 0.0))
        raise ValueError(f"row {bad} has zero norm")
    U = X / norms[:, None]
    sim = U @ U.T

    same = labels[:, None] == labels[None, :]
    off_diag = ~np.eye(batch, dtype=bool)
    pos = same & off_diag
    pos_counts = pos.sum(axis=1)

    # max-shifted softmax and log-sum-exp over off-diagonal entries per row
    z = np.where(off_diag, sim / tau_c, -np.inf)
    z_max = z.max(axis=1, keepdims=True)
    e = np.exp(z - z_max)
    denom = e.sum(axis=1, keepdims=True)
    w = e / denom  # (B, B), zero on the diagonal
    log_denom = np.log(denom[:, 0]) + z_max[:, 0]

    total = 0.0
    G = np.zeros((batch, batch))  # coefficient of sim[i, a] in the loss
    for i in range(batch):
        if pos_counts[i] == 0:
            continue
        p_idx = np.flatnonzero(pos[i])
        total += float(-sim[i, p_idx].sum() / (pos_counts[i] * tau_c) + log_denom[i])
        G[i, off_diag[i]] += w[i, off_diag[i]] / tau_c
        G[i, p_idx] -= 1.0 / (pos_counts[i] * tau_c)
    loss = total / batch
    G /= batch

    g_U = G @ U + G.T @ U
    # through the normalization: project out the radial component
    radial = (g_U * U).sum(axis=1, keepdims=True)
    g_X = (g_U - radial * U) / norms[:, None]
    return loss, g_X


def total_loss(
    components: tuple[float, float, float], weights: LossWeights
) -> float:
    """cls + lambda_rec * rec + lambda_con * con."""
    cls_term, rec_term, con_term = components
    return float(
        cls_term + weights.lambda_rec * rec_term + weights.lambda_con * con_term
    )
