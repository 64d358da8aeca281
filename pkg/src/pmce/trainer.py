"""Base-class training of the enhancer and its auxiliary classifier.

The backbone embeddings are frozen; the only trainable state is the
enhancer plus a linear classifier over base classes, updated jointly by
one Adam optimizer over their concatenated parameters. Each sample is
enhanced against its own instance caption, the classifier scores the
enhanced feature, and the total objective combines classification,
prototype-preserving and caption-contrastive terms.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from pmce.enhancer import (
    EnhancerConfig,
    EnhancerParams,
    backward,
    forward,
    init_params,
)
from pmce.feature_store import DatasetSplit
from pmce.knowledge_bank import KnowledgeBank
from pmce.objectives import (
    ClassifierParams,
    LossWeights,
    cross_entropy,
    rec_loss,
    supcon_loss,
    total_loss,
)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 128
    lr: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.lr < 0:
            raise ValueError("lr must be nonnegative")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.adam_eps <= 0:
            raise ValueError("adam_eps must be positive")


@dataclass
class TrainLog:
    entries: list[dict] = field(default_factory=list)

    def to_jsonl(self) -> str:
        return "\n".join(json.dumps(e, sort_keys=True) for e in self.entries) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(m=np.zeros(size), v=np.zeros(size), t=0)


def adam_step(
    params_flat: np.ndarray,
    grads_flat: np.ndarray,
    state: AdamState,
    cfg: TrainConfig,
) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update on a flat parameter vector."""
    theta = np.asarray(params_flat, dtype=np.float64)
    g = np.asarray(grads_flat, dtype=np.float64)
    if theta.shape != g.shape or theta.shape != state.m.shape:
        raise ValueError(
            f"shape mismatch: params {theta.shape}, grads {g.shape}, state {state.m.shape}"
        )
    t = state.t + 1
    m = cfg.adam_beta1 * state.m + (1.0 - cfg.adam_beta1) * g
    v = cfg.adam_beta2 * state.v + (1.0 - cfg.adam_beta2) * g * g
    m_hat = m / (1.0 - cfg.adam_beta1**t)
    v_hat = v / (1.0 - cfg.adam_beta2**t)
    theta = theta - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    return theta, AdamState(m=m, v=v, t=t)


def batch_loss_and_grads(
    visual: np.ndarray,
    captions: np.ndarray,
    labels: np.ndarray,
    class_means: np.ndarray,
    enh_params: EnhancerParams,
    clf: ClassifierParams,
    enh_cfg: EnhancerConfig,
    weights: LossWeights,
) -> tuple[float, tuple[float, float, float], np.ndarray, np.ndarray, np.ndarray]:
    """Total objective and exact gradients for one batch.

    captions may be (B, d_t) single embeddings or (B, T, d_t) token
    matrices; the contrastive input for T > 1 is the mean projected token.
    Returns (total, (cls, rec, con), enhancer grad vector, grad W_c,
    grad b_c). The enhancer gradient sums per-sample contributions in
    batch index order, so the reduction is reproducible.
    """
    visual = np.asarray(visual, dtype=np.float64)
    caps = np.asarray(captions, dtype=np.float64)
    if caps.ndim == 2:
        caps = caps[:, None, :]
    labels = np.asarray(labels, dtype=np.int64)
    batch = visual.shape[0]
    n_tokens = caps.shape[1]

    v_rows, cap_rows, caches = [], [], []
    for i in range(batch):
        v_out, cache = forward(visual[i], caps[i], enh_params, enh_cfg)
        v_rows.append(v_out)
        cap_rows.append(cache["S_proj"].mean(axis=0))
        caches.append(cache)
    V_out = np.stack(v_rows)
    P_cap = np.stack(cap_rows)

    logits = V_out @ clf.W_c + clf.b_c
    cls_term, g_logits = cross_entropy(logits, labels)
    rec_term, g_rec = rec_loss(V_out, class_means)
    if batch >= 2 and weights.lambda_con > 0:
        con_term, g_con = supcon_loss(P_cap, labels, weights.tau_c)
    else:
        con_term, g_con = 0.0, np.zeros_like(P_cap)

    total = total_loss((cls_term, rec_term, con_term), weights)

    g_W_c = V_out.T @ g_logits
    g_b_c = g_logits.sum(axis=0)
    g_V_out = g_logits @ clf.W_c.T + weights.lambda_rec * g_rec
    g_P_cap = weights.lambda_con * g_con

    enh_grad = np.zeros(enh_params.num_params())
    for i in range(batch):
        # the mean over token rows spreads its gradient uniformly
        g_s_proj = np.tile(g_P_cap[i] / n_tokens, (n_tokens, 1))
        grads_i, _, _ = backward(caches[i], g_V_out[i], grad_s_proj=g_s_proj)
        enh_grad += grads_i.to_vector()
    return total, (cls_term, rec_term, con_term), enh_grad, g_W_c, g_b_c


def default_enhancer_config(d_v: int, d_t: int) -> EnhancerConfig:
    """Four heads when the visual width allows it, otherwise one."""
    h = 4 if d_v % 4 == 0 else 1
    return EnhancerConfig(d_v=d_v, d_t=d_t, h=h)


def train(
    base_split: DatasetSplit,
    bank: KnowledgeBank,
    cfg: TrainConfig,
    enh_cfg: EnhancerConfig | None = None,
) -> tuple[EnhancerParams, ClassifierParams, TrainLog]:
    """Train the enhancer and classifier; returns final params and a log."""
    if enh_cfg is None:
        enh_cfg = default_enhancer_config(base_split.d_v, base_split.d_t)
    if enh_cfg.d_v != base_split.d_v or enh_cfg.d_t != base_split.d_t:
        raise ValueError(
            f"enhancer dims ({enh_cfg.d_v}, {enh_cfg.d_t}) do not match "
            f"split dims ({base_split.d_v}, {base_split.d_t})"
        )
    if bank.d_v != base_split.d_v or bank.num_classes != base_split.num_classes:
        raise ValueError("bank does not match the base split")

    num_classes = base_split.num_classes
    params = init_params(enh_cfg, cfg.seed)
    clf = ClassifierParams(
        W_c=np.zeros((enh_cfg.d_v, num_classes)), b_c=np.zeros(num_classes)
    )
    n_enh = params.num_params()
    theta = np.concatenate([params.to_vector(), clf.W_c.ravel(), clf.b_c])
    state = AdamState.zeros(theta.shape[0])

    visual = base_split.visual.astype(np.float64)
    captions = base_split.caption_emb.astype(np.float64)
    labels = base_split.class_ids
    means_by_class = bank.means  # (num_classes, d_v)

    rng = np.random.default_rng(cfg.seed)
    n = base_split.num_records
    log = TrainLog()
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        perm = rng.permutation(n)
        sums = np.zeros(4)  # total, cls, rec, con, weighted by batch size
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            total, terms, enh_grad, g_W_c, g_b_c = batch_loss_and_grads(
                visual[idx],
                captions[idx],
                labels[idx],
                means_by_class[labels[idx]],
                params,
                clf,
                enh_cfg,
                cfg.weights,
            )
            if not np.isfinite(total):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch}, batch {start // cfg.batch_size}"
                )
            grad_flat = np.concatenate([enh_grad, g_W_c.ravel(), g_b_c])
            theta, state = adam_step(theta, grad_flat, state, cfg)
            params = EnhancerParams.from_vector(theta[:n_enh], enh_cfg)
            clf = ClassifierParams(
                W_c=theta[n_enh : n_enh + enh_cfg.d_v * num_classes].reshape(
                    enh_cfg.d_v, num_classes
                ),
                b_c=theta[n_enh + enh_cfg.d_v * num_classes :],
            )
            sums += len(idx) * np.array([total, *terms])
        means = sums / n
        log.entries.append(
            {
                "epoch": epoch,
                "total": means[0],
                "cls": means[1],
                "rec": means[2],
                "con": means[3],
                "wall_time_s": time.perf_counter() - t0,
            }
        )
    return params, clf, log
