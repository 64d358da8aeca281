"""Inductive N-way K-shot evaluation.

Episodes are sampled with a PRNG keyed by (seed, episode index), so any
episode can be regenerated in isolation and parallel evaluation cannot
change results. Each episode builds one prototype per class (optionally
MAP-calibrated and enhanced against averaged support captions), enhances
each query against its own caption, classifies every query independently,
and reports mean accuracy with a 95% confidence interval.
"""

from __future__ import annotations

import dataclasses
import json
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from pmce.enhancer import EnhancerConfig, EnhancerParams, forward
from pmce.feature_store import DatasetSplit
from pmce.knowledge_bank import KnowledgeBank
from pmce.prior_retrieval import PriorConfig, calibrate_prototype

CLASSIFIERS = ("LR", "EU", "CO")
RETRIEVAL_CUES = ("name", "visual")


@dataclass(frozen=True)
class EvalConfig:
    n_way: int = 5
    k_shot: int = 1
    m_query: int = 15
    episodes: int = 600
    seed: int = 0
    prior: PriorConfig = field(default_factory=PriorConfig)
    classifier: str = "LR"
    use_map: bool = True
    enhance_support: bool = True
    enhance_query: bool = True
    retrieval_cue: str = "name"
    lr_l2: float = 1.0
    lr_on_supports: bool = False

    def __post_init__(self) -> None:
        if min(self.n_way, self.k_shot, self.m_query, self.episodes) < 1:
            raise ValueError("n_way, k_shot, m_query and episodes must be positive")
        if self.classifier not in CLASSIFIERS:
            raise ValueError(f"classifier must be one of {CLASSIFIERS}")
        if self.retrieval_cue not in RETRIEVAL_CUES:
            raise ValueError(f"retrieval_cue must be one of {RETRIEVAL_CUES}")
        if self.lr_l2 < 0:
            raise ValueError("lr_l2 must be nonnegative")

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["prior"] = dataclasses.asdict(self.prior)
        return out


@dataclass
class Episode:
    class_ids: np.ndarray  # (N,) indices into the novel split's classes
    name_embs: np.ndarray  # (N, d_t)
    support_visual: np.ndarray  # (N, K, d_v)
    support_caption: np.ndarray  # (N, K, d_t)
    query_visual: np.ndarray  # (N, M, d_v)
    query_caption: np.ndarray  # (N, M, d_t)
    support_indices: np.ndarray  # (N, K) record indices, for audit
    query_indices: np.ndarray  # (N, M)


@dataclass
class EvalReport:
    accuracies: list[float]
    mean: float
    ci95_half_width: float
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "config": self.config,
            "mean": self.mean,
            "ci95_half_width": self.ci95_half_width,
            "accuracies": self.accuracies,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    def accuracies_csv(self) -> str:
        lines = ["episode,accuracy"]
        lines += [f"{i},{a!r}" for i, a in enumerate(self.accuracies)]
        return "\n".join(lines) + "\n"


def sample_episode(novel: DatasetSplit, cfg: EvalConfig, episode_index: int) -> Episode:
    """Draw one episode; fully determined by (cfg.seed, episode_index)."""
    if novel.num_classes < cfg.n_way:
        raise ValueError(
            f"novel split has {novel.num_classes} classes, need {cfg.n_way}"
        )
    need = cfg.k_shot + cfg.m_query
    rng = np.random.default_rng([cfg.seed, episode_index])
    classes = rng.choice(novel.num_classes, size=cfg.n_way, replace=False)

    sup_idx = np.empty((cfg.n_way, cfg.k_shot), dtype=np.int64)
    qry_idx = np.empty((cfg.n_way, cfg.m_query), dtype=np.int64)
    for row, c in enumerate(classes):
        pool = np.flatnonzero(novel.class_ids == c)
        if pool.size < need:
            raise ValueError(
                f"class {c} has {pool.size} records, need {need} per episode"
            )
        picked = rng.choice(pool, size=need, replace=False)
        sup_idx[row] = picked[: cfg.k_shot]
        qry_idx[row] = picked[cfg.k_shot :]

    vis = novel.visual.astype(np.float64)
    cap = novel.caption_emb.astype(np.float64)
    return Episode(
        class_ids=classes,
        name_embs=novel.name_embs[classes].astype(np.float64),
        support_visual=vis[sup_idx],
        support_caption=cap[sup_idx],
        query_visual=vis[qry_idx],
        query_caption=cap[qry_idx],
        support_indices=sup_idx,
        query_indices=qry_idx,
    )


def aggregate_support_semantics(support_caption_embs: np.ndarray) -> np.ndarray:
    """Class-level semantic context: the mean support caption embedding."""
    mat = np.asarray(support_caption_embs, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] < 1:
        raise ValueError("expected a (k_shot, d_t) matrix")
    return mat.mean(axis=0)


def fit_lr(
    X: np.ndarray, labels: np.ndarray, num_classes: int, l2: float
) -> tuple[np.ndarray, bool]:
    """L2-penalized multinomial logistic regression by full-batch descent.

    Sum (not mean) cross-entropy plus (l2/2)||W||^2, no intercept, zero
    init, fixed step 1/L with L a Lipschitz bound on the gradient,
    stopping at max-norm gradient 1e-6 or 1000 iterations. The penalty
    makes the objective strongly convex, so the tolerance is reachable.
    Returns (W, converged).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    n, d = X.shape
    onehot = np.zeros((n, num_classes))
    onehot[np.arange(n), y] = 1.0

    gram = X @ X.T if n <= d else X.T @ X
    lipschitz = 0.5 * float(np.linalg.eigvalsh(gram)[-1]) + l2
    step = 1.0 / lipschitz

    W = np.zeros((d, num_classes))
    converged = False
    for _ in range(1000):
        logits = X @ W
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        probs = e / e.sum(axis=1, keepdims=True)
        g_W = X.T @ (probs - onehot) + l2 * W
        if np.abs(g_W).max() < 1e-6:
            converged = True
            break
        W = W - step * g_W
    if not converged:
        warnings.warn("logistic regression did not reach 1e-6 in 1000 iterations")
    return W, converged


def classify_lr(
    prototypes_final: np.ndarray, queries_final: np.ndarray, l2: float = 1.0
) -> np.ndarray:
    """Fit on the prototypes (one point per class) and label the queries."""
    P = np.asarray(prototypes_final, dtype=np.float64)
    if P.shape[0] < 2:
        raise ValueError("need at least 2 prototypes")
    W, _ = fit_lr(P, np.arange(P.shape[0]), P.shape[0], l2)
    logits = np.asarray(queries_final, dtype=np.float64) @ W
    return np.argmax(logits, axis=1)


def classify_nearest(
    prototypes_final: np.ndarray, queries_final: np.ndarray, metric: str
) -> np.ndarray:
    """Nearest prototype under Euclidean distance or cosine similarity."""
    P = np.asarray(prototypes_final, dtype=np.float64)
    Q = np.asarray(queries_final, dtype=np.float64)
    if metric == "EU":
        d2 = ((Q[:, None, :] - P[None, :, :]) ** 2).sum(axis=2)
        return np.argmin(d2, axis=1)  # first minimum: lowest class index
    if metric == "CO":
        p_norm = np.linalg.norm(P, axis=1)
        q_norm = np.linalg.norm(Q, axis=1)
        if (p_norm == 0.0).any() or (q_norm == 0.0).any():
            raise ValueError("cosine classification undefined for zero vectors")
        sims = (Q @ P.T) / (q_norm[:, None] * p_norm[None, :])
        return np.argmax(sims, axis=1)
    raise ValueError(f"metric must be EU or CO, got {metric!r}")


def _enhance(
    v: np.ndarray,
    semantics: np.ndarray,
    params: EnhancerParams,
    enh_cfg: EnhancerConfig,
) -> np.ndarray:
    out, _ = forward(v, np.atleast_2d(semantics), params, enh_cfg)
    return out


def episode_predictions(
    ep: Episode,
    bank: KnowledgeBank,
    params: EnhancerParams,
    enh_cfg: EnhancerConfig,
    cfg: EvalConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-query predicted and true labels for one episode.

    Queries are classified row-independently, so removing or reordering
    queries never changes another query's prediction.
    """
    n_way = ep.class_ids.shape[0]
    if cfg.retrieval_cue == "visual":
        # contrast baseline: retrieve by visual-mean cosine instead
        ret_bank = KnowledgeBank(
            class_names=bank.class_names, means=bank.means, name_embs=bank.means
        )

    prototypes = []
    for c in range(n_way):
        feats = ep.support_visual[c]
        if cfg.use_map:
            if cfg.retrieval_cue == "visual":
                p = calibrate_prototype(feats, feats.mean(axis=0), ret_bank, cfg.prior)
            else:
                p = calibrate_prototype(feats, ep.name_embs[c], bank, cfg.prior)
        else:
            p = feats.mean(axis=0)
        if cfg.enhance_support:
            s_proto = aggregate_support_semantics(ep.support_caption[c])
            p = _enhance(p, s_proto, params, enh_cfg)
        prototypes.append(p)
    P_final = np.stack(prototypes)

    queries, true_labels = [], []
    for c in range(n_way):
        for m in range(ep.query_visual.shape[1]):
            z = ep.query_visual[c, m]
            if cfg.enhance_query:
                z = _enhance(z, ep.query_caption[c, m], params, enh_cfg)
            queries.append(z)
            true_labels.append(c)
    Z_final = np.stack(queries)
    true_labels = np.array(true_labels)

    if cfg.classifier == "LR":
        if cfg.lr_on_supports:
            # variant: fit on the individual (optionally enhanced) supports
            xs, ys = [], []
            for c in range(n_way):
                for k in range(ep.support_visual.shape[1]):
                    x = ep.support_visual[c, k]
                    if cfg.enhance_support:
                        x = _enhance(x, ep.support_caption[c, k], params, enh_cfg)
                    xs.append(x)
                    ys.append(c)
            W, _ = fit_lr(np.stack(xs), np.array(ys), n_way, cfg.lr_l2)
            preds = np.argmax(Z_final @ W, axis=1)
        else:
            preds = classify_lr(P_final, Z_final, cfg.lr_l2)
    else:
        preds = classify_nearest(P_final, Z_final, cfg.classifier)
    return preds, true_labels


def run_episode(
    ep: Episode,
    bank: KnowledgeBank,
    params: EnhancerParams,
    enh_cfg: EnhancerConfig,
    cfg: EvalConfig,
) -> float:
    """Accuracy of one episode under the configured pipeline variant."""
    preds, true_labels = episode_predictions(ep, bank, params, enh_cfg, cfg)
    return float((preds == true_labels).mean())


def aggregate_report(accuracies: list[float] | np.ndarray) -> EvalReport:
    """Mean and normal-approximation 95% CI half width."""
    acc = np.asarray(accuracies, dtype=np.float64)
    if acc.shape[0] < 2:
        raise ValueError("need at least 2 episode accuracies")
    mean = float(acc.mean())
    half = float(1.96 * acc.std(ddof=1) / np.sqrt(acc.shape[0]))
    return EvalReport(
        accuracies=[float(a) for a in acc], mean=mean, ci95_half_width=half
    )


def _eval_range(args) -> list[float]:
    novel, bank, params, enh_cfg, cfg, start, stop = args
    return [
        run_episode(sample_episode(novel, cfg, i), bank, params, enh_cfg, cfg)
        for i in range(start, stop)
    ]


def evaluate(
    novel: DatasetSplit,
    bank: KnowledgeBank,
    params: EnhancerParams,
    enh_cfg: EnhancerConfig,
    cfg: EvalConfig,
    jobs: int = 1,
) -> EvalReport:
    """Evaluate cfg.episodes episodes; jobs > 1 parallelizes by index range
    with results identical to a serial run."""
    if jobs < 1:
        raise ValueError("jobs must be >= 1")
    if jobs == 1:
        accs = _eval_range((novel, bank, params, enh_cfg, cfg, 0, cfg.episodes))
    else:
        bounds = np.linspace(0, cfg.episodes, jobs + 1).astype(int)
        chunks = [
            (novel, bank, params, enh_cfg, cfg, int(a), int(b))
            for a, b in zip(bounds, bounds[1:])
            if b > a
        ]
        with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
            results = list(pool.map(_eval_range, chunks))
        accs = [a for chunk in results for a in chunk]
    report = aggregate_report(accs)
    report.config = cfg.to_dict()
    return report
