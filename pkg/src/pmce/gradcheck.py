"""Finite-difference verification of the analytic gradients.

Central differences with a fixed step in 64-bit, compared per tensor with
the symmetric relative error |a - n| / max(|a|, |n|, floor). The floor
keeps near-zero pairs from inflating the ratio.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

FD_STEP = 1e-4
REL_TOL = 1e-4
ERR_FLOOR = 1e-4


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max symmetric relative error over all components of one tensor."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    if a.shape != n.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {n.shape}")
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), ERR_FLOOR)
    return float((np.abs(a - n) / denom).max())


def finite_diff_grad(
    f: Callable[[np.ndarray], float], x: np.ndarray, step: float = FD_STEP
) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in range(x.shape[0]):
        xp = x.copy()
        xp[i] += step
        xm = x.copy()
        xm[i] -= step
        grad[i] = (f(xp) - f(xm)) / (2.0 * step)
    return grad


def check_tensors(
    f: Callable[[np.ndarray], float],
    analytic_flat: np.ndarray,
    x: np.ndarray,
    names_and_shapes: list[tuple[str, tuple]],
    step: float = FD_STEP,
) -> dict[str, float]:
    """Per-tensor max relative error of analytic vs finite-difference grads.

    analytic_flat and x are flat vectors laid out per names_and_shapes.
    """
    numeric = finite_diff_grad(f, x, step)
    out, off = {}, 0
    for name, shape in names_and_shapes:
        size = int(np.prod(shape)) if shape else 1
        out[name] = relative_error(
            analytic_flat[off : off + size], numeric[off : off + size]
        )
        off += size
    if off != x.shape[0]:
        raise ValueError(f"layout covers {off} of {x.shape[0]} entries")
    return out


def check_objective_gradients(
    seed: int,
    d_v: int = 8,
    d_t: int = 6,
    h: int = 2,
    d_k: int = 4,
    t_tokens: int = 1,
    batch: int = 5,
    num_classes: int = 3,
    inject_bug: bool = False,
    step: float = FD_STEP,
) -> dict[str, float]:
    """Check the total objective's gradients on a random small instance.

    Inputs are resampled while any enhanced feature sits within 1e-3 of
    its class mean in some component, keeping finite differences away
    from the L1 kinks. inject_bug deliberately corrupts the analytic W_o
    gradient so the check must fail (mutation-test hook).
    """
    from pmce.enhancer import EnhancerConfig, forward, init_params, tensor_shapes
    from pmce.objectives import ClassifierParams, LossWeights
    from pmce.trainer import batch_loss_and_grads

    cfg = EnhancerConfig(d_v=d_v, d_t=d_t, h=h, d_k=d_k)
    weights = LossWeights()
    params = init_params(cfg, seed)
    rng = np.random.default_rng([seed, 1])
    clf = ClassifierParams(
        W_c=rng.normal(scale=0.5, size=(d_v, num_classes)),
        b_c=rng.normal(scale=0.1, size=num_classes),
    )
    # repeated labels guarantee the contrastive term has positives
    labels = rng.permutation(np.arange(batch) % num_classes)

    for attempt in range(100):
        visual = rng.normal(size=(batch, d_v))
        captions = rng.normal(size=(batch, t_tokens, d_t))
        class_means = rng.normal(size=(batch, d_v))
        v_outs = np.stack(
            [forward(visual[i], captions[i], params, cfg)[0] for i in range(batch)]
        )
        if np.abs(v_outs - class_means).min() > 1e-3:
            break
    else:
        raise RuntimeError("could not sample away from L1 kinks")

    n_enh = params.num_params()
    x = np.concatenate([params.to_vector(), clf.W_c.ravel(), clf.b_c])

    def f(vec: np.ndarray) -> float:
        from pmce.enhancer import EnhancerParams

        p = EnhancerParams.from_vector(vec[:n_enh], cfg)
        c = ClassifierParams(
            W_c=vec[n_enh : n_enh + d_v * num_classes].reshape(d_v, num_classes),
            b_c=vec[n_enh + d_v * num_classes :],
        )
        total, _, _, _, _ = batch_loss_and_grads(
            visual, captions, labels, class_means, p, c, cfg, weights
        )
        return total

    _, _, enh_grad, g_W_c, g_b_c = batch_loss_and_grads(
        visual, captions, labels, class_means, params, clf, cfg, weights
    )
    if inject_bug:
        # mutation hook: misreport the W_o gradient
        off = 0
        for name, shape in tensor_shapes(cfg):
            size = int(np.prod(shape)) if shape else 1
            if name == "W_o":
                enh_grad = enh_grad.copy()
                enh_grad[off : off + size] = enh_grad[off : off + size] * 2.0 + 1.0
                break
            off += size
    analytic = np.concatenate([enh_grad, g_W_c.ravel(), g_b_c])
    layout = tensor_shapes(cfg) + [
        ("W_c", (d_v, num_classes)),
        ("b_c", (num_classes,)),
    ]
    return check_tensors(f, analytic, x, layout, step)
