"""Caption-guided feature enhancer with exact analytic gradients.

The enhancer projects semantic tokens into the visual space
(ReLU over layer-normalized affine projection), attends from the visual
anchor over the projected tokens with multi-head cross-attention, and
adds the attended result back through a learnable residual scale beta.

forward returns a cache of every intermediate; backward replays the
chain rule exactly, so gradients agree with finite differences to
floating-point accuracy. All math is 64-bit.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from pmce._binio import f64_bytes, f64_from_bytes, fnv1a_64
from pmce.feature_store import ChecksumError, TruncatedFileError, UnknownVersionError

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class EnhancerConfig:
    d_v: int
    d_t: int
    h: int = 1
    d_k: int = 0  # 0 means d_v // h
    ln_eps: float = 1e-5
    dropout: float = 0.0
    init_gain: float = 4.0  # value/output init scale; see init_params

    def __post_init__(self) -> None:
        if min(self.d_v, self.d_t, self.h) < 1:
            raise ValueError("d_v, d_t and h must be positive")
        if self.d_k == 0:
            if self.d_v % self.h:
                raise ValueError(f"d_v={self.d_v} not divisible by h={self.h}")
            object.__setattr__(self, "d_k", self.d_v // self.h)
        if self.d_k < 1:
            raise ValueError(f"d_k must be positive, got {self.d_k}")
        if self.dropout != 0.0:
            raise ValueError("dropout is fixed at 0")
        if not (np.isfinite(self.init_gain) and self.init_gain > 0):
            raise ValueError(f"init_gain must be positive, got {self.init_gain}")

    def to_dict(self) -> dict:
        return {
            "d_v": self.d_v,
            "d_t": self.d_t,
            "h": self.h,
            "d_k": self.d_k,
            "ln_eps": self.ln_eps,
            "dropout": self.dropout,
            "init_gain": self.init_gain,
        }


@dataclass
class EnhancerParams:
    W_p: np.ndarray  # (d_t, d_v)
    b_p: np.ndarray  # (d_v,)
    ln_gamma: np.ndarray  # (d_v,)
    ln_beta: np.ndarray  # (d_v,)
    W_q: np.ndarray  # (h, d_v, d_k)
    W_k: np.ndarray  # (h, d_v, d_k)
    W_v: np.ndarray  # (h, d_v, d_k)
    W_o: np.ndarray  # (h * d_k, d_v)
    beta: float

    def tensors(self) -> list[tuple[str, np.ndarray]]:
        """Declared serialization order; beta travels as a 0-d array."""
        return [
            ("W_p", self.W_p),
            ("b_p", self.b_p),
            ("ln_gamma", self.ln_gamma),
            ("ln_beta", self.ln_beta),
            ("W_q", self.W_q),
            ("W_k", self.W_k),
            ("W_v", self.W_v),
            ("W_o", self.W_o),
            ("beta", np.asarray(self.beta, dtype=np.float64)),
        ]

    def to_vector(self) -> np.ndarray:
        return np.concatenate([t.ravel() for _, t in self.tensors()])

    @classmethod
    def from_vector(cls, vec: np.ndarray, cfg: EnhancerConfig) -> "EnhancerParams":
        shapes = tensor_shapes(cfg)
        out, off = {}, 0
        for name, shape in shapes:
            size = int(np.prod(shape)) if shape else 1
            chunk = np.asarray(vec[off : off + size], dtype=np.float64)
            out[name] = float(chunk[0]) if not shape else chunk.reshape(shape).copy()
            off += size
        if off != vec.shape[0]:
            raise ValueError(f"vector length {vec.shape[0]}, expected {off}")
        return cls(**out)

    def num_params(self) -> int:
        return int(sum(t.size for _, t in self.tensors()))


def tensor_shapes(cfg: EnhancerConfig) -> list[tuple[str, tuple]]:
    d_v, d_t, h, d_k = cfg.d_v, cfg.d_t, cfg.h, cfg.d_k
    return [
        ("W_p", (d_t, d_v)),
        ("b_p", (d_v,)),
        ("ln_gamma", (d_v,)),
        ("ln_beta", (d_v,)),
        ("W_q", (h, d_v, d_k)),
        ("W_k", (h, d_v, d_k)),
        ("W_v", (h, d_v, d_k)),
        ("W_o", (h * d_k, d_v)),
        ("beta", ()),
    ]


def _uniform_fan(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


def init_params(cfg: EnhancerConfig, seed: int) -> EnhancerParams:
    """Fan-based uniform weights, unit LN affine, beta = 0.1.

    The value and output projections are scaled by cfg.init_gain so the
    beta-gated residual branch starts at a usable magnitude; with unit
    gain the branch is so small that short training schedules leave it
    unused. Query/key projections keep unit gain: their scale sets the
    attention logits, not the branch output.
    """
    rng = np.random.default_rng(seed)
    d_v, d_t, h, d_k = cfg.d_v, cfg.d_t, cfg.h, cfg.d_k
    g = cfg.init_gain
    return EnhancerParams(
        W_p=_uniform_fan(rng, d_t, d_v, (d_t, d_v)),
        b_p=np.zeros(d_v),
        ln_gamma=np.ones(d_v),
        ln_beta=np.zeros(d_v),
        W_q=_uniform_fan(rng, d_v, d_k, (h, d_v, d_k)),
        W_k=_uniform_fan(rng, d_v, d_k, (h, d_v, d_k)),
        W_v=g * _uniform_fan(rng, d_v, d_k, (h, d_v, d_k)),
        W_o=g * _uniform_fan(rng, h * d_k, d_v, (h * d_k, d_v)),
        beta=0.1,
    )


def layer_norm(
    x: np.ndarray, gamma: np.ndarray, beta_ln: np.ndarray, eps: float
) -> np.ndarray:
    """Normalize by population mean/variance, then apply the affine."""
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean()
    var = x.var()  # population variance
    xhat = (x - mean) / np.sqrt(var + eps)
    return xhat * gamma + beta_ln


def project_semantics(S_in: np.ndarray, params: EnhancerParams, cfg: EnhancerConfig):
    """Row-wise ReLU(LN(S_in W_p + b_p)); returns (S_proj, cache)."""
    S_in = np.asarray(S_in, dtype=np.float64)
    Z = S_in @ params.W_p + params.b_p  # (T, d_v)
    mean = Z.mean(axis=1, keepdims=True)
    var = Z.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + cfg.ln_eps)
    xhat = (Z - mean) * inv
    ln_out = xhat * params.ln_gamma + params.ln_beta
    S_proj = np.maximum(ln_out, 0.0)
    cache = {"S_in": S_in, "xhat": xhat, "inv": inv, "mask": ln_out > 0.0}
    return S_proj, cache


def forward(
    v_in: np.ndarray,
    S_in: np.ndarray,
    params: EnhancerParams,
    cfg: EnhancerConfig,
) -> tuple[np.ndarray, dict]:
    """Enhance one visual vector against its T semantic tokens."""
    v_in = np.asarray(v_in, dtype=np.float64)
    S_in = np.atleast_2d(np.asarray(S_in, dtype=np.float64))
    if v_in.shape != (cfg.d_v,):
        raise ValueError(f"v_in has shape {v_in.shape}, expected ({cfg.d_v},)")
    if S_in.shape[1] != cfg.d_t:
        raise ValueError(f"S_in has {S_in.shape[1]} columns, expected {cfg.d_t}")

    S_proj, proj_cache = project_semantics(S_in, params, cfg)
    scale = 1.0 / np.sqrt(cfg.d_k)

    heads, Qs, Ks, Vs, As = [], [], [], [], []
    for i in range(cfg.h):
        Q = v_in @ params.W_q[i]  # (d_k,)
        K = S_proj @ params.W_k[i]  # (T, d_k)
        V = S_proj @ params.W_v[i]  # (T, d_k)
        logits = (K @ Q) * scale  # (T,)
        shifted = logits - logits.max()
        e = np.exp(shifted)
        A = e / e.sum()  # (T,)
        heads.append(A @ V)
        Qs.append(Q)
        Ks.append(K)
        Vs.append(V)
        As.append(A)

    concat = np.concatenate(heads)  # (h * d_k,)
    delta_v = concat @ params.W_o  # (d_v,)
    v_out = v_in + params.beta * delta_v

    cache = {
        "cfg": cfg,
        "params": params,
        "v_in": v_in,
        "S_proj": S_proj,
        "proj": proj_cache,
        "Q": Qs,
        "K": Ks,
        "V": Vs,
        "A": As,
        "concat": concat,
        "delta_v": delta_v,
    }
    return v_out, cache


def backward(
    cache: dict,
    grad_v_out: np.ndarray,
    grad_s_proj: np.ndarray | None = None,
) -> tuple[EnhancerParams, np.ndarray, np.ndarray]:
    """Exact reverse pass through one forward call.

    grad_s_proj, when given, is an extra gradient arriving directly at the
    projected tokens (used by losses that read S_proj), added before the
    projection is unwound.
    """
    cfg: EnhancerConfig = cache["cfg"]
    params: EnhancerParams = cache["params"]
    g_out = np.asarray(grad_v_out, dtype=np.float64)
    if g_out.shape != (cfg.d_v,):
        raise ValueError(f"grad_v_out has shape {g_out.shape}, expected ({cfg.d_v},)")
    v_in, S_proj = cache["v_in"], cache["S_proj"]
    scale = 1.0 / np.sqrt(cfg.d_k)

    g_v_in = g_out.copy()  # residual path
    g_beta = float(g_out @ cache["delta_v"])
    g_delta = params.beta * g_out
    g_W_o = np.outer(cache["concat"], g_delta)
    g_concat = params.W_o @ g_delta

    g_W_q = np.zeros_like(params.W_q)
    g_W_k = np.zeros_like(params.W_k)
    g_W_v = np.zeros_like(params.W_v)
    g_S_proj = np.zeros_like(S_proj)
    if grad_s_proj is not None:
        g_S_proj += np.asarray(grad_s_proj, dtype=np.float64)

    for i in range(cfg.h):
        Q, K, V, A = cache["Q"][i], cache["K"][i], cache["V"][i], cache["A"][i]
        g_head = g_concat[i * cfg.d_k : (i + 1) * cfg.d_k]

        g_A = V @ g_head  # (T,)
        g_V = np.outer(A, g_head)  # (T, d_k)
        g_logits = A * (g_A - float(g_A @ A))  # softmax jacobian
        g_Q = (K.T @ g_logits) * scale
        g_K = np.outer(g_logits, Q) * scale

        g_W_q[i] = np.outer(v_in, g_Q)
        g_v_in += params.W_q[i] @ g_Q
        g_W_k[i] = S_proj.T @ g_K
        g_W_v[i] = S_proj.T @ g_V
        g_S_proj += g_K @ params.W_k[i].T + g_V @ params.W_v[i].T

    # projection backward: ReLU -> LN affine -> LN -> affine
    proj = cache["proj"]
    xhat, inv, mask, S_in = proj["xhat"], proj["inv"], proj["mask"], proj["S_in"]
    g_ln_out = g_S_proj * mask
    g_gamma = (g_ln_out * xhat).sum(axis=0)
    g_ln_beta = g_ln_out.sum(axis=0)
    g_xhat = g_ln_out * params.ln_gamma
    m1 = g_xhat.mean(axis=1, keepdims=True)
    m2 = (g_xhat * xhat).mean(axis=1, keepdims=True)
    g_Z = inv * (g_xhat - m1 - xhat * m2)
    g_W_p = S_in.T @ g_Z
    g_b_p = g_Z.sum(axis=0)
    g_S_in = g_Z @ params.W_p.T

    grads = EnhancerParams(
        W_p=g_W_p,
        b_p=g_b_p,
        ln_gamma=g_gamma,
        ln_beta=g_ln_beta,
        W_q=g_W_q,
        W_k=g_W_k,
        W_v=g_W_v,
        W_o=g_W_o,
        beta=g_beta,
    )
    return grads, g_v_in, g_S_in


def save_params(
    params: EnhancerParams,
    cfg: EnhancerConfig,
    path: str | Path,
    seed: int,
    extra: dict[str, np.ndarray] | None = None,
) -> None:
    """Checkpoint: u32 header length, JSON header, little-endian f64 blob."""
    entries = params.tensors() + [
        (name, np.asarray(arr, dtype=np.float64)) for name, arr in (extra or {}).items()
    ]
    blob = b"".join(f64_bytes(t) for _, t in entries)
    header = {
        "version": CHECKPOINT_VERSION,
        "seed": seed,
        "cfg": cfg.to_dict(),
        "tensors": [{"name": n, "shape": list(t.shape)} for n, t in entries],
        "blob_fnv1a": fnv1a_64(blob),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        f.write(blob)


def load_params(
    path: str | Path,
) -> tuple[EnhancerParams, EnhancerConfig, int, dict[str, np.ndarray]]:
    """Inverse of save_params; returns (params, cfg, seed, extra_tensors)."""
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise TruncatedFileError(f"{path}: too short for a header")
    (header_len,) = struct.unpack_from("<I", raw, 0)
    if len(raw) < 4 + header_len:
        raise TruncatedFileError(f"{path}: header truncated")
    header = json.loads(raw[4 : 4 + header_len].decode("utf-8"))
    if header["version"] != CHECKPOINT_VERSION:
        raise UnknownVersionError(f"unknown checkpoint version {header['version']}")
    blob = raw[4 + header_len :]
    expected = sum(
        int(np.prod(t["shape"])) if t["shape"] else 1 for t in header["tensors"]
    )
    if len(blob) != expected * 8:
        raise TruncatedFileError(f"{path}: blob {len(blob)} bytes, expected {expected * 8}")
    actual = fnv1a_64(blob)
    if actual != header["blob_fnv1a"]:
        raise ChecksumError(
            f"{path}: blob checksum {actual} does not match header {header['blob_fnv1a']}"
        )

    cfg = EnhancerConfig(**header["cfg"])
    tensors, off = {}, 0
    for t in header["tensors"]:
        shape = tuple(t["shape"])
        size = int(np.prod(shape)) if shape else 1
        tensors[t["name"]] = f64_from_bytes(
            blob[off * 8 : (off + size) * 8], shape if shape else (1,)
        ).copy()
        off += size

    core = {name for name, _ in tensor_shapes(cfg)}
    params = EnhancerParams(
        W_p=tensors["W_p"],
        b_p=tensors["b_p"],
        ln_gamma=tensors["ln_gamma"],
        ln_beta=tensors["ln_beta"],
        W_q=tensors["W_q"],
        W_k=tensors["W_k"],
        W_v=tensors["W_v"],
        W_o=tensors["W_o"],
        beta=float(tensors["beta"][0]),
    )
    extra = {k: v for k, v in tensors.items() if k not in core}
    return params, cfg, header["seed"], extra
