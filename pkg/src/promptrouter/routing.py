"""Online routing core.

A single set of attention parameters is shared across classes; class
specificity enters only through each class's prompt pool, which serves as
both keys and values while the projected image feature is the query. The
whole batch is routed against all class pools in one einsum pass.

Forward functions return caches consumed by the matching backward
functions; gradients are hand-derived and verified against central finite
differences by the test suite.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import counters
from .errors import ConfigurationError, EmptyPoolError, ShapeError, ValidationError
from .numerics import softmax

N_CTX = 16
S_INIT = 10.0
S_MIN, S_MAX = 1.0, 100.0
DROPOUT_RATE = 0.1

_INIT_TAGS = {"Wq": 0, "Wk": 1, "Wv": 2, "Wo": 3, "Proj": 4, "ctx": 5}
_DROPOUT_TAG = 11


@dataclass
class RouterParams:
    """Trainable routing parameters: shared q/k/v/output projections, the
    distillation projection layer, and the learnable semantic temperature."""

    Wq: np.ndarray
    bq: np.ndarray
    Wk: np.ndarray
    bk: np.ndarray
    Wv: np.ndarray
    bv: np.ndarray
    Wo: np.ndarray
    bo: np.ndarray
    Proj: np.ndarray
    bProj: np.ndarray
    s: np.ndarray           # () scalar, clamped to [1, 100] after updates
    heads: int = 8
    dropout: float = DROPOUT_RATE

    TENSOR_NAMES = ("Wq", "bq", "Wk", "bk", "Wv", "bv", "Wo", "bo", "Proj", "bProj", "s")

    @property
    def dim(self) -> int:
        return int(self.Wq.shape[0])

    @property
    def proj_dim(self) -> int:
        return int(self.Proj.shape[1])

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.TENSOR_NAMES}

    def copy(self) -> "RouterParams":
        return RouterParams(
            **{name: getattr(self, name).copy() for name in self.TENSOR_NAMES},
            heads=self.heads,
            dropout=self.dropout,
        )


@dataclass
class BaseBranchParams:
    """Learnable mean-pooled context offset added to fixed class anchors.

    Only the context vectors train; the base temperature is a fixed scalar
    so the branch's trainable count stays at N_CTX * d.
    """

    ctx: np.ndarray                 # (N_CTX, d)
    s_base: float = S_INIT

    @property
    def dim(self) -> int:
        return int(self.ctx.shape[1])

    def copy(self) -> "BaseBranchParams":
        return BaseBranchParams(ctx=self.ctx.copy(), s_base=self.s_base)


@dataclass
class RoutingOutput:
    routed: np.ndarray      # f_rb: (C, d)
    weights: np.ndarray     # W_r:  (C, V)


def init_router(d: int, pool_size: int, heads: int, proj_dim: int, seed: int) -> RouterParams:
    """Seeded initialization: scaled-uniform query/key/distillation
    projections (bound 1/sqrt(d)), identity-plus-scaled-uniform value and
    output projections, zero biases, temperature 10, dropout 0.1.

    The residual value/output init keeps the routed features aligned with
    the raw prompt pool at step 0, so the branch starts from the pool's
    zero-shot behavior instead of a scrambled map it would have to
    re-learn from imbalanced data.
    """
    if heads < 1 or d % heads != 0:
        raise ConfigurationError(f"head count {heads} does not divide feature dim {d}")
    if pool_size < 1:
        raise EmptyPoolError("prompt pool size must be >= 1")
    if proj_dim < 1:
        raise ConfigurationError("projection dim must be >= 1")
    bound = 1.0 / np.sqrt(d)

    def uniform(tag: str, shape: tuple[int, ...]) -> np.ndarray:
        gen = np.random.default_rng(np.random.SeedSequence((seed, _INIT_TAGS[tag])))
        return gen.uniform(-bound, bound, size=shape)

    return RouterParams(
        Wq=uniform("Wq", (d, d)),
        bq=np.zeros(d),
        Wk=uniform("Wk", (d, d)),
        bk=np.zeros(d),
        Wv=np.eye(d) + uniform("Wv", (d, d)),
        bv=np.zeros(d),
        Wo=np.eye(d) + uniform("Wo", (d, d)),
        bo=np.zeros(d),
        Proj=uniform("Proj", (d, proj_dim)),
        bProj=np.zeros(proj_dim),
        s=np.array(S_INIT),
        heads=heads,
    )


def init_base_branch(d: int, seed: int, n_ctx: int = N_CTX, s_base: float = S_INIT) -> BaseBranchParams:
    gen = np.random.default_rng(np.random.SeedSequence((seed, _INIT_TAGS["ctx"])))
    return BaseBranchParams(ctx=0.02 * gen.standard_normal((n_ctx, d)), s_base=s_base)


def router_trainable_count(params: RouterParams) -> int:
    return int(sum(t.size for t in params.tensors().values()))


def base_trainable_count(params: BaseBranchParams) -> int:
    return int(params.ctx.size)


def dropout_masks(
    shape_bcv: tuple[int, int, int, int],
    rate: float,
    seed: int,
    epoch: int,
    batch_index: int,
) -> np.ndarray:
    """Inverted-dropout masks for attention weights, seeded per
    (epoch, batch, class) so training runs are bit-reproducible."""
    B, C, H, V = shape_bcv
    mask = np.empty((B, C, H, V))
    for c in range(C):
        gen = np.random.default_rng(np.random.SeedSequence((seed, _DROPOUT_TAG, epoch, batch_index, c)))
        keep = gen.random((B, H, V)) >= rate
        mask[:, c] = keep / (1.0 - rate)
    return mask


def c_mha_batch(
    params: RouterParams,
    x: np.ndarray,
    pool: np.ndarray,
    mask: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, dict]:
    """Route a batch of image features against every class's prompt pool.

    x: (B, d) image features; pool: (C, V, d) prompt features.
    Returns routed features (B, C, d), routing weights (B, C, V) taken as
    the head-mean of pre-dropout attention rows, and the backward cache.
    ``mask`` applies inverted dropout to the attention weights used for
    the context (training mode only).
    """
    x = np.asarray(x, dtype=np.float64)
    pool = np.asarray(pool, dtype=np.float64)
    if x.ndim != 2 or pool.ndim != 3:
        raise ShapeError("expected x (B,d) and pool (C,V,d)")
    if pool.shape[1] == 0:
        raise EmptyPoolError("prompt pool is empty")
    d, H = params.dim, params.heads
    if x.shape[1] != d or pool.shape[2] != d:
        raise ShapeError(f"feature dim mismatch: params d={d}, x {x.shape}, pool {pool.shape}")
    B, C, V = x.shape[0], pool.shape[0], pool.shape[1]
    dh = d // H

    q = x @ params.Wq + params.bq                              # (B, d)
    k = pool @ params.Wk + params.bk                           # (C, V, d)
    v = pool @ params.Wv + params.bv
    qh = q.reshape(B, H, dh)
    kh = k.reshape(C, V, H, dh).transpose(0, 2, 1, 3)          # (C, H, V, dh)
    vh = v.reshape(C, V, H, dh).transpose(0, 2, 1, 3)
    logits = np.einsum("bhk,chvk->bchv", qh, kh) / np.sqrt(dh)
    attn = softmax(logits, axis=-1)                            # (B, C, H, V)
    attn_used = attn if mask is None else attn * mask
    ctx = np.einsum("bchv,chvk->bchk", attn_used, vh).reshape(B, C, d)
    routed = ctx @ params.Wo + params.bo                       # (B, C, d)
    weights = attn.mean(axis=2)                                # (B, C, V), pre-dropout
    cache = {
        "x": x, "pool": pool, "qh": qh, "kh": kh, "vh": vh,
        "attn": attn, "attn_used": attn_used, "mask": mask, "ctx": ctx,
        "H": H, "dh": dh, "B": B, "C": C, "V": V,
    }
    return routed, weights, cache


def c_mha_batch_backward(
    params: RouterParams,
    cache: dict,
    g_routed: np.ndarray,
    g_weights: np.ndarray | None = None,
) -> dict[str, np.ndarray]:
    """Gradients of the attention parameters given upstream gradients on
    the routed features and (optionally) the routing weights."""
    x, pool = cache["x"], cache["pool"]
    qh, kh, vh = cache["qh"], cache["kh"], cache["vh"]
    attn, attn_used, mask = cache["attn"], cache["attn_used"], cache["mask"]
    B, C, H, dh = cache["B"], cache["C"], cache["H"], cache["dh"]
    d = params.dim

    g_ctx = g_routed @ params.Wo.T
    g_Wo = np.einsum("bci,bcj->ij", cache["ctx"], g_routed)
    g_bo = g_routed.sum(axis=(0, 1))

    g_ctxh = g_ctx.reshape(B, C, H, dh)
    g_attn_used = np.einsum("bchk,chvk->bchv", g_ctxh, vh)
    g_vh = np.einsum("bchv,bchk->chvk", attn_used, g_ctxh)
    g_attn = g_attn_used if mask is None else g_attn_used * mask
    if g_weights is not None:
        g_attn = g_attn + g_weights[:, :, None, :] / H
    g_logits = attn * (g_attn - np.sum(attn * g_attn, axis=-1, keepdims=True))
    g_logits /= np.sqrt(dh)

    g_qh = np.einsum("bchv,chvk->bhk", g_logits, kh)
    g_kh = np.einsum("bchv,bhk->chvk", g_logits, qh)
    g_q = g_qh.reshape(B, d)
    g_k = g_kh.transpose(0, 2, 1, 3).reshape(C, -1, d)
    g_v = g_vh.transpose(0, 2, 1, 3).reshape(C, -1, d)

    return {
        "Wq": x.T @ g_q,
        "bq": g_q.sum(axis=0),
        "Wk": np.einsum("cvi,cvj->ij", pool, g_k),
        "bk": g_k.sum(axis=(0, 1)),
        "Wv": np.einsum("cvi,cvj->ij", pool, g_v),
        "bv": g_v.sum(axis=(0, 1)),
        "Wo": g_Wo,
        "bo": g_bo,
    }


def c_mha_forward(params: RouterParams, f_ib: np.ndarray, pool: np.ndarray) -> RoutingOutput:
    """Single-image evaluation-mode routing over all class pools."""
    f_ib = np.asarray(f_ib, dtype=np.float64)
    if f_ib.ndim != 1:
        raise ShapeError("f_ib must be a single d-vector")
    routed, weights, _ = c_mha_batch(params, f_ib[None, :], pool, mask=None)
    return RoutingOutput(routed=routed[0], weights=weights[0])


def semantic_logits_batch(
    routed: np.ndarray,
    x: np.ndarray,
    s: np.ndarray | float,
    kind: str = "cosine",
) -> tuple[np.ndarray, dict]:
    """Per-class semantic logits: s * similarity(routed[b,c], x[b]).

    ``kind`` selects cosine (default) or raw dot-product similarity.
    Zero-norm routed rows are treated as cosine 0 and counted.
    """
    if kind not in ("cosine", "dot"):
        raise ValidationError(f"unknown semantic similarity kind {kind!r}")
    s_val = float(np.asarray(s))
    dot = np.einsum("bcd,bd->bc", routed, x)
    if kind == "dot":
        sim = dot
        cache = {"routed": routed, "x": x, "sim": sim, "kind": kind, "s": s_val}
        return s_val * sim, cache
    nf = np.linalg.norm(routed, axis=2)
    nx = np.linalg.norm(x, axis=1)
    denom = nf * nx[:, None]
    zero = denom == 0.0
    counters.bump("semantic_logits.zero_norm", int(zero.sum()))
    safe = np.where(zero, 1.0, denom)
    sim = np.where(zero, 0.0, dot / safe)
    cache = {
        "routed": routed, "x": x, "sim": sim, "kind": kind, "s": s_val,
        "nf": nf, "nx": nx, "denom": safe, "zero": zero,
    }
    return s_val * sim, cache


def semantic_logits_backward(cache: dict, g_logits: np.ndarray) -> tuple[np.ndarray, float]:
    """Returns (gradient on routed features, gradient on s)."""
    s, sim, x, routed = cache["s"], cache["sim"], cache["x"], cache["routed"]
    g_s = float(np.sum(g_logits * sim))
    if cache["kind"] == "dot":
        return s * g_logits[:, :, None] * x[:, None, :], g_s
    denom, nf, zero = cache["denom"], cache["nf"], cache["zero"]
    nf_sq = np.where(zero, 1.0, nf * nf)
    g_routed = (x[:, None, :] / denom[:, :, None] - sim[:, :, None] * routed / nf_sq[:, :, None])
    g_routed *= s * g_logits[:, :, None]
    g_routed[zero] = 0.0
    return g_routed, g_s


def semantic_logits(f_rb: np.ndarray, f_ib: np.ndarray, s: float, kind: str = "cosine") -> np.ndarray:
    """Single-image semantic logits over C routed features."""
    logits, _ = semantic_logits_batch(
        np.asarray(f_rb, dtype=np.float64)[None, ...],
        np.asarray(f_ib, dtype=np.float64)[None, :],
        s,
        kind,
    )
    return logits[0]


def base_logits_batch(
    base: BaseBranchParams,
    x: np.ndarray,
    anchors: np.ndarray,
) -> tuple[np.ndarray, dict]:
    """Class-name branch: cosine of each image against anchors shifted by
    the mean context vector, scaled by the fixed base temperature."""
    x = np.asarray(x, dtype=np.float64)
    anchors = np.asarray(anchors, dtype=np.float64)
    if x.shape[1] != anchors.shape[1] or anchors.shape[1] != base.dim:
        raise ShapeError("feature dim mismatch between images, anchors and context")
    m = base.ctx.mean(axis=0)
    r = anchors + m
    nr = np.linalg.norm(r, axis=1)
    t = r / nr[:, None]
    xn = x / np.linalg.norm(x, axis=1, keepdims=True)
    cos = xn @ t.T
    cache = {"xn": xn, "t": t, "nr": nr, "cos": cos, "n_ctx": base.ctx.shape[0], "s_base": base.s_base}
    return base.s_base * cos, cache


def base_logits_backward(cache: dict, g_logits: np.ndarray) -> np.ndarray:
    """Gradient on the context vectors (each row receives g_mean / n_ctx)."""
    xn, t, nr, cos = cache["xn"], cache["t"], cache["nr"], cache["cos"]
    g_t = cache["s_base"] * (g_logits.T @ xn - (g_logits * cos).sum(axis=0)[:, None] * t)
    g_r = (g_t - np.sum(g_t * t, axis=1, keepdims=True) * t) / nr[:, None]
    g_mean = g_r.sum(axis=0)
    n_ctx = cache["n_ctx"]
    return np.tile(g_mean / n_ctx, (n_ctx, 1))


def base_logits(base: BaseBranchParams, f_ib: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """Single-image base-branch logits."""
    logits, _ = base_logits_batch(base, np.asarray(f_ib, dtype=np.float64)[None, :], anchors)
    return logits[0]


def clamp_temperature(params: RouterParams) -> None:
    params.s[...] = np.clip(params.s, S_MIN, S_MAX)


def iter_trainables(router: RouterParams, base: BaseBranchParams) -> Iterator[tuple[str, np.ndarray]]:
    """All trainable tensors in a stable order (the fixed s_base excluded)."""
    yield from router.tensors().items()
    yield "ctx", base.ctx
