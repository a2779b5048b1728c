"""Training objectives: compensated cross-entropy, prior alignment,
knowledge alignment (temperature-scaled distillation KL), warm-up
scheduling and the weighted total.

Batch losses are arithmetic means over samples. The prior alignment loss
is computed once per batch from the batch-mean routing weights.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import counters
from .errors import NumericError, ShapeError, ValidationError
from .numerics import KL_EPS, softmax


@dataclass(frozen=True)
class LossWeights:
    """Weights and temperatures of the four-part objective.

    lambda_sem and lambda_ka are linearly warmed up from 0 over
    ``warmup_epochs``; lambda_base stays at 1 unless explicitly overridden.
    """

    lambda_base: float = 1.0
    lambda_sem: float = 1.0
    lambda_pa: float = 0.1
    lambda_ka: float = 0.05
    kl_temperature: float = 2.0
    tau: float = 1.0
    warmup_epochs: int = 5

    def __post_init__(self) -> None:
        for name in ("lambda_base", "lambda_sem", "lambda_pa", "lambda_ka", "tau"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValidationError(f"{name} must be a finite nonnegative real, got {v}")
        if self.kl_temperature <= 0:
            raise ValidationError("kl_temperature must be positive")
        if self.warmup_epochs < 0:
            raise ValidationError("warmup_epochs must be >= 0")


def _as_batch(logits: np.ndarray, labels) -> tuple[np.ndarray, np.ndarray]:
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim == 1:
        logits = logits[None, :]
        labels = np.asarray([labels], dtype=np.int64)
    else:
        labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"expected logits (B,C) with labels (B,), got {logits.shape} / {labels.shape}")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ValidationError(f"labels fall outside [0, {logits.shape[1]})")
    return logits, labels


def log_prior_adjustment(class_counts: np.ndarray, tau: float) -> np.ndarray:
    counts = np.asarray(class_counts, dtype=np.float64)
    if np.any(counts < 1):
        raise ValidationError("every class count must be >= 1")
    return tau * np.log(counts / counts.sum())


def compensated_ce_with_grad(
    logits: np.ndarray,
    labels,
    class_counts: np.ndarray,
    tau: float = 1.0,
) -> tuple[float, np.ndarray]:
    """Cross-entropy on logits shifted by tau * log class prior.

    Returns the batch-mean loss and its gradient w.r.t. the raw logits.
    tau = 0 (or uniform counts) reduces to plain cross-entropy.
    """
    logits, labels = _as_batch(logits, labels)
    adjusted = logits + log_prior_adjustment(class_counts, tau)[None, :]
    probs = softmax(adjusted, axis=1)
    B = logits.shape[0]
    picked = probs[np.arange(B), labels]
    loss = float(-np.log(np.maximum(picked, KL_EPS)).mean())
    grad = probs.copy()
    grad[np.arange(B), labels] -= 1.0
    return loss, grad / B


def compensated_ce(logits: np.ndarray, labels, class_counts: np.ndarray, tau: float = 1.0) -> float:
    return compensated_ce_with_grad(logits, labels, class_counts, tau)[0]


def cross_entropy_with_grad(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Plain cross-entropy (the tau = 0 special case, without count checks)."""
    logits, labels = _as_batch(logits, labels)
    probs = softmax(logits, axis=1)
    B = logits.shape[0]
    picked = probs[np.arange(B), labels]
    loss = float(-np.log(np.maximum(picked, KL_EPS)).mean())
    grad = probs.copy()
    grad[np.arange(B), labels] -= 1.0
    return loss, grad / B


def prior_alignment_loss_with_grad(weights: np.ndarray, prior: np.ndarray) -> tuple[float, np.ndarray]:
    """(1/C) sum_c (1 - cosine(weights[c], prior[c])) and its gradient on
    the weight rows. The prior matrix is a fixed input. A zero-norm weight
    row contributes 1 with zero gradient and bumps a warning counter."""
    w = np.asarray(weights, dtype=np.float64)
    m = np.asarray(prior, dtype=np.float64)
    if w.shape != m.shape or w.ndim != 2:
        raise ShapeError(f"weights {w.shape} and prior {m.shape} must be equal 2-D shapes")
    nm = np.linalg.norm(m, axis=1)
    if np.any(nm == 0):
        raise ValidationError("prior matrix has an all-zero row")
    C = w.shape[0]
    nw = np.linalg.norm(w, axis=1)
    zero = nw == 0.0
    counters.bump("prior_alignment.zero_norm_row", int(zero.sum()))
    nw_safe = np.where(zero, 1.0, nw)
    cos = np.where(zero, 0.0, np.sum(w * m, axis=1) / (nw_safe * nm))
    loss = float(np.mean(1.0 - cos))
    grad = -(m / (nw_safe * nm)[:, None] - cos[:, None] * w / (nw_safe**2)[:, None]) / C
    grad[zero] = 0.0
    return loss, grad


def prior_alignment_loss(weights: np.ndarray, prior: np.ndarray) -> float:
    return prior_alignment_loss_with_grad(weights, prior)[0]


def knowledge_alignment_loss_with_grad(
    routed_true: np.ndarray,
    avg_true: np.ndarray,
    proj_w: np.ndarray,
    proj_b: np.ndarray,
    temperature: float,
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Distillation KL between projected averaged features (teacher) and
    projected routed features (student), scaled by T^2 and averaged over
    the batch.

    Returns (loss, g_routed_true, g_proj_w, g_proj_b). The teacher input
    carries no gradient, but the shared projection layer receives
    contributions from both sides.
    """
    if temperature <= 0:
        raise ValidationError("temperature must be positive")
    f_s = np.atleast_2d(np.asarray(routed_true, dtype=np.float64))
    f_t = np.atleast_2d(np.asarray(avg_true, dtype=np.float64))
    if f_s.shape != f_t.shape:
        raise ShapeError(f"student {f_s.shape} and teacher {f_t.shape} shapes differ")
    if f_s.shape[1] != proj_w.shape[0]:
        raise ShapeError("feature dim does not match the projection layer")
    T = float(temperature)
    B = f_s.shape[0]

    z_t = (f_t @ proj_w + proj_b) / T
    z_s = (f_s @ proj_w + proj_b) / T
    if not (np.isfinite(z_t).all() and np.isfinite(z_s).all()):
        # the 0*ln(0) masking below would silently swallow NaN rows
        raise NumericError("L_ka is not finite: non-finite projected features")
    p = softmax(z_t, axis=1)
    q = softmax(z_s, axis=1)
    qc = np.maximum(q, KL_EPS)
    kl = np.sum(np.where(p > 0, p * (np.log(np.maximum(p, KL_EPS)) - np.log(qc)), 0.0), axis=1)
    loss = float(T * T * kl.mean())

    scale = T / B                       # T^2 / (B * T): projection divides by T
    g_zs = q - p                        # softmax-KL student gradient
    g = np.where(p > 0, np.log(np.maximum(p, KL_EPS)) - np.log(qc), 0.0)
    g_zt = p * (g - np.sum(p * g, axis=1, keepdims=True))
    g_routed = scale * (g_zs @ proj_w.T)
    g_proj_w = scale * (f_s.T @ g_zs + f_t.T @ g_zt)
    g_proj_b = scale * (g_zs + g_zt).sum(axis=0)
    if np.asarray(routed_true).ndim == 1:
        g_routed = g_routed[0]
    return loss, g_routed, g_proj_w, g_proj_b


def knowledge_alignment_loss(
    routed_true: np.ndarray,
    avg_true: np.ndarray,
    proj_w: np.ndarray,
    proj_b: np.ndarray,
    temperature: float,
) -> float:
    return knowledge_alignment_loss_with_grad(routed_true, avg_true, proj_w, proj_b, temperature)[0]


def warmup_weight(epoch: int, warmup_epochs: int, target: float) -> float:
    """Linear ramp from 0 at epoch 0 to ``target`` at ``warmup_epochs``."""
    if warmup_epochs < 0:
        raise ValidationError("warmup_epochs must be >= 0")
    if warmup_epochs == 0:
        return float(target)
    return float(target) * min(1.0, epoch / warmup_epochs)


def total_loss(
    l_base: float,
    l_sem: float,
    l_pa: float,
    l_ka: float,
    weights: LossWeights,
    epoch: int,
) -> float:
    """Warm-up-weighted sum of the four components."""
    parts = {"L_base": l_base, "L_sem": l_sem, "L_pa": l_pa, "L_ka": l_ka}
    for name, value in parts.items():
        if not np.isfinite(value):
            raise NumericError(f"{name} is not finite: {value}")
    return (
        weights.lambda_base * l_base
        + warmup_weight(epoch, weights.warmup_epochs, weights.lambda_sem) * l_sem
        + weights.lambda_pa * l_pa
        + warmup_weight(epoch, weights.warmup_epochs, weights.lambda_ka) * l_ka
    )
