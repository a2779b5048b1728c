"""Dense numeric kernel: softmax/attention/KL primitives and a
finite-difference gradient checker.

Everything here is a pure function over float64 numpy arrays. Loss and
gradient computation elsewhere in the package runs in float64; float32
is reserved for stored feature bundles.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import ConfigurationError, EmptyPoolError, NumericError, ShapeError, ValidationError

KL_EPS = 1e-12


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    """Shift-stabilized softmax along ``axis``."""
    z = np.asarray(z, dtype=np.float64)
    m = np.max(z, axis=axis, keepdims=True)
    e = np.exp(z - m)
    return e / np.sum(e, axis=axis, keepdims=True)


def scaled_dot_product_attention(
    query: np.ndarray,
    keys: np.ndarray,
    values: np.ndarray,
    heads: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Multi-head attention of a single query over a pool of V key/value rows.

    Splits ``query``, ``keys`` and ``values`` into ``heads`` contiguous
    slices of width d/heads. Per head the pool weights are the softmax of
    q_h.k_h / sqrt(d/heads) and the head context is the weighted value sum.
    Returns the concatenated per-head contexts (no output projection) and
    the mean over heads of the per-head weight rows.
    """
    query = np.asarray(query, dtype=np.float64)
    keys = np.asarray(keys, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if query.ndim != 1 or keys.ndim != 2 or values.ndim != 2:
        raise ShapeError("expected query (d,), keys (V,d), values (V,d)")
    d = query.shape[0]
    if keys.shape[0] == 0:
        raise EmptyPoolError("attention pool is empty")
    if keys.shape != values.shape or keys.shape[1] != d:
        raise ShapeError(f"incompatible shapes: query {query.shape}, keys {keys.shape}, values {values.shape}")
    if heads < 1 or d % heads != 0:
        raise ConfigurationError(f"head count {heads} does not divide feature dim {d}")
    dh = d // heads
    v_count = keys.shape[0]

    qh = query.reshape(heads, dh)
    kh = keys.reshape(v_count, heads, dh).transpose(1, 0, 2)   # (H, V, dh)
    vh = values.reshape(v_count, heads, dh).transpose(1, 0, 2)
    logits = np.einsum("hk,hvk->hv", qh, kh) / np.sqrt(dh)
    w = softmax(logits, axis=-1)                               # (H, V)
    context = np.einsum("hv,hvk->hk", w, vh).reshape(d)
    return context, w.mean(axis=0)


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) for two probability vectors, with 0*ln(0) := 0.

    ``q`` is clamped below at 1e-12 before the division; both inputs must
    sum to 1 within 1e-6.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise ShapeError(f"distribution shapes differ: {p.shape} vs {q.shape}")
    for name, v in (("p", p), ("q", q)):
        if np.any(v < 0):
            raise ValidationError(f"{name} has negative entries")
        if abs(float(v.sum()) - 1.0) > 1e-6:
            raise ValidationError(f"{name} sums to {v.sum():.8f}, not 1 within 1e-6")
    qc = np.maximum(q, KL_EPS)
    terms = np.where(p > 0, p * (np.log(np.maximum(p, KL_EPS)) - np.log(qc)), 0.0)
    return float(terms.sum())


Objective = Callable[[Mapping[str, np.ndarray]], tuple[float, dict[str, np.ndarray]]]


@dataclass
class GradCheckReport:
    """Outcome of comparing analytic gradients against central differences."""

    per_param: dict[str, float] = field(default_factory=dict)
    max_rel_error: float = 0.0
    passed: bool = True
    step: float = 1e-5
    tol: float = 1e-4
    worst_param: str = ""
    noise_floor: float = 0.0

    def __str__(self) -> str:  # pragma: no cover - debugging aid
        status = "PASS" if self.passed else "FAIL"
        return f"grad check {status}: max rel err {self.max_rel_error:.3e} (worst: {self.worst_param}, tol {self.tol:g})"


def grad_check(
    objective: Objective,
    params: Mapping[str, np.ndarray],
    step: float = 1e-5,
    tol: float = 1e-4,
) -> GradCheckReport:
    """Verify analytic gradients of a scalar objective with central differences.

    ``objective(params)`` must return ``(value, grads)`` where ``grads`` maps
    each parameter name to an array of its shape. Every coordinate of every
    parameter is perturbed by +/- ``step``; the relative error is
    |analytic - numeric| / max(1e-8, |analytic| + |numeric|).

    Central differences carry cancellation noise of order
    eps * |f| / (2 * step); analytic/numeric differences below that budget
    are counted as agreement since no step size could resolve them. A
    deliberately wrong analytic gradient still exceeds the budget and fails.
    """
    if step <= 0:
        raise ValidationError("step must be positive")
    if tol <= 0:
        raise ValidationError("tol must be positive")
    work = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    value, grads = objective(work)
    if not np.isfinite(value):
        raise NumericError(f"objective is not finite at the base point: {value}")
    noise_floor = 16.0 * np.finfo(np.float64).eps * max(1.0, abs(value)) / (2.0 * step)

    report = GradCheckReport(step=step, tol=tol, noise_floor=noise_floor)
    for name, theta in work.items():
        analytic = np.asarray(grads[name], dtype=np.float64)
        if analytic.shape != theta.shape:
            raise ShapeError(f"gradient for {name!r} has shape {analytic.shape}, expected {theta.shape}")
        worst = 0.0
        flat = theta.reshape(-1)
        aflat = analytic.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus, _ = objective(work)
            flat[i] = orig - step
            f_minus, _ = objective(work)
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericError(f"objective not finite while perturbing {name}[{i}]")
            numeric = (f_plus - f_minus) / (2.0 * step)
            if abs(aflat[i] - numeric) <= noise_floor:
                continue
            rel = abs(aflat[i] - numeric) / max(1e-8, abs(aflat[i]) + abs(numeric))
            worst = max(worst, rel)
        report.per_param[name] = worst
        if worst > report.max_rel_error:
            report.max_rel_error = worst
            report.worst_param = name
    report.passed = report.max_rel_error <= tol
    return report


def unit(v: np.ndarray) -> np.ndarray:
    """Normalize to Euclidean length 1 (raises on zero vectors)."""
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise NumericError("cannot normalize a zero vector")
    return v / n


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; defined as 0 when either vector has zero norm."""
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))
