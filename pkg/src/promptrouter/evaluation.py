"""Logit-fused inference, grouped accuracy metrics and the ablation suites."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .data import GROUPS, LongTailDataset, assign_shot_groups
from .encoders import FeatureProvider
from .errors import ValidationError
from .knowledge import KnowledgeBase
from .routing import base_logits_batch, c_mha_batch, semantic_logits_batch

_EVAL_CHUNK = 256


def fuse_logits(base_logits: np.ndarray, routed_logits: np.ndarray, beta: float) -> np.ndarray:
    """Convex combination (1-beta) * base + beta * routed, elementwise."""
    if not 0.0 <= beta <= 1.0:
        raise ValidationError(f"fusion coefficient beta must lie in [0, 1], got {beta}")
    base_logits = np.asarray(base_logits, dtype=np.float64)
    routed_logits = np.asarray(routed_logits, dtype=np.float64)
    if base_logits.shape != routed_logits.shape:
        raise ValidationError(
            f"logit shapes differ: {base_logits.shape} vs {routed_logits.shape}"
        )
    return (1.0 - beta) * base_logits + beta * routed_logits


@dataclass
class EvalReport:
    """Accuracy breakdown of one inference run (percentages)."""

    overall: float
    group_accuracy: dict[str, float]      # only groups that contain classes
    per_class: np.ndarray                 # (C,)
    confusion: np.ndarray                 # (C, C) prediction counts
    sample_count: int
    name: str = ""
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "overall": self.overall,
            "groups": dict(self.group_accuracy),
            "per_class": [float(v) for v in self.per_class],
            "confusion": [[int(v) for v in row] for row in self.confusion],
            "sample_count": int(self.sample_count),
            "meta": dict(self.meta),
        }

    def accuracy_over_classes(self, class_ids: Sequence[int]) -> float:
        """Accuracy restricted to test samples of the given true classes."""
        ids = np.asarray(class_ids, dtype=np.int64)
        correct = self.confusion[ids, ids].sum()
        total = self.confusion[ids].sum()
        if total == 0:
            raise ValidationError("no test samples in the requested classes")
        return 100.0 * float(correct) / float(total)


def predict_logits(
    checkpoint,
    x: np.ndarray,
    kb: KnowledgeBase,
    anchors: np.ndarray,
    beta: float,
    semantic_similarity: str = "cosine",
) -> np.ndarray:
    """Fused evaluation-mode logits for a feature matrix (N, d)."""
    x = np.asarray(x, dtype=np.float64)
    pool = kb.f_p.astype(np.float64)
    anchors = np.asarray(anchors, dtype=np.float64)
    out = []
    for start in range(0, x.shape[0], _EVAL_CHUNK):
        chunk = x[start : start + _EVAL_CHUNK]
        cb, _ = base_logits_batch(checkpoint.base, chunk, anchors)
        routed, _, _ = c_mha_batch(checkpoint.router, chunk, pool, mask=None)
        rb, _ = semantic_logits_batch(routed, chunk, checkpoint.router.s, semantic_similarity)
        out.append(fuse_logits(cb, rb, beta))
    return np.concatenate(out, axis=0)


def evaluate(
    checkpoint,
    dataset: LongTailDataset,
    kb: KnowledgeBase,
    beta: float,
    anchors: np.ndarray | FeatureProvider,
    test_x: np.ndarray | None = None,
    test_y: np.ndarray | None = None,
    semantic_similarity: str = "cosine",
    name: str = "",
) -> EvalReport:
    """Fused-argmax accuracy report over the dataset's balanced test split
    (or an explicit (test_x, test_y) override). Shot groups come from the
    dataset's training counts; a group with no classes is reported absent.
    """
    if isinstance(anchors, FeatureProvider):
        anchors = anchors.anchors()
    x = dataset.test_x if test_x is None else test_x
    y = dataset.test_y if test_y is None else test_y
    if x is None or np.asarray(x).shape[0] == 0:
        raise ValidationError("test split is empty")
    y = np.asarray(y, dtype=np.int64)

    logits = predict_logits(checkpoint, x, kb, anchors, beta, semantic_similarity)
    pred = np.argmax(logits, axis=1)   # ties resolve toward the lowest index
    C = kb.class_count
    confusion = np.zeros((C, C), dtype=np.int64)
    np.add.at(confusion, (y, pred), 1)

    row_totals = confusion.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(row_totals > 0, 100.0 * np.diag(confusion) / row_totals, np.nan)

    groups = dataset.groups
    group_accuracy: dict[str, float] = {}
    for group in GROUPS:
        ids = [c for c in range(C) if groups[c] == group]
        if not ids:
            continue
        total = row_totals[ids].sum()
        if total == 0:
            continue
        correct = confusion[ids, ids].sum()
        group_accuracy[group] = 100.0 * float(correct) / float(total)

    return EvalReport(
        overall=100.0 * float(np.trace(confusion)) / float(y.shape[0]),
        group_accuracy=group_accuracy,
        per_class=per_class,
        confusion=confusion,
        sample_count=int(y.shape[0]),
        name=name,
        meta={"beta": beta},
    )


MODULE_SUITE = ("base", "base+sem", "base+sem+reg")
KNOWLEDGE_SUITE = ("All", "w/o GA", "w/o FA", "w/o FT", "w/o CI", "w/o DF")


def run_module_suite(config, dataset, kb, provider) -> list[EvalReport]:
    """base / base+sem / base+sem+reg, each trained from the same seed.

    The base-only row evaluates with beta = 0 (pure class-name branch);
    the +sem rows use the configured fusion coefficient.
    """
    from .training import train  # local import to avoid a cycle

    anchors = provider.anchors()
    reports = []
    for variant in MODULE_SUITE:
        weights = config.weights
        beta = config.beta
        if variant == "base":
            weights = replace(weights, lambda_sem=0.0, lambda_pa=0.0, lambda_ka=0.0)
            beta = 0.0
        elif variant == "base+sem":
            weights = replace(weights, lambda_pa=0.0, lambda_ka=0.0)
        ckpt, _ = train(replace(config, weights=weights), dataset, kb, provider)
        report = evaluate(
            ckpt, dataset, kb, beta, anchors=anchors,
            semantic_similarity=config.semantic_similarity, name=variant,
        )
        report.meta["weights"] = {
            "lambda_sem": weights.lambda_sem,
            "lambda_pa": weights.lambda_pa,
            "lambda_ka": weights.lambda_ka,
        }
        reports.append(report)
    return reports


def run_knowledge_suite(config, dataset, kb, provider) -> list[EvalReport]:
    """Full knowledge base vs. each drop-one-dimension variant, trained
    with the full objective from the same seed."""
    from .training import train  # local import to avoid a cycle

    anchors = provider.anchors()
    reports = []
    for variant in KNOWLEDGE_SUITE:
        kb_variant = kb if variant == "All" else kb.drop_dimension(variant.split()[-1])
        ckpt, _ = train(config, dataset, kb_variant, provider)
        reports.append(
            evaluate(
                ckpt, dataset, kb_variant, config.beta, anchors=anchors,
                semantic_similarity=config.semantic_similarity, name=variant,
            )
        )
    return reports


def run_ablation(config, dataset, provider, kb: KnowledgeBase) -> dict[str, list[EvalReport]]:
    """Both ablation suites over a shared full knowledge base."""
    return {
        "modules": run_module_suite(config, dataset, kb, provider),
        "knowledge": run_knowledge_suite(config, dataset, kb, provider),
    }


def format_table(reports: list[EvalReport]) -> str:
    """Flat text table: one row per variant (name, All, Many, Med, Few)."""
    header = f"{'Variant':<16}{'All':>8}{'Many':>8}{'Med':>8}{'Few':>8}"
    lines = [header, "-" * len(header)]
    for r in reports:
        cells = [f"{r.name:<16}", f"{r.overall:>8.2f}"]
        for group in GROUPS:
            value = r.group_accuracy.get(group)
            cells.append(f"{'-':>8}" if value is None else f"{value:>8.2f}")
        lines.append("".join(cells))
    return "\n".join(lines) + "\n"


def paired_class_ids(class_count: int) -> list[int]:
    """Classes that belong to a synthetic-world pair (all but a trailing
    unpaired class when the count is odd)."""
    return list(range(class_count - (class_count % 2)))


def grouped_counts(counts: np.ndarray) -> dict[str, int]:
    groups = assign_shot_groups(counts)
    return {g: groups.count(g) for g in GROUPS if g in groups}
