"""Offline knowledge-base construction.

Renders the five-dimension prompt set per class, picks differential
targets from a zero-shot confusion matrix, encodes the pool, and derives
the averaged class features and the prior alignment matrix.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .bundles import read_bundle, read_json, require_tensors, write_bundle, write_json
from .data import LongTailDataset
from .encoders import FeatureProvider
from .errors import LoadError, ValidationError
from .prompts import DEFAULT_WORD_COUNT, DIMENSIONS, PromptRecord, render_prompt

KB_FORMAT_VERSION = 1


@dataclass
class KnowledgeBase:
    """Per-class prompt records plus the derived fixed inputs for routing.

    f_p holds the encoded prompt pool (C, V, d) in float32; f_avg is the
    plain arithmetic mean over dimensions (C, d) and M the prior alignment
    matrix (C, V), both float64. K counts zero-shot predictions (row c =
    true class c). A finished knowledge base is immutable by convention.
    """

    class_names: list[str]
    dim_labels: tuple[str, ...]
    prompts: list[list[PromptRecord]]   # C x V
    f_p: np.ndarray                     # (C, V, d) float32
    f_avg: np.ndarray                   # (C, d) float64
    M: np.ndarray                       # (C, V) float64
    K: np.ndarray                       # (C, C) int64
    confusable: np.ndarray              # (C,) int64
    provenance: str = ""

    @property
    def class_count(self) -> int:
        return len(self.class_names)

    @property
    def pool_size(self) -> int:
        return len(self.dim_labels)

    @property
    def dim(self) -> int:
        return int(self.f_p.shape[2])

    def drop_dimension(self, label: str) -> "KnowledgeBase":
        """Ablated copy without one dimension; f_avg and M are recomputed
        over the remaining pool. K and the confusable map are kept."""
        if label not in self.dim_labels:
            raise ValidationError(f"unknown dimension label {label!r}")
        keep = [i for i, name in enumerate(self.dim_labels) if name != label]
        f_p = self.f_p[:, keep, :]
        return replace(
            self,
            dim_labels=tuple(self.dim_labels[i] for i in keep),
            prompts=[[row[i] for i in keep] for row in self.prompts],
            f_p=f_p,
            f_avg=f_p.astype(np.float64).mean(axis=1),
            M=self.M[:, keep].copy(),
        )


@dataclass(frozen=True)
class PriorStats:
    mean: float
    std: float
    median: float


def zero_shot_confusion(provider: FeatureProvider, dataset: LongTailDataset) -> np.ndarray:
    """Confusion counts of the nearest-anchor classifier on the train split.

    K[c, c'] counts class-c training samples predicted as c'; cosine ties
    break toward the lowest class index.
    """
    if dataset.train_y.size == 0:
        raise ValidationError("cannot build a confusion matrix from an empty dataset")
    C = provider.class_count
    if dataset.train_y.min() < 0 or dataset.train_y.max() >= C:
        raise ValidationError(f"dataset labels fall outside [0, {C})")
    anchors = provider.anchors().astype(np.float64)
    anchors /= np.linalg.norm(anchors, axis=1, keepdims=True)
    x = dataset.train_x.astype(np.float64)
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    pred = np.argmax(x @ anchors.T, axis=1)
    K = np.zeros((C, C), dtype=np.int64)
    np.add.at(K, (dataset.train_y, pred), 1)
    return K


def confusable_map(K: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """Most frequently confused class per row; nearest anchor for rows
    that were never confused. Ties break toward the lowest index."""
    C = K.shape[0]
    off = K.astype(np.float64).copy()
    np.fill_diagonal(off, -1.0)
    targets = np.argmax(off, axis=1)
    unconfused = off.max(axis=1) <= 0
    if unconfused.any():
        a = anchors.astype(np.float64)
        a /= np.linalg.norm(a, axis=1, keepdims=True)
        sim = a @ a.T
        np.fill_diagonal(sim, -np.inf)
        targets = np.where(unconfused, np.argmax(sim, axis=1), targets)
    if np.any(targets == np.arange(C)):
        raise ValidationError("confusable map degenerated to a self-reference")
    return targets.astype(np.int64)


def build_knowledge_base(
    provider: FeatureProvider,
    class_names: list[str],
    dataset: LongTailDataset,
    target_word_count: int = DEFAULT_WORD_COUNT,
    provenance: str = "",
) -> KnowledgeBase:
    """Run the full offline stage: confusion, prompts, encoding, derivations."""
    C = len(class_names)
    if C != provider.class_count:
        raise ValidationError(
            f"{C} class names but provider covers {provider.class_count} classes"
        )
    K = zero_shot_confusion(provider, dataset)
    anchors = provider.anchors()
    confusable = confusable_map(K, anchors)

    V = len(DIMENSIONS)
    prompts: list[list[PromptRecord]] = []
    f_p = np.zeros((C, V, provider.dim), dtype=np.float32)
    for c in range(C):
        row = []
        for v, dim_label in enumerate(DIMENSIONS):
            confusable_id = int(confusable[c]) if dim_label == "DF" else None
            text = render_prompt(
                dim_label,
                class_names[c],
                confusable_name=class_names[confusable_id] if confusable_id is not None else None,
                target_word_count=target_word_count,
            )
            record = PromptRecord(
                class_id=c,
                dimension=dim_label,
                text=text,
                word_count=target_word_count,
                confusable_id=confusable_id,
            )
            row.append(record)
            f_p[c, v] = provider.encode_text(record)
        prompts.append(row)

    f_avg = f_p.astype(np.float64).mean(axis=1)
    pool64 = f_p.astype(np.float64)
    anch64 = anchors.astype(np.float64)
    pool_norm = np.linalg.norm(pool64, axis=2)
    anch_norm = np.linalg.norm(anch64, axis=1)
    M = np.einsum("cvd,cd->cv", pool64, anch64) / (pool_norm * anch_norm[:, None])
    return KnowledgeBase(
        class_names=list(class_names),
        dim_labels=DIMENSIONS,
        prompts=prompts,
        f_p=f_p,
        f_avg=f_avg,
        M=M,
        K=K,
        confusable=confusable,
        provenance=provenance,
    )


def prior_stats(kb: KnowledgeBase) -> PriorStats:
    """Mean, population standard deviation and median over all M entries."""
    m = np.asarray(kb.M, dtype=np.float64).reshape(-1)
    if m.size == 0:
        raise ValidationError("prior matrix is empty")
    return PriorStats(
        mean=float(m.mean()),
        std=float(m.std(ddof=0)),
        median=float(np.median(m)),
    )


def save_kb(kb: KnowledgeBase, path: str | Path) -> Path:
    path = Path(path)
    write_bundle(
        path,
        {
            "f_p": kb.f_p.astype(np.float32),
            "f_avg": kb.f_avg.astype(np.float64),
            "M": kb.M.astype(np.float64),
            "K": kb.K.astype(np.float64),
        },
        d=kb.dim,
        provenance=kb.provenance,
    )
    write_json(
        path / "kb.json",
        {
            "format_version": KB_FORMAT_VERSION,
            "class_names": kb.class_names,
            "dim_labels": list(kb.dim_labels),
            "prompts": [
                [
                    {
                        "dimension": rec.dimension,
                        "text": rec.text,
                        "word_count": rec.word_count,
                        **({"confusable": rec.confusable_id} if rec.confusable_id is not None else {}),
                    }
                    for rec in row
                ]
                for row in kb.prompts
            ],
            "confusable": [int(c) for c in kb.confusable],
            "provenance": kb.provenance,
        },
    )
    return path


def load_kb(path: str | Path) -> KnowledgeBase:
    path = Path(path)
    tensors, _ = read_bundle(path)
    require_tensors(
        tensors,
        {"f_p": "prompt pool", "f_avg": "averaged features", "M": "prior matrix", "K": "confusion matrix"},
    )
    meta = read_json(path / "kb.json")
    for key in ("format_version", "class_names", "dim_labels", "prompts", "confusable"):
        if key not in meta:
            raise LoadError(f"kb.json missing field {key!r}")
    if meta["format_version"] != KB_FORMAT_VERSION:
        raise LoadError(f"unsupported kb.json format_version {meta['format_version']}")
    prompts = []
    for c, row in enumerate(meta["prompts"]):
        recs = []
        for entry in row:
            recs.append(
                PromptRecord(
                    class_id=c,
                    dimension=entry["dimension"],
                    text=entry["text"],
                    word_count=int(entry["word_count"]),
                    confusable_id=entry.get("confusable"),
                )
            )
        prompts.append(recs)
    K = tensors["K"]
    if np.any(K != np.round(K)):
        raise LoadError("stored confusion matrix holds non-integral values")
    return KnowledgeBase(
        class_names=list(meta["class_names"]),
        dim_labels=tuple(meta["dim_labels"]),
        prompts=prompts,
        f_p=tensors["f_p"].astype(np.float32),
        f_avg=tensors["f_avg"].astype(np.float64),
        M=tensors["M"].astype(np.float64),
        K=K.astype(np.int64),
        confusable=np.asarray(meta["confusable"], dtype=np.int64),
        provenance=str(meta.get("provenance", "")),
    )
