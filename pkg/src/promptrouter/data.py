"""Long-tailed dataset synthesis and shot-group assignment.

Per-class training counts follow the standard exponential profile
n_c = floor(n_max * IR^(-c/(C-1))); the test split is balanced. Shot
groups follow the Many (>100) / Medium (20-100) / Few (<20) thresholds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bundles import read_bundle, read_json, require_tensors, write_bundle, write_json
from .encoders import FeatureProvider
from .errors import LoadError, ValidationError

MANY, MEDIUM, FEW = "Many", "Medium", "Few"
GROUPS = (MANY, MEDIUM, FEW)

# index offset separating test draws from train draws in the synthetic world
_TEST_INDEX_OFFSET = 1_000_000
_SHUFFLE_TAG = 7


def longtail_counts(n_max: int, class_count: int, imbalance_ratio: float) -> list[int]:
    """Exponentially decaying per-class counts, truncated to integers."""
    if class_count < 1:
        raise ValidationError("class_count must be >= 1")
    if imbalance_ratio < 1:
        raise ValidationError("imbalance_ratio must be >= 1")
    if n_max < 1:
        raise ValidationError("n_max must be >= 1")
    if class_count == 1 or imbalance_ratio == 1:
        return [int(n_max)] * class_count
    counts = [
        int(math.floor(n_max * imbalance_ratio ** (-c / (class_count - 1))))
        for c in range(class_count)
    ]
    if counts[-1] < 1:
        raise ValidationError(
            f"profile bottoms out at {counts[-1]} samples; n_max/IR must be >= 1"
        )
    return counts


def assign_shot_groups(counts: list[int] | np.ndarray) -> list[str]:
    """Many iff n > 100, Medium iff 20 <= n <= 100, Few iff n < 20."""
    groups = []
    for n in counts:
        if n < 0:
            raise ValidationError("counts must be nonnegative")
        groups.append(MANY if n > 100 else (MEDIUM if n >= 20 else FEW))
    return groups


@dataclass(frozen=True)
class LongTailSpec:
    class_count: int = 20
    n_max: int = 100
    imbalance_ratio: float = 100.0
    test_per_class: int = 50
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_max / self.imbalance_ratio < 1:
            raise ValidationError("n_max/IR must be >= 1 so every class keeps a sample")
        if self.test_per_class < 1:
            raise ValidationError("test_per_class must be >= 1")


@dataclass
class LongTailDataset:
    """Feature samples with an imbalanced train split and a balanced test split."""

    counts: np.ndarray          # (C,) per-class train counts
    groups: list[str]           # (C,) shot-group labels
    train_x: np.ndarray         # (N, d) float32
    train_y: np.ndarray         # (N,) int64
    test_x: np.ndarray          # (M, d) float32
    test_y: np.ndarray          # (M,) int64
    seed: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def class_count(self) -> int:
        return int(self.counts.shape[0])

    @property
    def dim(self) -> int:
        return int(self.train_x.shape[1])

    def epoch_order(self, epoch: int, rng_seed: int | None = None) -> np.ndarray:
        """Seeded permutation of train indices, reshuffled from the epoch index."""
        seed = self.seed if rng_seed is None else rng_seed
        gen = np.random.default_rng(np.random.SeedSequence((seed, _SHUFFLE_TAG, epoch)))
        return gen.permutation(self.train_y.shape[0])

    def epoch_batches(self, epoch: int, batch_size: int):
        if batch_size < 1:
            raise ValidationError("batch size must be >= 1")
        order = self.epoch_order(epoch)
        for start in range(0, order.shape[0], batch_size):
            yield order[start : start + batch_size]

    def subset(self, train_indices: np.ndarray) -> "LongTailDataset":
        """New dataset over a subset of train rows; counts are recomputed."""
        y = self.train_y[train_indices]
        counts = np.bincount(y, minlength=self.class_count)
        return LongTailDataset(
            counts=counts,
            groups=assign_shot_groups(counts),
            train_x=self.train_x[train_indices],
            train_y=y,
            test_x=self.test_x,
            test_y=self.test_y,
            seed=self.seed,
        )


def make_dataset(spec: LongTailSpec, provider: FeatureProvider) -> LongTailDataset:
    """Draw a seeded long-tailed train split and balanced test split from a provider."""
    if provider.class_count < spec.class_count:
        raise ValidationError(
            f"provider covers {provider.class_count} classes, spec asks for {spec.class_count}"
        )
    counts = np.asarray(longtail_counts(spec.n_max, spec.class_count, spec.imbalance_ratio))
    train_x, train_y, test_x, test_y = [], [], [], []
    for c in range(spec.class_count):
        for i in range(int(counts[c])):
            train_x.append(provider.encode_image(c, i))
            train_y.append(c)
        for i in range(spec.test_per_class):
            test_x.append(provider.encode_image(c, _TEST_INDEX_OFFSET + i))
            test_y.append(c)
    return LongTailDataset(
        counts=counts,
        groups=assign_shot_groups(counts),
        train_x=np.stack(train_x).astype(np.float32),
        train_y=np.asarray(train_y, dtype=np.int64),
        test_x=np.stack(test_x).astype(np.float32),
        test_y=np.asarray(test_y, dtype=np.int64),
        seed=spec.seed,
    )


def save_dataset(dataset: LongTailDataset, path: str | Path, provenance: str = "") -> Path:
    """Export as a FeatureBundle (train rows first, then test rows) plus split.json."""
    path = Path(path)
    features = np.concatenate([dataset.train_x, dataset.test_x], axis=0)
    labels = np.concatenate([dataset.train_y, dataset.test_y]).astype(np.float32)
    write_bundle(
        path,
        {"image_features": features.astype(np.float32), "image_labels": labels},
        d=dataset.dim,
        provenance=provenance,
    )
    write_json(
        path / "split.json",
        {
            "format_version": 1,
            "counts": [int(n) for n in dataset.counts],
            "groups": list(dataset.groups),
            "seed": int(dataset.seed),
            "train_total": int(dataset.train_y.shape[0]),
            "test_total": int(dataset.test_y.shape[0]),
        },
    )
    return path


def load_dataset(path: str | Path) -> LongTailDataset:
    path = Path(path)
    tensors, _ = read_bundle(path)
    require_tensors(tensors, {"image_features": "images", "image_labels": "images"})
    split = read_json(path / "split.json")
    for key in ("counts", "groups", "seed", "train_total"):
        if key not in split:
            raise LoadError(f"split.json missing field {key!r}")
    n_train = int(split["train_total"])
    features = tensors["image_features"]
    labels = np.asarray(tensors["image_labels"])
    if np.any(labels != np.round(labels)):
        raise LoadError("image_labels must hold integral values")
    labels = labels.astype(np.int64)
    if n_train > features.shape[0]:
        raise LoadError("split.json train_total exceeds stored sample count")
    counts = np.asarray(split["counts"], dtype=np.int64)
    stored = np.bincount(labels[:n_train], minlength=counts.shape[0])
    if not np.array_equal(stored, counts):
        raise LoadError("split.json counts do not match stored train labels")
    return LongTailDataset(
        counts=counts,
        groups=list(split["groups"]),
        train_x=features[:n_train].astype(np.float32),
        train_y=labels[:n_train],
        test_x=features[n_train:].astype(np.float32),
        test_y=labels[n_train:],
        seed=int(split["seed"]),
    )
