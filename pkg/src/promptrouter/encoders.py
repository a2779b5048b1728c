"""Pluggable feature providers.

Two realizations of the encoder pair (text -> unit vector, image -> unit
vector): a deterministic synthetic world for offline testing, and a
file-backed provider that serves externally produced features verbatim.
Synthetic vectors are computed in float64 and cast to float32 once at the
provider boundary, so stored bundles round-trip bit-exactly.
"""
from __future__ import annotations

import logging
import zlib
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bundles import read_bundle, require_tensors, write_bundle
from .errors import ConfigurationError, LoadError, ValidationError
from .prompts import DIMENSIONS, PromptRecord

log = logging.getLogger(__name__)

# RNG stream tags for the synthetic world
_PROTO, _ANCHOR, _IMAGE, _ZDIR, _TEXT = range(5)


class FeatureProvider(ABC):
    """Abstract encoder pair over a fixed class vocabulary."""

    @property
    @abstractmethod
    def dim(self) -> int: ...

    @property
    @abstractmethod
    def class_count(self) -> int: ...

    @abstractmethod
    def encode_text(self, record: PromptRecord) -> np.ndarray:
        """Unit-norm float32 feature of one prompt record."""

    @abstractmethod
    def encode_image(self, class_id: int, index: int) -> np.ndarray:
        """Unit-norm float32 feature of the index-th image of a class."""

    @abstractmethod
    def class_anchor(self, class_id: int) -> np.ndarray:
        """Unit-norm float32 feature of the class's generic anchor prompt."""

    def anchors(self) -> np.ndarray:
        """All class anchors stacked as a (C, d) float32 matrix."""
        return np.stack([self.class_anchor(c) for c in range(self.class_count)])


@dataclass(frozen=True)
class SyntheticWorldSpec:
    """Geometry knobs for the deterministic synthetic world.

    Classes are paired (0,1), (2,3), ...; the odd member of each pair is
    built to have cosine exactly ``pair_correlation`` with the even member.
    """

    class_count: int = 20
    dim: int = 64
    pair_correlation: float = 0.8
    image_noise: float = 0.4
    text_noise: float = 0.1
    dimension_signal: float = 0.3
    differential_repulsion: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.class_count < 2:
            raise ConfigurationError("synthetic world needs at least 2 classes")
        if self.dim < 4:
            raise ConfigurationError("synthetic world needs dim >= 4")
        if not 0.0 <= self.pair_correlation <= 1.0:
            raise ValidationError("pair_correlation must lie in [0, 1]")
        if self.image_noise < 0 or self.text_noise < 0:
            raise ValidationError("noise scales must be nonnegative")
        if self.dimension_signal < 0 or self.differential_repulsion < 0:
            raise ValidationError("dimension_signal and differential_repulsion must be nonnegative")


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, *key)))


def _unit64(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


class SyntheticWorld(FeatureProvider):
    """Deterministic stand-in for a frozen pre-trained encoder pair.

    All encode calls are pure functions of (spec, inputs): the same seed
    reproduces every vector bitwise.
    """

    def __init__(self, spec: SyntheticWorldSpec):
        self.spec = spec
        C, d = spec.class_count, spec.dim
        protos = np.zeros((C, d))
        for c in range(C):
            g = _rng(spec.seed, _PROTO, c).standard_normal(d)
            if c % 2 == 1:
                u = protos[c - 1]
                w = g - (g @ u) * u
                w = _unit64(w)
                a = spec.pair_correlation
                protos[c] = a * u + np.sqrt(1.0 - a * a) * w
            else:
                protos[c] = _unit64(g)
        self._protos = protos

    @property
    def dim(self) -> int:
        return self.spec.dim

    @property
    def class_count(self) -> int:
        return self.spec.class_count

    def prototype(self, class_id: int) -> np.ndarray:
        return self._protos[class_id].copy()

    def paired_class(self, class_id: int) -> int | None:
        partner = class_id ^ 1
        return partner if partner < self.spec.class_count else None

    def class_anchor(self, class_id: int) -> np.ndarray:
        self._check_class(class_id)
        g = _rng(self.spec.seed, _ANCHOR, class_id).standard_normal(self.spec.dim)
        return _unit64(self._protos[class_id] + self.spec.text_noise * g).astype(np.float32)

    def encode_image(self, class_id: int, index: int) -> np.ndarray:
        self._check_class(class_id)
        g = _rng(self.spec.seed, _IMAGE, class_id, index).standard_normal(self.spec.dim)
        return _unit64(self._protos[class_id] + self.spec.image_noise * g).astype(np.float32)

    def encode_text(self, record: PromptRecord) -> np.ndarray:
        self._check_class(record.class_id)
        spec = self.spec
        c = record.class_id
        v = DIMENSIONS.index(record.dimension)
        z = _unit64(_rng(spec.seed, _ZDIR, c, v).standard_normal(spec.dim))
        text_hash = zlib.crc32(record.text.encode("utf-8"))
        g = _rng(spec.seed, _TEXT, c, v, text_hash).standard_normal(spec.dim)
        raw = self._protos[c] + spec.dimension_signal * z + spec.text_noise * g
        if record.dimension == "DF":
            partner = self.paired_class(c)
            if partner is not None:
                raw = raw - spec.differential_repulsion * self._protos[partner]
        return _unit64(raw).astype(np.float32)

    def _check_class(self, class_id: int) -> None:
        if not 0 <= class_id < self.spec.class_count:
            raise ValidationError(f"class id {class_id} outside [0, {self.spec.class_count})")


def make_synthetic_world(spec: SyntheticWorldSpec) -> SyntheticWorld:
    return SyntheticWorld(spec)


class FileBackedProvider(FeatureProvider):
    """Serves anchors, prompt features and image features from a stored bundle.

    Stored vectors are returned verbatim; a row is re-normalized (with a
    warning) only when its norm deviates from 1 by more than 1e-3.
    """

    def __init__(
        self,
        class_anchors: np.ndarray,
        prompt_pool: np.ndarray,
        image_features: np.ndarray,
        image_labels: np.ndarray,
    ):
        self._anchors = self._checked_rows("class_anchors", class_anchors)
        self._pool = prompt_pool
        C = class_anchors.shape[0]
        if prompt_pool.ndim != 3 or prompt_pool.shape[0] != C:
            raise LoadError(f"prompt_pool shape {prompt_pool.shape} does not match {C} classes")
        flat = prompt_pool.reshape(-1, prompt_pool.shape[-1])
        self._pool = self._checked_rows("prompt_pool", flat).reshape(prompt_pool.shape)
        self._images = self._checked_rows("image_features", image_features)
        labels = np.asarray(image_labels)
        if np.any(labels != np.round(labels)):
            raise LoadError("image_labels must hold integral values")
        self._labels = labels.astype(np.int64).reshape(-1)
        if self._labels.shape[0] != self._images.shape[0]:
            raise LoadError("image_labels length does not match image_features rows")
        if self._labels.size and (self._labels.min() < 0 or self._labels.max() >= C):
            raise LoadError(f"image_labels contain ids outside [0, {C})")
        self._by_class = [np.flatnonzero(self._labels == c) for c in range(C)]

    @staticmethod
    def _checked_rows(name: str, arr: np.ndarray) -> np.ndarray:
        arr = np.asarray(arr, dtype=np.float32)
        mat = arr.reshape(-1, arr.shape[-1])
        norms = np.linalg.norm(mat.astype(np.float64), axis=1)
        bad = np.abs(norms - 1.0) > 1e-3
        if bad.any():
            log.warning("%s: re-normalizing %d row(s) with norm off unity by > 1e-3", name, int(bad.sum()))
            mat = mat.copy()
            mat[bad] = (mat[bad].astype(np.float64) / norms[bad, None]).astype(np.float32)
            arr = mat.reshape(arr.shape)
        return arr

    @property
    def dim(self) -> int:
        return int(self._anchors.shape[1])

    @property
    def class_count(self) -> int:
        return int(self._anchors.shape[0])

    @property
    def pool_size(self) -> int:
        return int(self._pool.shape[1])

    def class_anchor(self, class_id: int) -> np.ndarray:
        return self._anchors[class_id].copy()

    def encode_text(self, record: PromptRecord) -> np.ndarray:
        v = DIMENSIONS.index(record.dimension)
        if v >= self.pool_size:
            raise LoadError(f"stored prompt pool has only {self.pool_size} dimensions")
        return self._pool[record.class_id, v].copy()

    def encode_image(self, class_id: int, index: int) -> np.ndarray:
        rows = self._by_class[class_id]
        if index >= rows.size:
            raise ValidationError(
                f"class {class_id} holds {rows.size} stored images; index {index} out of range"
            )
        return self._images[rows[index]].copy()

    def images_of(self, class_id: int) -> np.ndarray:
        return self._images[self._by_class[class_id]].copy()

    def stored_image_count(self, class_id: int) -> int:
        return int(self._by_class[class_id].size)


PROVIDER_ROLES = {
    "class_anchors": "class anchors",
    "prompt_pool": "prompt pool",
    "image_features": "images",
    "image_labels": "images",
}


def load_feature_bundle(path: str | Path) -> FileBackedProvider:
    """Load a provider bundle, validating presence of every role tensor."""
    tensors, manifest = read_bundle(path)
    require_tensors(tensors, PROVIDER_ROLES)
    provider = FileBackedProvider(
        tensors["class_anchors"],
        tensors["prompt_pool"],
        tensors["image_features"],
        tensors["image_labels"],
    )
    if provider.dim != int(manifest["d"]):
        raise LoadError(f"manifest declares d={manifest['d']} but tensors carry d={provider.dim}")
    return provider


def save_feature_bundle(
    path: str | Path,
    class_anchors: np.ndarray,
    prompt_pool: np.ndarray,
    image_features: np.ndarray,
    image_labels: np.ndarray,
    provenance: str = "",
) -> Path:
    """Write the four provider role tensors as a bundle (features as f32)."""
    return write_bundle(
        path,
        {
            "class_anchors": np.asarray(class_anchors, dtype=np.float32),
            "prompt_pool": np.asarray(prompt_pool, dtype=np.float32),
            "image_features": np.asarray(image_features, dtype=np.float32),
            "image_labels": np.asarray(image_labels, dtype=np.float32),
        },
        d=int(class_anchors.shape[-1]),
        provenance=provenance,
    )
