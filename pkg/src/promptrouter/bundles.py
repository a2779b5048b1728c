"""Manifest-plus-raw-binary tensor storage.

A bundle is a directory holding ``manifest.json`` and one or more ``.bin``
payload files of raw little-endian, row-major values. Feature tensors are
stored as 32-bit floats; derived quantities and trainable parameters use
64-bit so save/load round trips are exact.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import IntegrityError, LoadError

FORMAT_VERSION = 1
PAYLOAD_FILE = "tensors.bin"

_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


@dataclass(frozen=True)
class TensorSpec:
    name: str
    dtype: str
    shape: tuple[int, ...]
    file: str
    byte_offset: int

    @property
    def nbytes(self) -> int:
        return _DTYPES[self.dtype].itemsize * int(np.prod(self.shape, dtype=np.int64))


def _canonical_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def write_bundle(
    path: str | Path,
    tensors: dict[str, np.ndarray],
    d: int,
    provenance: str = "",
) -> Path:
    """Write ``tensors`` to a bundle directory, creating it if needed.

    float32 arrays are stored as ``f32``, everything else as ``f64``.
    Tensor order in the payload follows the insertion order of ``tensors``.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    specs = []
    offset = 0
    payload = bytearray()
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        dtype = "f32" if arr.dtype == np.float32 else "f64"
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes()
        specs.append(
            {
                "name": name,
                "dtype": dtype,
                "shape": list(arr.shape),
                "file": PAYLOAD_FILE,
                "byte_offset": offset,
            }
        )
        payload.extend(raw)
        offset += len(raw)
    manifest = {
        "format_version": FORMAT_VERSION,
        "d": int(d),
        "tensors": specs,
        "provenance": provenance,
    }
    (path / PAYLOAD_FILE).write_bytes(bytes(payload))
    (path / "manifest.json").write_text(_canonical_json(manifest), encoding="utf-8")
    return path


def read_manifest(path: str | Path) -> dict:
    path = Path(path)
    mf = path / "manifest.json"
    if not mf.is_file():
        raise LoadError(f"no manifest.json in {path}")
    try:
        manifest = json.loads(mf.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise IntegrityError(f"manifest.json is not valid JSON: {exc}") from exc
    for key in ("format_version", "d", "tensors"):
        if key not in manifest:
            raise LoadError(f"manifest.json missing required field {key!r}")
    if manifest["format_version"] != FORMAT_VERSION:
        raise IntegrityError(
            f"unsupported bundle format_version {manifest['format_version']} (expected {FORMAT_VERSION})"
        )
    return manifest


def read_bundle(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read all tensors from a bundle, validating byte ranges and shapes."""
    path = Path(path)
    manifest = read_manifest(path)
    seen: set[str] = set()
    tensors: dict[str, np.ndarray] = {}
    file_cache: dict[str, bytes] = {}
    for entry in manifest["tensors"]:
        spec = TensorSpec(
            name=entry["name"],
            dtype=entry["dtype"],
            shape=tuple(int(s) for s in entry["shape"]),
            file=entry["file"],
            byte_offset=int(entry["byte_offset"]),
        )
        if spec.name in seen:
            raise IntegrityError(f"duplicate tensor name {spec.name!r} in manifest")
        seen.add(spec.name)
        if spec.dtype not in _DTYPES:
            raise IntegrityError(f"tensor {spec.name!r} has unsupported dtype {spec.dtype!r}")
        if any(s <= 0 for s in spec.shape):
            raise IntegrityError(f"tensor {spec.name!r} has non-positive extent in shape {spec.shape}")
        if spec.file not in file_cache:
            pf = path / spec.file
            if not pf.is_file():
                raise IntegrityError(f"payload file {spec.file!r} missing from bundle")
            file_cache[spec.file] = pf.read_bytes()
        raw = file_cache[spec.file]
        end = spec.byte_offset + spec.nbytes
        if spec.byte_offset < 0 or end > len(raw):
            raise IntegrityError(
                f"tensor {spec.name!r} declares bytes [{spec.byte_offset}, {end}) "
                f"but {spec.file!r} holds {len(raw)} bytes"
            )
        arr = np.frombuffer(raw[spec.byte_offset : end], dtype=_DTYPES[spec.dtype]).reshape(spec.shape)
        tensors[spec.name] = arr.copy()
    return tensors, manifest


def require_tensors(tensors: dict[str, np.ndarray], roles: dict[str, str]) -> None:
    """Raise a LoadError naming the role of the first missing tensor."""
    for name, role in roles.items():
        if name not in tensors:
            raise LoadError(f"bundle is missing tensor {name!r} required for role: {role}")


def write_json(path: str | Path, obj) -> None:
    Path(path).write_text(_canonical_json(obj), encoding="utf-8")


def read_json(path: str | Path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise LoadError(f"missing file {p}")
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise IntegrityError(f"{p.name} is not valid JSON: {exc}") from exc
