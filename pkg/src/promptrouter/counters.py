"""Process-wide counters for recoverable numeric oddities (zero-norm
vectors treated as cosine 0, and similar). Cheap enough to bump in hot
loops; read or reset them from tests and diagnostics."""
from __future__ import annotations

from collections import Counter

counters: Counter[str] = Counter()


def bump(name: str, n: int = 1) -> None:
    if n:
        counters[name] += n


def snapshot() -> dict[str, int]:
    return dict(counters)


def reset() -> None:
    counters.clear()
