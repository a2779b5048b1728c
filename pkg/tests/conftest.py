import numpy as np
import pytest

from promptrouter.data import LongTailSpec, make_dataset
from promptrouter.encoders import SyntheticWorldSpec, make_synthetic_world
from promptrouter.knowledge import build_knowledge_base


@pytest.fixture(scope="session")
def tiny_setup():
    """Small but non-trivial world shared by training/evaluation tests."""
    world = make_synthetic_world(SyntheticWorldSpec(class_count=6, dim=16, seed=21))
    dataset = make_dataset(
        LongTailSpec(class_count=6, n_max=30, imbalance_ratio=15, test_per_class=10, seed=21), world
    )
    names = [f"class_{c:02d}" for c in range(6)]
    kb = build_knowledge_base(world, names, dataset)
    return world, dataset, kb


@pytest.fixture(scope="session")
def grad_instance():
    """The gradient-suite instance: C=3, V=5, d=8, H=2, p=4, batch 4."""
    rng = np.random.default_rng(42)
    C, V, d, B = 3, 5, 8, 4
    pool = rng.standard_normal((C, V, d))
    pool /= np.linalg.norm(pool, axis=2, keepdims=True)
    anchors = rng.standard_normal((C, d))
    anchors /= np.linalg.norm(anchors, axis=1, keepdims=True)
    prior = np.einsum("cvd,cd->cv", pool, anchors)
    x = rng.standard_normal((B, d))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    y = np.array([0, 1, 2, 0])
    counts = np.array([9, 4, 2])
    return {
        "pool": pool,
        "anchors": anchors,
        "avg": pool.mean(axis=1),
        "prior": prior,
        "counts": counts,
        "x": x,
        "y": y,
    }
