import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from promptrouter.data import LongTailDataset, LongTailSpec, assign_shot_groups, make_dataset
from promptrouter.encoders import SyntheticWorldSpec, make_synthetic_world
from promptrouter.errors import ValidationError
from promptrouter.evaluation import (
    KNOWLEDGE_SUITE,
    MODULE_SUITE,
    evaluate,
    format_table,
    fuse_logits,
    paired_class_ids,
    run_ablation,
)
from promptrouter.knowledge import build_knowledge_base
from promptrouter.routing import BaseBranchParams, init_router
from promptrouter.training import Checkpoint, TrainConfig


class TestFusion:
    def test_beta_zero_returns_base(self):
        cb = np.array([1.0, 2.0, 3.0])
        rb = np.array([9.0, 9.0, 9.0])
        assert fuse_logits(cb, rb, 0.0).tobytes() == cb.tobytes()

    def test_beta_one_returns_routed(self):
        cb = np.array([1.0, 2.0, 3.0])
        rb = np.array([9.0, 8.0, 7.0])
        assert fuse_logits(cb, rb, 1.0).tobytes() == rb.tobytes()

    def test_midpoint_hand_value(self):
        assert fuse_logits(np.array([2.0, 0.0]), np.array([0.0, 2.0]), 0.5) == pytest.approx([1.0, 1.0])

    def test_out_of_range_beta_rejected(self):
        with pytest.raises(ValidationError):
            fuse_logits(np.zeros(2), np.zeros(2), 1.5)
        with pytest.raises(ValidationError):
            fuse_logits(np.zeros(2), np.zeros(2), -0.1)

    @given(st.integers(0, 300), st.floats(0.0, 1.0))
    @settings(max_examples=40, deadline=None)
    def test_convexity_per_logit(self, seed, beta):
        rng = np.random.default_rng(seed)
        cb, rb = rng.standard_normal(6), rng.standard_normal(6)
        fused = fuse_logits(cb, rb, beta)
        lo, hi = np.minimum(cb, rb), np.maximum(cb, rb)
        assert np.all(fused >= lo - 1e-12) and np.all(fused <= hi + 1e-12)

    @given(st.integers(0, 300), st.floats(0.0, 1.0))
    @settings(max_examples=40, deadline=None)
    def test_argmax_stability_when_branches_agree(self, seed, beta):
        rng = np.random.default_rng(seed)
        cb = rng.standard_normal(5)
        rb = rng.standard_normal(5)
        k = int(np.argmax(cb))
        rb = rb.copy()
        rb[k] = rb.max() + 1.0  # force agreement
        assert np.argmax(fuse_logits(cb, rb, beta)) == k


def rigged_checkpoint(anchors, d):
    """Base-branch-only checkpoint whose argmax always lands on class 0."""
    router = init_router(d, 5, 2, 4, seed=0)
    base = BaseBranchParams(ctx=np.zeros((16, d)), s_base=10.0)
    return Checkpoint(router=router, base=base, epoch=0, config_hash="rig")


class TestEvaluate:
    def hand_setup(self):
        # two orthogonal anchor directions; the second anchor is negated so
        # every sample scores highest on class 0 at beta=0
        d = 8
        a0 = np.zeros(d); a0[0] = 1.0
        a1 = np.zeros(d); a1[1] = 1.0
        anchors = np.stack([a0, -a1])
        rng = np.random.default_rng(0)
        pool = rng.standard_normal((2, 5, d)).astype(np.float32)
        kb = _kb_stub(pool)
        test_x = np.repeat(np.stack([a0, a1]), 10, axis=0).astype(np.float32)
        test_y = np.repeat([0, 1], 10)
        dataset = LongTailDataset(
            counts=np.array([150, 19]),
            groups=assign_shot_groups([150, 19]),
            train_x=np.zeros((1, d), dtype=np.float32),
            train_y=np.zeros(1, dtype=np.int64),
            test_x=test_x,
            test_y=test_y,
        )
        return anchors, kb, dataset, d

    def test_hand_counted_group_accuracies(self):
        anchors, kb, dataset, d = self.hand_setup()
        report = evaluate(rigged_checkpoint(anchors, d), dataset, kb, beta=0.0, anchors=anchors)
        assert report.overall == pytest.approx(50.0)
        assert report.group_accuracy["Many"] == pytest.approx(100.0)
        assert report.group_accuracy["Few"] == pytest.approx(0.0)
        assert "Medium" not in report.group_accuracy
        assert report.sample_count == 20

    def test_oracle_predictions_give_perfect_scores(self):
        # separable world + anchors as features: untrained base branch at
        # beta=0 reproduces every label
        world = make_synthetic_world(
            SyntheticWorldSpec(class_count=4, dim=32, pair_correlation=0.0, image_noise=0.02, seed=3)
        )
        dataset = make_dataset(
            LongTailSpec(class_count=4, n_max=30, imbalance_ratio=10, test_per_class=6, seed=3), world
        )
        kb = build_knowledge_base(world, [f"c{c}" for c in range(4)], dataset)
        ckpt = Checkpoint(
            router=init_router(32, 5, 2, 4, seed=0),
            base=BaseBranchParams(ctx=np.zeros((16, 32)), s_base=10.0),
            epoch=0,
        )
        report = evaluate(ckpt, dataset, kb, beta=0.0, anchors=world.anchors())
        assert report.overall == pytest.approx(100.0)
        assert all(v == pytest.approx(100.0) for v in report.group_accuracy.values())

    def test_group_partition_and_weighted_identity(self, tiny_setup):
        world, dataset, kb = tiny_setup
        ckpt = Checkpoint(
            router=init_router(world.dim, 5, 2, 4, seed=1),
            base=BaseBranchParams(ctx=np.zeros((16, world.dim)), s_base=10.0),
            epoch=0,
        )
        report = evaluate(ckpt, dataset, kb, beta=0.5, anchors=world.anchors())
        groups = dataset.groups
        weighted = 0.0
        total = 0
        for group, acc in report.group_accuracy.items():
            ids = [c for c in range(kb.class_count) if groups[c] == group]
            n = report.confusion[ids].sum()
            weighted += acc * n
            total += n
        assert total == report.sample_count
        assert weighted / total == pytest.approx(report.overall, abs=1e-9)

    def test_empty_test_split_rejected(self, tiny_setup):
        world, dataset, kb = tiny_setup
        empty = LongTailDataset(
            counts=dataset.counts, groups=dataset.groups,
            train_x=dataset.train_x, train_y=dataset.train_y,
            test_x=np.zeros((0, world.dim), dtype=np.float32),
            test_y=np.zeros(0, dtype=np.int64),
        )
        ckpt = rigged_checkpoint(world.anchors(), world.dim)
        with pytest.raises(ValidationError):
            evaluate(ckpt, empty, kb, beta=0.5, anchors=world.anchors())

    def test_accuracy_over_classes(self):
        anchors, kb, dataset, d = self.hand_setup()
        report = evaluate(rigged_checkpoint(anchors, d), dataset, kb, beta=0.0, anchors=anchors)
        assert report.accuracy_over_classes([0]) == pytest.approx(100.0)
        assert report.accuracy_over_classes([0, 1]) == pytest.approx(50.0)

    def test_few_group_absent_when_no_tail_classes(self):
        anchors, kb, dataset, d = self.hand_setup()
        fat = LongTailDataset(
            counts=np.array([150, 120]),
            groups=assign_shot_groups([150, 120]),
            train_x=dataset.train_x, train_y=dataset.train_y,
            test_x=dataset.test_x, test_y=dataset.test_y,
        )
        report = evaluate(rigged_checkpoint(anchors, d), fat, kb, beta=0.0, anchors=anchors)
        assert "Few" not in report.group_accuracy
        assert set(report.group_accuracy) == {"Many"}


def _kb_stub(pool):
    from promptrouter.knowledge import KnowledgeBase
    from promptrouter.prompts import DIMENSIONS, PromptRecord

    C = pool.shape[0]
    prompts = []
    for c in range(C):
        row = []
        for v in DIMENSIONS:
            row.append(
                PromptRecord(
                    class_id=c, dimension=v, text="stub",
                    confusable_id=(1 - c) if v == "DF" else None,
                )
            )
        prompts.append(row)
    return KnowledgeBase(
        class_names=[f"c{c}" for c in range(C)],
        dim_labels=DIMENSIONS,
        prompts=prompts,
        f_p=pool.astype(np.float32),
        f_avg=pool.astype(np.float64).mean(axis=1),
        M=np.abs(np.random.default_rng(0).random((C, len(DIMENSIONS)))) + 0.1,
        K=np.eye(C, dtype=np.int64),
        confusable=np.array([1, 0]),
    )


@pytest.fixture(scope="module")
def suites():
    world = make_synthetic_world(SyntheticWorldSpec(class_count=4, dim=16, seed=6))
    dataset = make_dataset(
        LongTailSpec(class_count=4, n_max=24, imbalance_ratio=8, test_per_class=5, seed=6), world
    )
    kb = build_knowledge_base(world, [f"c{c}" for c in range(4)], dataset)
    cfg = TrainConfig(epochs=2, batch_size=32, seed=6)
    return run_ablation(cfg, dataset, world, kb)


class TestAblationSuites:
    def test_module_suite_rows(self, suites):
        assert [r.name for r in suites["modules"]] == list(MODULE_SUITE)
        base_row = suites["modules"][0]
        assert base_row.meta["beta"] == 0.0
        assert base_row.meta["weights"]["lambda_sem"] == 0.0
        sem_row = suites["modules"][1]
        assert sem_row.meta["beta"] == 0.5
        assert sem_row.meta["weights"]["lambda_pa"] == 0.0

    def test_knowledge_suite_rows(self, suites):
        assert [r.name for r in suites["knowledge"]] == list(KNOWLEDGE_SUITE)

    def test_format_table_layout(self, suites):
        table = format_table(suites["modules"])
        lines = table.strip().splitlines()
        assert lines[0].split() == ["Variant", "All", "Many", "Med", "Few"]
        assert len(lines) == 2 + len(MODULE_SUITE)
        # this tiny profile has no Many classes: column shows '-'
        assert "-" in lines[2]


def test_paired_class_ids():
    assert paired_class_ids(6) == [0, 1, 2, 3, 4, 5]
    assert paired_class_ids(5) == [0, 1, 2, 3]
