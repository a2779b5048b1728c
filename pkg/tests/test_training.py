import json
from dataclasses import replace

import numpy as np
import pytest

from promptrouter.data import LongTailSpec, make_dataset
from promptrouter.encoders import SyntheticWorldSpec, make_synthetic_world
from promptrouter.errors import LoadError, ValidationError
from promptrouter.evaluation import evaluate
from promptrouter.knowledge import build_knowledge_base
from promptrouter.losses import LossWeights
from promptrouter.numerics import grad_check
from promptrouter.routing import BaseBranchParams, RouterParams, init_base_branch, init_router, iter_trainables
from promptrouter.training import (
    AdamW,
    Checkpoint,
    FixedInputs,
    TrainConfig,
    TrainingAbort,
    cosine_lr,
    forward_backward,
    load_checkpoint,
    save_checkpoint,
    train,
    tune_grid,
    validation_split,
)

FAST = dict(epochs=3, batch_size=32)


class TestSchedule:
    def test_starts_at_base_lr(self):
        assert cosine_lr(1e-3, 0, 100) == pytest.approx(1e-3)

    def test_endpoint_is_negligible(self):
        assert cosine_lr(1e-3, 100, 100) < 1e-6 * 1e-3

    def test_monotone_decay(self):
        values = [cosine_lr(1.0, t, 50) for t in range(51)]
        assert all(a >= b for a, b in zip(values, values[1:]))


class TestAdamW:
    def test_temperature_exempt_from_decay(self):
        params = {"w": np.ones(3), "s": np.array(10.0)}
        opt = AdamW(params, weight_decay=0.5, exempt=("s",))
        grads = {"w": np.zeros(3), "s": np.zeros(())}
        opt.step(params, grads, lr=0.1)
        assert np.all(params["w"] < 1.0)  # decayed
        assert params["s"] == pytest.approx(10.0)  # untouched

    def test_moves_against_gradient(self):
        params = {"w": np.zeros(2)}
        opt = AdamW(params, weight_decay=0.0)
        opt.step(params, {"w": np.array([1.0, -1.0])}, lr=0.1)
        assert params["w"][0] < 0 < params["w"][1]

    def test_temperature_clamped_after_updates(self):
        from promptrouter.routing import clamp_temperature, init_router

        router = init_router(8, 5, 2, 4, seed=0)
        router.s[...] = 250.0
        clamp_temperature(router)
        assert float(router.s) == 100.0
        router.s[...] = 0.01
        clamp_temperature(router)
        assert float(router.s) == 1.0


class TestTrainLoop:
    def test_bitwise_deterministic_runs(self, tiny_setup):
        world, dataset, kb = tiny_setup
        cfg = TrainConfig(seed=4, **FAST)
        ck1, h1 = train(cfg, dataset, kb, world)
        ck2, h2 = train(cfg, dataset, kb, world)
        assert h1.to_jsonl() == h2.to_jsonl()
        for name in RouterParams.TENSOR_NAMES:
            assert getattr(ck1.router, name).tobytes() == getattr(ck2.router, name).tobytes()
        assert ck1.base.ctx.tobytes() == ck2.base.ctx.tobytes()

    def test_kb_tensors_frozen_during_training(self, tiny_setup):
        world, dataset, kb = tiny_setup
        before = (kb.f_p.tobytes(), kb.f_avg.tobytes(), kb.M.tobytes(), kb.K.tobytes())
        train(TrainConfig(seed=5, **FAST), dataset, kb, world)
        after = (kb.f_p.tobytes(), kb.f_avg.tobytes(), kb.M.tobytes(), kb.K.tobytes())
        assert before == after

    def test_history_records_every_epoch_with_finite_values(self, tiny_setup):
        world, dataset, kb = tiny_setup
        cfg = TrainConfig(seed=6, **FAST)
        _, history = train(cfg, dataset, kb, world)
        assert len(history.records) == cfg.epochs
        for rec in history.records:
            assert np.isfinite([rec.loss_total, rec.loss_base, rec.loss_sem, rec.loss_pa, rec.loss_ka, rec.lr]).all()

    def test_warmup_wiring_in_history(self, tiny_setup):
        world, dataset, kb = tiny_setup
        cfg = TrainConfig(seed=7, epochs=7, batch_size=32,
                          weights=LossWeights(lambda_sem=0.8, lambda_ka=0.04, warmup_epochs=5))
        _, history = train(cfg, dataset, kb, world)
        assert history.records[0].lambda_sem_eff == 0.0
        assert history.records[0].lambda_ka_eff == 0.0
        assert history.records[3].lambda_sem_eff == pytest.approx(0.8 * 3 / 5)
        assert history.records[5].lambda_sem_eff == pytest.approx(0.8)
        assert history.records[6].lambda_ka_eff == pytest.approx(0.04)

    def test_loss_decreases_on_seeded_benchmark(self, tiny_setup):
        # warm-up 0 so every epoch optimizes the same objective and the
        # first/last totals are comparable
        world, dataset, kb = tiny_setup
        cfg = TrainConfig(seed=0, epochs=12, batch_size=32,
                          weights=LossWeights(warmup_epochs=0))
        _, history = train(cfg, dataset, kb, world)
        assert history.records[-1].loss_total < history.records[0].loss_total

    def test_nan_in_fixed_inputs_aborts_with_named_component(self, tiny_setup):
        world, dataset, kb = tiny_setup
        poisoned = replace_kb_avg_with_nan(kb)
        with pytest.raises(TrainingAbort, match="L_ka") as err:
            train(TrainConfig(seed=8, **FAST), dataset, poisoned, world)
        assert isinstance(err.value.checkpoint, Checkpoint)

    def test_dimension_mismatch_rejected(self, tiny_setup):
        world, dataset, kb = tiny_setup
        other = make_synthetic_world(SyntheticWorldSpec(class_count=6, dim=32, seed=0))
        with pytest.raises(ValidationError):
            train(TrainConfig(**FAST), dataset, kb, other)


def replace_kb_avg_with_nan(kb):
    from dataclasses import replace as dc_replace

    bad = kb.f_avg.copy()
    bad[0, 0] = np.nan
    return dc_replace(kb, f_avg=bad)


class TestGradSuite:
    def test_total_loss_gradients_at_init(self, grad_instance):
        gi = grad_instance
        fixed = FixedInputs(pool=gi["pool"], anchors=gi["anchors"], avg=gi["avg"],
                            prior=gi["prior"], counts=gi["counts"])
        weights = LossWeights(lambda_base=1.0, lambda_sem=1.0, lambda_pa=0.7, lambda_ka=0.3)
        router0 = init_router(8, 5, 2, 4, seed=1)
        base0 = init_base_branch(8, seed=1)

        def objective(params):
            router = RouterParams(
                **{k: np.asarray(params[k]) for k in RouterParams.TENSOR_NAMES}, heads=2, dropout=0.0
            )
            base = BaseBranchParams(ctx=np.asarray(params["ctx"]), s_base=base0.s_base)
            losses, grads = forward_backward(
                router, base, gi["x"], gi["y"], fixed, weights, epoch=7
            )
            return losses["total"], grads

        params = {k: v.copy() for k, v in iter_trainables(router0, base0)}
        report = grad_check(objective, params, step=1e-5, tol=1e-4)
        assert report.passed, str(report)


class TestCheckpoint:
    def test_round_trip_byte_exact(self, tiny_setup, tmp_path):
        world, dataset, kb = tiny_setup
        ckpt, _ = train(TrainConfig(seed=9, **FAST), dataset, kb, world)
        save_checkpoint(ckpt, tmp_path / "ck")
        loaded = load_checkpoint(tmp_path / "ck")
        for name in RouterParams.TENSOR_NAMES:
            assert getattr(loaded.router, name).tobytes() == getattr(ckpt.router, name).tobytes()
        assert loaded.base.ctx.tobytes() == ckpt.base.ctx.tobytes()
        assert loaded.base.s_base == ckpt.base.s_base
        assert loaded.epoch == ckpt.epoch
        save_checkpoint(loaded, tmp_path / "ck2")
        assert (tmp_path / "ck" / "tensors.bin").read_bytes() == (tmp_path / "ck2" / "tensors.bin").read_bytes()

    def test_metrics_identical_after_round_trip(self, tiny_setup, tmp_path):
        world, dataset, kb = tiny_setup
        ckpt, _ = train(TrainConfig(seed=10, **FAST), dataset, kb, world)
        before = evaluate(ckpt, dataset, kb, 0.5, anchors=world.anchors())
        save_checkpoint(ckpt, tmp_path / "ck")
        after = evaluate(load_checkpoint(tmp_path / "ck"), dataset, kb, 0.5, anchors=world.anchors())
        assert before.overall == after.overall
        assert before.group_accuracy == after.group_accuracy
        assert np.array_equal(before.confusion, after.confusion)

    def test_missing_field_in_checkpoint_json(self, tiny_setup, tmp_path):
        world, dataset, kb = tiny_setup
        ckpt, _ = train(TrainConfig(seed=11, **FAST), dataset, kb, world)
        path = save_checkpoint(ckpt, tmp_path / "ck")
        meta = json.loads((path / "checkpoint.json").read_text())
        del meta["config_hash"]
        (path / "checkpoint.json").write_text(json.dumps(meta))
        with pytest.raises(LoadError, match="config_hash"):
            load_checkpoint(path)


class TestValidationSplit:
    def test_holds_out_last_tenth_at_least_one(self, tiny_setup):
        _, dataset, _ = tiny_setup
        train_idx, val_idx = validation_split(dataset)
        assert set(train_idx) | set(val_idx) == set(range(dataset.train_y.size))
        assert not set(train_idx) & set(val_idx)
        for c in range(dataset.class_count):
            rows = np.flatnonzero(dataset.train_y == c)
            n_val = int(np.sum(dataset.train_y[val_idx] == c))
            assert n_val == max(1, int(np.floor(0.1 * rows.size)))
            # validation takes the trailing rows of each class
            assert set(val_idx) & set(rows) == set(rows[-n_val:])


class TestTuneGrid:
    def test_two_stage_grid_shapes_and_selection(self):
        world = make_synthetic_world(SyntheticWorldSpec(class_count=4, dim=16, seed=2))
        dataset = make_dataset(
            LongTailSpec(class_count=4, n_max=16, imbalance_ratio=4, test_per_class=4, seed=2), world
        )
        kb = build_knowledge_base(world, [f"c{c}" for c in range(4)], dataset)
        cfg = TrainConfig(epochs=1, batch_size=16, seed=2)
        best, rows = tune_grid(cfg, dataset, kb, world)
        stage1 = [r for r in rows if r["stage"] == 1]
        stage2 = [r for r in rows if r["stage"] == 2]
        assert len(stage1) == 4
        assert len(stage2) == 75
        assert best.lambda_sem in (0.1, 0.5, 1.0, 2.0)
        assert best.lambda_pa in (0.01, 0.05, 0.1, 0.5, 1.0)
        assert best.lambda_ka in (0.001, 0.005, 0.01, 0.05, 0.1)
        assert best.kl_temperature in (1.0, 2.0, 5.0)
        # ties break toward the lexicographically smallest stage-2 cell
        best_acc = max(r["val_overall"] for r in stage2)
        first_best = next(
            r for r in stage2 if r["val_overall"] == best_acc
        )
        assert (best.lambda_pa, best.lambda_ka, best.kl_temperature) == (
            first_best["lambda_pa"], first_best["lambda_ka"], first_best["kl_temperature"],
        )
