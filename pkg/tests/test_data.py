import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from promptrouter.data import (
    FEW,
    MANY,
    MEDIUM,
    LongTailSpec,
    assign_shot_groups,
    load_dataset,
    longtail_counts,
    make_dataset,
    save_dataset,
)
from promptrouter.encoders import SyntheticWorldSpec, make_synthetic_world
from promptrouter.errors import ValidationError


class TestLongtailCounts:
    @pytest.mark.parametrize("ir,total", [(10, 19_573), (50, 12_608), (100, 10_847)])
    def test_benchmark_profile_totals(self, ir, total):
        counts = longtail_counts(500, 100, ir)
        assert sum(counts) == total

    def test_unit_ratio_keeps_n_max(self):
        assert longtail_counts(37, 8, 1) == [37] * 8

    def test_single_class(self):
        assert longtail_counts(10, 1, 100) == [10]

    def test_head_is_n_max(self):
        assert longtail_counts(500, 100, 100)[0] == 500

    def test_bottoming_out_rejected(self):
        with pytest.raises(ValidationError):
            longtail_counts(5, 10, 100)

    @given(st.integers(2, 60), st.integers(10, 400), st.floats(1.0, 120.0))
    @settings(max_examples=60, deadline=None)
    def test_monotone_nonincreasing(self, C, n_max, ir):
        if n_max / ir < 1:
            return
        counts = longtail_counts(n_max, C, ir)
        assert all(a >= b for a, b in zip(counts, counts[1:]))

    @given(st.integers(2, 40), st.integers(50, 500), st.floats(2.0, 100.0))
    @settings(max_examples=60, deadline=None)
    def test_endpoint_ratio_bounded_by_floor_effects(self, C, n_max, ir):
        if n_max / ir < 2:
            return
        counts = longtail_counts(n_max, C, ir)
        ratio = counts[0] / counts[-1]
        # truncation only shrinks the tail count, so the realized ratio
        # sits at or slightly above the nominal one
        assert ratio >= ir - 1e-9
        assert ratio <= ir * (1 + 2.0 / counts[-1])


class TestShotGroups:
    def test_representative_counts(self):
        assert assign_shot_groups([150, 50, 19]) == [MANY, MEDIUM, FEW]

    def test_boundaries_are_medium(self):
        assert assign_shot_groups([100, 20]) == [MEDIUM, MEDIUM]
        assert assign_shot_groups([101, 19]) == [MANY, FEW]

    def test_all_many(self):
        assert assign_shot_groups([500] * 4 ) == [MANY] * 4

    def test_negative_rejected(self):
        with pytest.raises(ValidationError):
            assign_shot_groups([-1])


@pytest.fixture(scope="module")
def world():
    return make_synthetic_world(SyntheticWorldSpec(class_count=6, dim=16, seed=9))


@pytest.fixture(scope="module")
def dataset(world):
    return make_dataset(LongTailSpec(class_count=6, n_max=30, imbalance_ratio=10, test_per_class=8, seed=9), world)


class TestMakeDataset:
    def test_histogram_matches_profile(self, dataset):
        hist = np.bincount(dataset.train_y, minlength=6)
        assert np.array_equal(hist, dataset.counts)
        assert np.array_equal(dataset.counts, longtail_counts(30, 6, 10))

    def test_balanced_test_split(self, dataset):
        hist = np.bincount(dataset.test_y, minlength=6)
        assert np.all(hist == 8)

    def test_determinism(self, world):
        spec = LongTailSpec(class_count=6, n_max=30, imbalance_ratio=10, test_per_class=8, seed=9)
        a = make_dataset(spec, world)
        b = make_dataset(spec, world)
        assert a.train_x.tobytes() == b.train_x.tobytes()
        assert a.test_x.tobytes() == b.test_x.tobytes()

    def test_train_test_disjoint(self, dataset):
        train_rows = {r.tobytes() for r in dataset.train_x}
        assert all(r.tobytes() not in train_rows for r in dataset.test_x)

    def test_epoch_order_is_seeded_and_epoch_dependent(self, dataset):
        assert np.array_equal(dataset.epoch_order(3), dataset.epoch_order(3))
        assert not np.array_equal(dataset.epoch_order(0), dataset.epoch_order(1))

    def test_epoch_batches_cover_everything_once(self, dataset):
        seen = np.concatenate(list(dataset.epoch_batches(0, batch_size=16)))
        assert np.array_equal(np.sort(seen), np.arange(dataset.train_y.size))

    def test_provider_class_shortage_rejected(self, world):
        with pytest.raises(ValidationError):
            make_dataset(LongTailSpec(class_count=10, n_max=30, imbalance_ratio=10, seed=0), world)


class TestDatasetPersistence:
    def test_round_trip(self, dataset, tmp_path):
        save_dataset(dataset, tmp_path / "ds")
        loaded = load_dataset(tmp_path / "ds")
        assert np.array_equal(loaded.counts, dataset.counts)
        assert loaded.groups == dataset.groups
        assert loaded.train_x.tobytes() == dataset.train_x.tobytes()
        assert loaded.test_y.tobytes() == dataset.test_y.tobytes()

    def test_count_mismatch_rejected(self, dataset, tmp_path):
        import json

        path = save_dataset(dataset, tmp_path / "ds")
        split = json.loads((path / "split.json").read_text())
        split["counts"][0] += 1
        (path / "split.json").write_text(json.dumps(split))
        with pytest.raises(Exception):
            load_dataset(path)

    def test_subset_recounts(self, dataset):
        idx = np.flatnonzero(dataset.train_y != 0)
        sub = dataset.subset(idx)
        assert sub.counts[0] == 0
        assert sub.train_y.size == idx.size
