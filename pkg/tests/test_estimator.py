import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from promptrouter.data import LongTailSpec, make_dataset
from promptrouter.encoders import SyntheticWorldSpec, make_synthetic_world
from promptrouter.errors import ValidationError
from promptrouter.estimator import RoutedPromptClassifier


@pytest.fixture(scope="module")
def easy_problem():
    world = make_synthetic_world(
        SyntheticWorldSpec(class_count=4, dim=16, pair_correlation=0.3, image_noise=0.15, seed=31)
    )
    dataset = make_dataset(
        LongTailSpec(class_count=4, n_max=25, imbalance_ratio=5, test_per_class=10, seed=31), world
    )
    return world, dataset


def test_fit_predict_scores_high_on_easy_world(easy_problem):
    world, dataset = easy_problem
    clf = RoutedPromptClassifier(provider=world, epochs=4, batch_size=32, seed=31)
    clf.fit(dataset.train_x, dataset.train_y)
    assert clf.score(dataset.test_x, dataset.test_y) >= 0.9
    assert np.array_equal(clf.classes_, np.arange(4))


def test_decision_function_shape_and_proba(easy_problem):
    world, dataset = easy_problem
    clf = RoutedPromptClassifier(provider=world, epochs=2, batch_size=32, seed=31)
    clf.fit(dataset.train_x, dataset.train_y)
    logits = clf.decision_function(dataset.test_x[:7])
    assert logits.shape == (7, 4)
    proba = clf.predict_proba(dataset.test_x[:7])
    assert proba.sum(axis=1) == pytest.approx(np.ones(7))
    assert np.array_equal(np.argmax(proba, axis=1), clf.predict(dataset.test_x[:7]))


def test_requires_provider():
    clf = RoutedPromptClassifier()
    with pytest.raises(ValidationError):
        clf.fit(np.zeros((4, 8)), np.zeros(4, dtype=int))


def test_predict_before_fit_raises(easy_problem):
    world, _ = easy_problem
    clf = RoutedPromptClassifier(provider=world)
    with pytest.raises(NotFittedError):
        clf.predict(np.zeros((2, 16)))


def test_every_class_needs_a_sample(easy_problem):
    world, dataset = easy_problem
    mask = dataset.train_y != 3
    clf = RoutedPromptClassifier(provider=world, epochs=1)
    with pytest.raises(ValidationError):
        clf.fit(dataset.train_x[mask], dataset.train_y[mask])


def test_get_params_round_trips_through_clone(easy_problem):
    world, _ = easy_problem
    clf = RoutedPromptClassifier(provider=world, epochs=3, lambda_sem=0.5, beta=0.25)
    cloned = clone(clf)
    assert cloned.epochs == 3
    assert cloned.lambda_sem == 0.5
    assert cloned.beta == 0.25
    # clone deep-copies non-estimator params; the provider must stay equivalent
    assert cloned.provider.spec == world.spec
    assert cloned.provider.encode_image(0, 0).tobytes() == world.encode_image(0, 0).tobytes()


def test_prebuilt_knowledge_base_is_used(easy_problem):
    world, dataset = easy_problem
    from promptrouter.knowledge import build_knowledge_base

    kb = build_knowledge_base(world, [f"c{c}" for c in range(4)], dataset)
    clf = RoutedPromptClassifier(provider=world, knowledge_base=kb, epochs=2, seed=31)
    clf.fit(dataset.train_x, dataset.train_y)
    assert clf.kb_ is kb


def test_feature_width_must_match(easy_problem):
    world, dataset = easy_problem
    clf = RoutedPromptClassifier(provider=world, epochs=1, seed=31)
    clf.fit(dataset.train_x, dataset.train_y)
    with pytest.raises(ValidationError):
        clf.decision_function(np.zeros((2, 8)))
