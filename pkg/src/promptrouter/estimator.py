"""Scikit-learn style front door.

``RoutedPromptClassifier`` wraps the offline knowledge-base stage and the
online routed training loop behind fit/predict/score, so the de-biasing
pipeline composes with sklearn model selection and pipelines. X rows are
pre-extracted image feature vectors; y holds integer class labels.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import LongTailDataset, assign_shot_groups
from .encoders import FeatureProvider
from .errors import ValidationError
from .evaluation import predict_logits
from .knowledge import KnowledgeBase, build_knowledge_base
from .losses import LossWeights
from .training import TrainConfig, train


class RoutedPromptClassifier(BaseEstimator, ClassifierMixin):
    """Long-tail classifier fusing a class-name branch with attention-routed
    prompt knowledge.

    Parameters
    ----------
    provider:
        Feature provider covering the class vocabulary. Supplies class
        anchors always, and prompt encodings when no prebuilt
        ``knowledge_base`` is given.
    knowledge_base:
        Optional prebuilt knowledge base; built from the training data
        otherwise.
    class_names:
        Names used when building the knowledge base; defaults to
        ``class_00`` .. ``class_{C-1}``.
    beta:
        Fusion coefficient between the class-name branch (0) and the
        routed branch (1).
    """

    def __init__(
        self,
        provider: FeatureProvider | None = None,
        knowledge_base: KnowledgeBase | None = None,
        class_names: list[str] | None = None,
        epochs: int = 20,
        batch_size: int = 64,
        learning_rate: float = 1e-3,
        weight_decay: float = 1e-4,
        lambda_sem: float = 1.0,
        lambda_pa: float = 0.1,
        lambda_ka: float = 0.05,
        kl_temperature: float = 2.0,
        tau: float = 1.0,
        warmup_epochs: int = 5,
        beta: float = 0.5,
        heads: int = 8,
        proj_dim: int = 128,
        seed: int = 0,
    ):
        self.provider = provider
        self.knowledge_base = knowledge_base
        self.class_names = class_names
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.lambda_sem = lambda_sem
        self.lambda_pa = lambda_pa
        self.lambda_ka = lambda_ka
        self.kl_temperature = kl_temperature
        self.tau = tau
        self.warmup_epochs = warmup_epochs
        self.beta = beta
        self.heads = heads
        self.proj_dim = proj_dim
        self.seed = seed

    def _config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            weights=LossWeights(
                lambda_sem=self.lambda_sem,
                lambda_pa=self.lambda_pa,
                lambda_ka=self.lambda_ka,
                kl_temperature=self.kl_temperature,
                tau=self.tau,
                warmup_epochs=self.warmup_epochs,
            ),
            beta=self.beta,
            seed=self.seed,
            heads=self.heads,
            proj_dim=self.proj_dim,
        )

    def fit(self, X, y):
        if self.provider is None:
            raise ValidationError("RoutedPromptClassifier requires a feature provider")
        X, y = check_X_y(X, y, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if y.min() < 0 or y.max() >= self.provider.class_count:
            raise ValidationError(
                f"labels must lie in [0, {self.provider.class_count}); got [{y.min()}, {y.max()}]"
            )
        counts = np.bincount(y, minlength=self.provider.class_count)
        if np.any(counts == 0):
            raise ValidationError("every class needs at least one training sample")
        dataset = LongTailDataset(
            counts=counts,
            groups=assign_shot_groups(counts),
            train_x=X.astype(np.float32),
            train_y=y,
            test_x=np.zeros((0, X.shape[1]), dtype=np.float32),
            test_y=np.zeros(0, dtype=np.int64),
            seed=self.seed,
        )
        kb = self.knowledge_base
        if kb is None:
            names = self.class_names or [f"class_{c:02d}" for c in range(self.provider.class_count)]
            kb = build_knowledge_base(self.provider, names, dataset)
        self.kb_ = kb
        self.anchors_ = self.provider.anchors()
        self.checkpoint_, self.history_ = train(self._config(), dataset, kb, self.provider)
        self.classes_ = np.arange(self.provider.class_count)
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "checkpoint_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValidationError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return predict_logits(self.checkpoint_, X, self.kb_, self.anchors_, self.beta)

    def predict(self, X) -> np.ndarray:
        logits = self.decision_function(X)
        return self.classes_[np.argmax(logits, axis=1)]

    def predict_proba(self, X) -> np.ndarray:
        logits = self.decision_function(X)
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)
