"""End-to-end training: the four-part objective over both branches, a
decoupled-weight-decay adaptive-moment optimizer with per-step cosine
annealing, checkpointing, and the two-stage loss-weight grid search.

The knowledge-base tensors (prompt pool, averaged features, prior matrix)
are fixed inputs and are never updated.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .bundles import read_bundle, read_json, require_tensors, write_bundle, write_json
from .data import LongTailDataset
from .encoders import FeatureProvider
from .errors import LoadError, NumericError, ValidationError
from .knowledge import KnowledgeBase
from .losses import (
    LossWeights,
    compensated_ce_with_grad,
    cross_entropy_with_grad,
    knowledge_alignment_loss_with_grad,
    prior_alignment_loss_with_grad,
    total_loss,
    warmup_weight,
)
from .routing import (
    BaseBranchParams,
    RouterParams,
    base_logits_batch,
    base_logits_backward,
    c_mha_batch,
    c_mha_batch_backward,
    clamp_temperature,
    dropout_masks,
    init_base_branch,
    init_router,
    iter_trainables,
    semantic_logits_batch,
    semantic_logits_backward,
)

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    weights: LossWeights = field(default_factory=LossWeights)
    beta: float = 0.5
    seed: int = 0
    heads: int = 8
    proj_dim: int = 128
    eval_cadence: int = 0
    base_loss: str = "ce"                  # "ce" or "compensated"
    semantic_similarity: str = "cosine"    # "cosine" or "dot"

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if not 0.0 <= self.beta <= 1.0:
            raise ValidationError(f"beta must lie in [0, 1], got {self.beta}")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ValidationError("weight_decay must be >= 0")
        if self.base_loss not in ("ce", "compensated"):
            raise ValidationError(f"unknown base_loss {self.base_loss!r}")
        if self.semantic_similarity not in ("cosine", "dot"):
            raise ValidationError(f"unknown semantic_similarity {self.semantic_similarity!r}")

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class EpochRecord:
    epoch: int
    loss_total: float
    loss_base: float
    loss_sem: float
    loss_pa: float
    loss_ka: float
    lr: float
    lambda_sem_eff: float
    lambda_ka_eff: float
    val_overall: float | None = None


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(r), sort_keys=True) + "\n" for r in self.records)

    def summary(self) -> dict:
        if not self.records:
            return {}
        first, last = self.records[0], self.records[-1]
        return {
            "epochs": len(self.records),
            "first_epoch_loss": first.loss_total,
            "final_epoch_loss": last.loss_total,
            "final_components": {
                "base": last.loss_base,
                "sem": last.loss_sem,
                "pa": last.loss_pa,
                "ka": last.loss_ka,
            },
        }


@dataclass
class Checkpoint:
    router: RouterParams
    base: BaseBranchParams
    epoch: int
    config_hash: str = ""

    def copy(self) -> "Checkpoint":
        return Checkpoint(self.router.copy(), self.base.copy(), self.epoch, self.config_hash)


class TrainingAbort(NumericError):
    """Raised when a loss goes non-finite; carries the last good checkpoint."""

    def __init__(self, message: str, checkpoint: Checkpoint):
        super().__init__(message)
        self.checkpoint = checkpoint


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    """Per-step cosine annealing from base_lr at step 0 to 0 at total_steps."""
    if total_steps < 1:
        raise ValidationError("total_steps must be >= 1")
    frac = min(max(step, 0), total_steps) / total_steps
    return 0.5 * base_lr * (1.0 + np.cos(np.pi * frac))


@dataclass
class FixedInputs:
    """Float64 views of everything the objective reads but never updates."""

    pool: np.ndarray       # (C, V, d)
    anchors: np.ndarray    # (C, d)
    avg: np.ndarray        # (C, d)
    prior: np.ndarray      # (C, V)
    counts: np.ndarray     # (C,)

    @classmethod
    def from_kb(cls, kb: KnowledgeBase, anchors: np.ndarray, counts: np.ndarray) -> "FixedInputs":
        return cls(
            pool=kb.f_p.astype(np.float64),
            anchors=np.asarray(anchors, dtype=np.float64),
            avg=kb.f_avg.astype(np.float64),
            prior=kb.M.astype(np.float64),
            counts=np.asarray(counts),
        )


def forward_backward(
    router: RouterParams,
    base: BaseBranchParams,
    x: np.ndarray,
    y: np.ndarray,
    fixed: FixedInputs,
    weights: LossWeights,
    epoch: int,
    mask: np.ndarray | None = None,
    base_loss: str = "ce",
    semantic_similarity: str = "cosine",
) -> tuple[dict[str, float], dict[str, np.ndarray]]:
    """One batch of the full objective; returns component losses and
    gradients for every trainable tensor (keys match ``iter_trainables``)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    B = x.shape[0]
    eff_sem = warmup_weight(epoch, weights.warmup_epochs, weights.lambda_sem)
    eff_ka = warmup_weight(epoch, weights.warmup_epochs, weights.lambda_ka)

    # base branch
    cb_logits, cb_cache = base_logits_batch(base, x, fixed.anchors)
    if base_loss == "compensated":
        l_base, g_cb = compensated_ce_with_grad(cb_logits, y, fixed.counts, weights.tau)
    else:
        l_base, g_cb = cross_entropy_with_grad(cb_logits, y)
    g_ctx = base_logits_backward(cb_cache, weights.lambda_base * g_cb)

    # routing branch
    routed, w_r, mha_cache = c_mha_batch(router, x, fixed.pool, mask=mask)
    sem_logits, sem_cache = semantic_logits_batch(routed, x, router.s, semantic_similarity)
    l_sem, g_sem_logits = compensated_ce_with_grad(sem_logits, y, fixed.counts, weights.tau)
    g_routed_sem, g_s = semantic_logits_backward(sem_cache, g_sem_logits)

    l_pa, g_wbar = prior_alignment_loss_with_grad(w_r.mean(axis=0), fixed.prior)
    g_w_r = np.broadcast_to(g_wbar / B, w_r.shape)

    routed_true = routed[np.arange(B), y]
    l_ka, g_routed_true, g_proj_w, g_proj_b = knowledge_alignment_loss_with_grad(
        routed_true, fixed.avg[y], router.Proj, router.bProj, weights.kl_temperature
    )

    l_total = total_loss(l_base, l_sem, l_pa, l_ka, weights, epoch)

    g_routed = eff_sem * g_routed_sem
    if eff_ka != 0.0:
        np.add.at(g_routed, (np.arange(B), y), eff_ka * g_routed_true)
    mha_grads = c_mha_batch_backward(router, mha_cache, g_routed, weights.lambda_pa * g_w_r)

    grads = dict(mha_grads)
    grads["Proj"] = eff_ka * g_proj_w
    grads["bProj"] = eff_ka * g_proj_b
    grads["s"] = np.array(eff_sem * g_s)
    grads["ctx"] = g_ctx

    losses = {
        "total": l_total,
        "base": l_base,
        "sem": l_sem,
        "pa": l_pa,
        "ka": l_ka,
        "lambda_sem_eff": eff_sem,
        "lambda_ka_eff": eff_ka,
    }
    return losses, grads


class AdamW:
    """Decoupled-weight-decay Adam (beta1=0.9, beta2=0.999, eps=1e-8).

    Decay multiplies the weights directly and is skipped for the scalar
    temperature; the gradient path is untouched."""

    def __init__(self, params: dict[str, np.ndarray], weight_decay: float, exempt: tuple[str, ...] = ("s",)):
        self.beta1, self.beta2, self.eps = 0.9, 0.999, 1e-8
        self.weight_decay = weight_decay
        self.exempt = set(exempt)
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, theta in params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if name not in self.exempt and self.weight_decay > 0:
                theta -= lr * self.weight_decay * theta
            theta -= lr * update


def train(
    config: TrainConfig,
    dataset: LongTailDataset,
    kb: KnowledgeBase,
    provider: FeatureProvider,
    prior_counts: np.ndarray | None = None,
) -> tuple[Checkpoint, TrainHistory]:
    """Run the full epoch loop and return the final checkpoint and history.

    ``prior_counts`` overrides the class counts used for the compensated
    cross-entropy prior (the dataset's own counts by default).
    """
    if kb.dim != provider.dim or dataset.dim != provider.dim:
        raise ValidationError(
            f"dimension mismatch: provider d={provider.dim}, kb d={kb.dim}, data d={dataset.dim}"
        )
    if dataset.train_y.size == 0:
        raise ValidationError("training split is empty")
    counts = np.asarray(dataset.counts if prior_counts is None else prior_counts)
    fixed = FixedInputs.from_kb(kb, provider.anchors().astype(np.float64), counts)
    router = init_router(provider.dim, kb.pool_size, config.heads, config.proj_dim, config.seed)
    base = init_base_branch(provider.dim, config.seed)
    params = dict(iter_trainables(router, base))
    opt = AdamW(params, config.weight_decay)

    n_train = dataset.train_y.shape[0]
    batches_per_epoch = (n_train + config.batch_size - 1) // config.batch_size
    total_steps = config.epochs * batches_per_epoch

    history = TrainHistory()
    last_good = Checkpoint(router.copy(), base.copy(), epoch=0, config_hash=config.config_hash())
    step = 0
    lr_now = config.learning_rate
    for epoch in range(config.epochs):
        sums = {"total": 0.0, "base": 0.0, "sem": 0.0, "pa": 0.0, "ka": 0.0}
        seen = 0
        for batch_index, idx in enumerate(dataset.epoch_batches(epoch, config.batch_size)):
            x = dataset.train_x[idx]
            y = dataset.train_y[idx]
            mask = None
            if router.dropout > 0.0:
                mask = dropout_masks(
                    (x.shape[0], kb.class_count, router.heads, kb.pool_size),
                    router.dropout,
                    config.seed,
                    epoch,
                    batch_index,
                )
            try:
                losses, grads = forward_backward(
                    router, base, x, y, fixed, config.weights, epoch,
                    mask=mask, base_loss=config.base_loss,
                    semantic_similarity=config.semantic_similarity,
                )
            except NumericError as exc:
                raise TrainingAbort(f"epoch {epoch}, batch {batch_index}: {exc}", last_good) from exc
            lr_now = cosine_lr(config.learning_rate, step, total_steps)
            opt.step(params, grads, lr_now)
            clamp_temperature(router)
            step += 1
            for key in sums:
                sums[key] += losses[key] * x.shape[0]
            seen += x.shape[0]
        record = EpochRecord(
            epoch=epoch,
            loss_total=sums["total"] / seen,
            loss_base=sums["base"] / seen,
            loss_sem=sums["sem"] / seen,
            loss_pa=sums["pa"] / seen,
            loss_ka=sums["ka"] / seen,
            lr=lr_now,
            lambda_sem_eff=warmup_weight(epoch, config.weights.warmup_epochs, config.weights.lambda_sem),
            lambda_ka_eff=warmup_weight(epoch, config.weights.warmup_epochs, config.weights.lambda_ka),
        )
        if config.eval_cadence > 0 and (epoch + 1) % config.eval_cadence == 0:
            from .evaluation import evaluate  # local import to avoid a cycle

            snapshot = Checkpoint(router, base, epoch + 1, config.config_hash())
            record.val_overall = evaluate(
                snapshot, dataset, kb, config.beta, anchors=fixed.anchors,
                semantic_similarity=config.semantic_similarity,
            ).overall
        history.records.append(record)
        last_good = Checkpoint(router.copy(), base.copy(), epoch + 1, config.config_hash())
    return last_good, history


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> Path:
    path = Path(path)
    tensors: dict[str, np.ndarray] = {
        name: np.asarray(value, dtype=np.float64) for name, value in ckpt.router.tensors().items()
    }
    tensors["ctx"] = ckpt.base.ctx.astype(np.float64)
    tensors["s_base"] = np.array(ckpt.base.s_base, dtype=np.float64)
    write_bundle(path, tensors, d=ckpt.router.dim, provenance="checkpoint")
    write_json(
        path / "checkpoint.json",
        {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "epoch": int(ckpt.epoch),
            "has_optimizer_moments": False,
            "config_hash": ckpt.config_hash,
            "heads": int(ckpt.router.heads),
            "dropout": float(ckpt.router.dropout),
        },
    )
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    tensors, _ = read_bundle(path)
    roles = {name: "router parameters" for name in RouterParams.TENSOR_NAMES}
    roles.update({"ctx": "base branch context", "s_base": "base temperature"})
    require_tensors(tensors, roles)
    meta = read_json(path / "checkpoint.json")
    for key in ("format_version", "epoch", "config_hash", "heads"):
        if key not in meta:
            raise LoadError(f"checkpoint.json missing field {key!r}")
    if meta["format_version"] != CHECKPOINT_FORMAT_VERSION:
        raise LoadError(f"unsupported checkpoint format_version {meta['format_version']}")
    router = RouterParams(
        **{name: tensors[name] for name in RouterParams.TENSOR_NAMES},
        heads=int(meta["heads"]),
        dropout=float(meta.get("dropout", 0.1)),
    )
    base = BaseBranchParams(ctx=tensors["ctx"], s_base=float(tensors["s_base"]))
    return Checkpoint(router=router, base=base, epoch=int(meta["epoch"]), config_hash=meta["config_hash"])


STAGE1_GRID = (0.1, 0.5, 1.0, 2.0)
STAGE2_PA_GRID = (0.01, 0.05, 0.1, 0.5, 1.0)
STAGE2_KA_GRID = (0.001, 0.005, 0.01, 0.05, 0.1)
STAGE2_T_GRID = (1.0, 2.0, 5.0)


def validation_split(dataset: LongTailDataset) -> tuple[np.ndarray, np.ndarray]:
    """Indices of (reduced train, held-out validation): the last 10% of each
    class's train samples, at least one per class."""
    train_idx, val_idx = [], []
    for c in range(dataset.class_count):
        rows = np.flatnonzero(dataset.train_y == c)
        if rows.size == 0:
            continue
        n_val = max(1, int(np.floor(0.1 * rows.size)))
        val_idx.extend(rows[-n_val:])
        train_idx.extend(rows[:-n_val])
    if not train_idx:
        raise ValidationError("validation carve-out left no training samples")
    return np.asarray(train_idx, dtype=np.int64), np.asarray(val_idx, dtype=np.int64)


def tune_grid(
    config: TrainConfig,
    dataset: LongTailDataset,
    kb: KnowledgeBase,
    provider: FeatureProvider,
) -> tuple[LossWeights, list[dict]]:
    """Two-stage loss-weight search by validation overall accuracy.

    Stage 1 sweeps lambda_sem with both regularizers off; stage 2 sweeps
    (lambda_pa, lambda_ka, T) around the best lambda_sem. Ties break toward
    the smaller configuration in lexicographic order. The compensated-CE
    prior uses the full dataset's class counts so carving the validation
    split cannot zero out a class.
    """
    from .evaluation import evaluate  # local import to avoid a cycle

    train_idx, val_idx = validation_split(dataset)
    subset = dataset.subset(train_idx)
    val_x, val_y = dataset.train_x[val_idx], dataset.train_y[val_idx]
    full_counts = dataset.counts

    def run(weights: LossWeights) -> float:
        cfg = replace(config, weights=weights)
        ckpt, _ = train(cfg, subset, kb, provider, prior_counts=full_counts)
        report = evaluate(
            ckpt, subset, kb, config.beta,
            anchors=provider.anchors(), test_x=val_x, test_y=val_y,
            semantic_similarity=config.semantic_similarity,
        )
        return report.overall

    report_rows: list[dict] = []
    base_weights = config.weights

    best_sem, best_sem_acc = None, -1.0
    for lam in STAGE1_GRID:
        weights = replace(base_weights, lambda_sem=lam, lambda_pa=0.0, lambda_ka=0.0)
        acc = run(weights)
        report_rows.append({"stage": 1, "lambda_sem": lam, "lambda_pa": 0.0,
                            "lambda_ka": 0.0, "kl_temperature": base_weights.kl_temperature,
                            "val_overall": acc})
        if acc > best_sem_acc:
            best_sem, best_sem_acc = lam, acc

    best_cell, best_acc = None, -1.0
    for pa in STAGE2_PA_GRID:
        for ka in STAGE2_KA_GRID:
            for temp in STAGE2_T_GRID:
                weights = replace(base_weights, lambda_sem=best_sem, lambda_pa=pa,
                                  lambda_ka=ka, kl_temperature=temp)
                acc = run(weights)
                report_rows.append({"stage": 2, "lambda_sem": best_sem, "lambda_pa": pa,
                                    "lambda_ka": ka, "kl_temperature": temp, "val_overall": acc})
                if acc > best_acc:
                    best_cell, best_acc = (pa, ka, temp), acc

    best = replace(base_weights, lambda_sem=best_sem, lambda_pa=best_cell[0],
                   lambda_ka=best_cell[1], kl_temperature=best_cell[2])
    return best, report_rows
