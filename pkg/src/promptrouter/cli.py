"""Command-line surface for the full pipeline.

Subcommands: gen-world, build-kb, train, eval, ablate, tune, kb-stats.
Configuration comes from an INI-style file with sections mirroring the
module names ([world], [data], [train], [losses], [eval]); flags override
file values, and the fully resolved configuration is echoed into every
output directory. Exit codes: 0 success, 1 validation/usage error,
2 numeric or integrity error.
"""
from __future__ import annotations

import argparse
import configparser
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .bundles import read_json, write_json
from .data import LongTailDataset, LongTailSpec, load_dataset, make_dataset, save_dataset
from .encoders import (
    FileBackedProvider,
    SyntheticWorldSpec,
    load_feature_bundle,
    make_synthetic_world,
    save_feature_bundle,
)
from .errors import IntegrityError, NumericError, ValidationError
from .evaluation import evaluate, format_table, run_ablation
from .knowledge import build_knowledge_base, load_kb, prior_stats, save_kb
from .losses import LossWeights
from .prompts import PromptRecord
from .training import TrainConfig, load_checkpoint, save_checkpoint, train, tune_grid

_WORLD_KEYS = {
    "classes": ("class_count", int),
    "dim": ("dim", int),
    "alpha": ("pair_correlation", float),
    "image_noise": ("image_noise", float),
    "text_noise": ("text_noise", float),
    "dimension_signal": ("dimension_signal", float),
    "differential_repulsion": ("differential_repulsion", float),
}
_DATA_KEYS = {
    "classes": ("class_count", int),
    "n_max": ("n_max", int),
    "ir": ("imbalance_ratio", float),
    "test_per_class": ("test_per_class", int),
}
_TRAIN_KEYS = {
    "epochs": ("epochs", int),
    "batch": ("batch_size", int),
    "lr": ("learning_rate", float),
    "weight_decay": ("weight_decay", float),
    "beta": ("beta", float),
    "heads": ("heads", int),
    "proj_dim": ("proj_dim", int),
    "base_loss": ("base_loss", str),
    "semantic_similarity": ("semantic_similarity", str),
}
_LOSS_KEYS = {
    "lambda_base": ("lambda_base", float),
    "lambda_sem": ("lambda_sem", float),
    "lambda_pa": ("lambda_pa", float),
    "lambda_ka": ("lambda_ka", float),
    "kl_temp": ("kl_temperature", float),
    "tau": ("tau", float),
    "warmup_epochs": ("warmup_epochs", int),
}


class _Parser(argparse.ArgumentParser):
    """argparse variant whose usage errors exit 1 instead of 2."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _read_config(path: str | None) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    if path:
        p = Path(path)
        if not p.is_file():
            raise ValidationError(f"config file not found: {p}")
        cp.read(p, encoding="utf-8")
    return cp


def _collect(cp: configparser.ConfigParser, section: str, keys: dict, overrides: dict) -> dict:
    out = {}
    for key, (field, cast) in keys.items():
        if key in overrides and overrides[key] is not None:
            out[field] = cast(overrides[key])
        elif cp.has_option(section, key):
            try:
                out[field] = cast(cp.get(section, key))
            except ValueError as exc:
                raise ValidationError(f"[{section}] {key}: {exc}") from exc
    return out


def _resolved_config(world: SyntheticWorldSpec | None, data: LongTailSpec | None,
                     cfg: TrainConfig | None, seed: int) -> str:
    cp = configparser.ConfigParser()
    cp["run"] = {"seed": str(seed)}
    if world is not None:
        back = {v[0]: k for k, v in _WORLD_KEYS.items()}
        cp["world"] = {back.get(k, k): repr(v) for k, v in asdict(world).items() if k != "seed"}
    if data is not None:
        back = {v[0]: k for k, v in _DATA_KEYS.items()}
        cp["data"] = {back.get(k, k): repr(v) for k, v in asdict(data).items() if k != "seed"}
    if cfg is not None:
        d = asdict(cfg)
        weights = d.pop("weights")
        back = {v[0]: k for k, v in _TRAIN_KEYS.items()}
        cp["train"] = {back.get(k, k): repr(v) for k, v in d.items() if k != "seed"}
        back_l = {v[0]: k for k, v in _LOSS_KEYS.items()}
        cp["losses"] = {back_l.get(k, k): repr(v) for k, v in weights.items()}
    import io

    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def _echo_config(out: Path, text: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.ini").write_text(text, encoding="utf-8")


def _build_specs(args) -> tuple[SyntheticWorldSpec, LongTailSpec, TrainConfig]:
    cp = _read_config(args.config)
    seed = args.seed if args.seed is not None else cp.getint("run", "seed", fallback=0)
    overrides = vars(args)
    world = SyntheticWorldSpec(seed=seed, **_collect(cp, "world", _WORLD_KEYS, overrides))
    data_kwargs = _collect(cp, "data", _DATA_KEYS, overrides)
    data_kwargs.setdefault("class_count", world.class_count)
    data = LongTailSpec(seed=seed, **data_kwargs)
    loss_kwargs = _collect(cp, "losses", _LOSS_KEYS, overrides)
    train_kwargs = _collect(cp, "train", _TRAIN_KEYS, overrides)
    cfg = TrainConfig(seed=seed, weights=LossWeights(**loss_kwargs), **train_kwargs)
    return world, data, cfg


def _load_world(path: str) -> tuple[FileBackedProvider, LongTailDataset, list[str]]:
    provider = load_feature_bundle(path)
    meta = read_json(Path(path) / "world.json")
    dataset = load_dataset(path)
    return provider, dataset, list(meta["class_names"])


def _cmd_gen_world(args) -> int:
    world_spec, data_spec, _ = _build_specs(args)
    out = Path(args.out)
    provider = make_synthetic_world(world_spec)
    dataset = make_dataset(data_spec, provider)
    class_names = [f"class_{c:02d}" for c in range(world_spec.class_count)]
    # the stored prompt pool must match what build-kb will re-derive
    kb = build_knowledge_base(provider, class_names, dataset)
    features = np.concatenate([dataset.train_x, dataset.test_x], axis=0)
    labels = np.concatenate([dataset.train_y, dataset.test_y]).astype(np.float32)
    save_feature_bundle(
        out,
        provider.anchors(),
        kb.f_p,
        features,
        labels,
        provenance=f"synthetic world seed={world_spec.seed}",
    )
    write_json(
        out / "split.json",
        {
            "format_version": 1,
            "counts": [int(n) for n in dataset.counts],
            "groups": list(dataset.groups),
            "seed": int(dataset.seed),
            "train_total": int(dataset.train_y.shape[0]),
            "test_total": int(dataset.test_y.shape[0]),
        },
    )
    write_json(
        out / "world.json",
        {
            "format_version": 1,
            "class_names": class_names,
            "spec": asdict(world_spec),
            "data_spec": asdict(data_spec),
            "provenance": f"synthetic world seed={world_spec.seed}",
        },
    )
    _echo_config(out, _resolved_config(world_spec, data_spec, None, world_spec.seed))
    print(f"world written to {out} ({dataset.train_y.size} train / {dataset.test_y.size} test samples)")
    return 0


def _cmd_build_kb(args) -> int:
    provider, dataset, class_names = _load_world(args.world)
    kb = build_knowledge_base(provider, class_names, dataset, provenance=f"kb from {args.world}")
    out = Path(args.out)
    save_kb(kb, out)
    _echo_config(out, _resolved_config(None, None, None, dataset.seed))
    stats = prior_stats(kb)
    print(f"kb written to {out} (C={kb.class_count}, V={kb.pool_size}, d={kb.dim}; "
          f"prior M mean={stats.mean:.4f})")
    return 0


def _cmd_train(args) -> int:
    _, _, cfg = _build_specs(args)
    provider, dataset, _ = _load_world(args.world)
    kb = load_kb(args.kb)
    ckpt, history = train(cfg, dataset, kb, provider)
    out = Path(args.out)
    save_checkpoint(ckpt, out / "checkpoint")
    (out / "history.jsonl").write_text(history.to_jsonl(), encoding="utf-8")
    write_json(out / "summary.json", history.summary())
    _echo_config(out, _resolved_config(None, None, cfg, cfg.seed))
    last = history.records[-1]
    print(f"trained {cfg.epochs} epochs; final loss {last.loss_total:.4f} "
          f"(base {last.loss_base:.4f}, sem {last.loss_sem:.4f})")
    return 0


def _cmd_eval(args) -> int:
    _, _, cfg = _build_specs(args)
    provider, dataset, _ = _load_world(args.world)
    kb = load_kb(args.kb)
    ckpt = load_checkpoint(args.checkpoint)
    report = evaluate(ckpt, dataset, kb, cfg.beta, anchors=provider.anchors(),
                      semantic_similarity=cfg.semantic_similarity, name="eval")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "report.json", report.to_dict())
    (out / "table.txt").write_text(format_table([report]), encoding="utf-8")
    _echo_config(out, _resolved_config(None, None, cfg, cfg.seed))
    print(format_table([report]), end="")
    return 0


def _cmd_ablate(args) -> int:
    _, _, cfg = _build_specs(args)
    provider, dataset, _ = _load_world(args.world)
    kb = load_kb(args.kb)
    suites = run_ablation(cfg, dataset, provider, kb)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for suite, reports in suites.items():
        write_json(out / f"{suite}.json", [r.to_dict() for r in reports])
        (out / f"{suite}_table.txt").write_text(format_table(reports), encoding="utf-8")
        print(f"[{suite}]")
        print(format_table(reports), end="")
    _echo_config(out, _resolved_config(None, None, cfg, cfg.seed))
    return 0


def _cmd_tune(args) -> int:
    _, _, cfg = _build_specs(args)
    provider, dataset, _ = _load_world(args.world)
    kb = load_kb(args.kb)
    best, rows = tune_grid(cfg, dataset, kb, provider)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "grid_report.json", rows)
    write_json(
        out / "best_weights.json",
        {
            "lambda_sem": best.lambda_sem,
            "lambda_pa": best.lambda_pa,
            "lambda_ka": best.lambda_ka,
            "kl_temperature": best.kl_temperature,
        },
    )
    _echo_config(out, _resolved_config(None, None, cfg, cfg.seed))
    print(f"best weights: lambda_sem={best.lambda_sem} lambda_pa={best.lambda_pa} "
          f"lambda_ka={best.lambda_ka} T={best.kl_temperature} "
          f"({len(rows)} configurations evaluated)")
    return 0


def _cmd_kb_stats(args) -> int:
    kb = load_kb(args.kb)
    stats = prior_stats(kb)
    print(f"{'Mean':>10} {'Std':>10} {'Median':>10}")
    print(f"{stats.mean:>10.4f} {stats.std:>10.4f} {stats.median:>10.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="promptrouter", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, world=False, kb=False, checkpoint=False):
        p.add_argument("--config", help="INI configuration file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--beta", type=float, default=None)
        p.add_argument("--ir", type=float, default=None)
        p.add_argument("--classes", type=int, default=None)
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--batch", type=int, default=None)
        p.add_argument("--lambda-sem", dest="lambda_sem", type=float, default=None)
        p.add_argument("--lambda-pa", dest="lambda_pa", type=float, default=None)
        p.add_argument("--lambda-ka", dest="lambda_ka", type=float, default=None)
        p.add_argument("--kl-temp", dest="kl_temp", type=float, default=None)
        p.add_argument("--tau", type=float, default=None)
        if world:
            p.add_argument("--world", required=True, help="world bundle directory")
        if kb:
            p.add_argument("--kb", required=True, help="knowledge-base directory")
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="checkpoint directory")

    add_common(sub.add_parser("gen-world", help="generate a synthetic world + dataset bundle"))
    add_common(sub.add_parser("build-kb", help="build the knowledge base from a world"), world=True)
    add_common(sub.add_parser("train", help="train router and base branch"), world=True, kb=True)
    add_common(sub.add_parser("eval", help="evaluate a checkpoint"), world=True, kb=True, checkpoint=True)
    add_common(sub.add_parser("ablate", help="run module and knowledge ablation suites"), world=True, kb=True)
    add_common(sub.add_parser("tune", help="two-stage loss-weight grid search"), world=True, kb=True)

    p_stats = sub.add_parser("kb-stats", help="print prior-matrix statistics")
    p_stats.add_argument("--kb", required=True)
    return parser


_COMMANDS = {
    "gen-world": _cmd_gen_world,
    "build-kb": _cmd_build_kb,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "tune": _cmd_tune,
    "kb-stats": _cmd_kb_stats,
}


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericError, IntegrityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    raise SystemExit(dispatch())


if __name__ == "__main__":
    main()
