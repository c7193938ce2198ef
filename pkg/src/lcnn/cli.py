"""Command-line surface: train / eval / convert / fewshot / transfer / bench.

Exit codes: 0 ok, 2 config or usage error, 3 data error, 4 numeric failure.
Report-producing commands write a matplotlib figure next to any delimited
output they emit.
"""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import data as data_mod
from . import figures
from .config import ExperimentConfig, parse_config
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    LcnnError,
    ModeError,
    NumericFailureError,
    StructureError,
    TransferError,
    UnsupportedGeometryError,
)
from .modelfile import load_model, save_model
from .perf import render_table, speedup_report, write_csv
from .templates import build_model
from .training import TrainConfig, run_training
from .transfer import (
    TransferPlan,
    auto_plan,
    few_shot_finetune,
    freeze_dictionaries,
    replace_head,
    transfer_dictionaries,
)

USAGE_ERRORS = (ConfigError, ModeError, TransferError, StructureError, ContractError,
                UnsupportedGeometryError, DimensionError)


def _train_config(cfg: ExperimentConfig, seed_override: int | None) -> TrainConfig:
    k_raw = cfg.get_str("k")
    k_list = None
    k_policy = None
    if k_raw is not None:
        if k_raw.strip() == "half":
            k_policy = "half"
        else:
            k_list = cfg.get_int_list("k")
    seed = seed_override if seed_override is not None else cfg.get_int("seed", 0)
    return TrainConfig(
        mode=cfg.get_str("mode", "threshold"),
        s_max=cfg.get_int("s_max", 3),
        c=cfg.get_float("c", 0.01),
        lambda_prime=cfg.get_float("lambda_prime", 0.1),
        learning_rate=cfg.get_float("learning_rate", 0.05),
        momentum=cfg.get_float("momentum", 0.9),
        weight_decay_d=cfg.get_float("weight_decay_d", 0.0),
        body_lr_scale=cfg.get_float("body_lr_scale", 0.1),
        batch_size=cfg.get_int("batch_size", 32),
        iterations=cfg.get_int("iterations", 0),
        epochs=cfg.get_int("epochs", 0),
        seed=seed,
        k_list=k_list,
        k_policy=k_policy,
        lr_decay_every=cfg.get_int("lr_decay_every", 0),
        lr_decay_factor=cfg.get_float("lr_decay_factor", 0.1),
    )


def _load_datasets(cfg: ExperimentConfig):
    """Returns (train, test); for a raw directory both point at the same set."""
    source = cfg.get_str("data", required=True)
    if source == "synthetic":
        return data_mod.synthetic_splits(
            num_classes=cfg.get_int("data.classes", 10),
            train_per_class=cfg.get_int("data.train_per_class", 100),
            test_per_class=cfg.get_int("data.test_per_class", 20),
            shape=cfg.get_shape("data.image", (3, 32, 32)),
            seed=cfg.get_int("data.seed", 0),
            noise=cfg.get_float("data.noise", 0.1),
        )
    ds = data_mod.load_raw_dataset(source)
    return ds, ds


def _build_from_config(cfg: ExperimentConfig, tc: TrainConfig):
    arch = cfg.get_str("arch", required=True)
    input_shape = cfg.get_shape("arch.input", (3, 32, 32))
    classes = cfg.get_int("arch.classes", cfg.get_int("data.classes", 10))
    channels = tuple(cfg.get_int_list("arch.channels", [16, 32]))
    rng = np.random.default_rng(tc.seed)
    return build_model(arch, input_shape=input_shape, classes=classes, cfg=tc, rng=rng,
                       channels=channels)


def _fit(model, train_ds, tc: TrainConfig, cfg: ExperimentConfig, out_path: str | None,
         iterations: int | None = None, echo_every: int | None = None):
    log_path = cfg.get_str("log")
    log_fh = open(log_path, "w") if log_path else None
    total = iterations or tc.iterations or (tc.epochs * max(1, len(train_ds) // max(1, tc.batch_size)))
    if echo_every is None:
        echo_every = max(1, total // 10)

    def record_fn(rec):
        line = rec.format()
        if log_fh:
            log_fh.write(line + "\n")
        if rec.iteration % echo_every == 0 or rec.iteration == total:
            print(line)

    checkpoint_every = cfg.get_int("checkpoint_every", 0)

    def checkpoint_fn(m, it):
        if out_path:
            save_model(m, f"{out_path}.ckpt{it}")

    rng = np.random.default_rng(tc.seed + 1)
    try:
        records = run_training(model, train_ds.images, train_ds.labels, tc, rng,
                               record_fn=record_fn, checkpoint_fn=checkpoint_fn,
                               checkpoint_every=checkpoint_every, iterations=iterations)
    finally:
        if log_fh:
            log_fh.close()
    if log_path and records:
        figures.save_training_curves(records, os.path.splitext(log_path)[0] + ".png")
    return records


def cmd_train(args) -> int:
    cfg = parse_config(args.config)
    tc = _train_config(cfg, args.seed)
    if not tc.iterations and not tc.epochs:
        raise ConfigError(f"{args.config}: set 'iterations' or 'epochs'")
    train_ds, _ = _load_datasets(cfg)
    model = _build_from_config(cfg, tc)
    out_path = args.out or cfg.get_str("out", required=True)
    model.meta["hyper"] = {k: v for k, v in cfg.values.items()}
    records = _fit(model, train_ds, tc, cfg, out_path)
    save_model(model, out_path)
    final = records[-1]
    print(f"trained {model.arch}: final {final.format()}")
    print(f"model written to {out_path}")
    return 0


def _eval_model(model, ds, batch: int = 256):
    correct1 = correct5 = 0
    classes = model.classes
    per_class = np.zeros((classes, 2), dtype=np.int64)  # correct, total
    kth = min(5, classes)
    for start in range(0, len(ds), batch):
        xb = ds.images[start : start + batch]
        yb = ds.labels[start : start + batch]
        logits = model.logits(xb)
        order = np.argsort(-logits, axis=1, kind="stable")
        top1 = order[:, 0]
        hits1 = top1 == yb
        hits5 = (order[:, :kth] == yb[:, None]).any(axis=1)
        correct1 += int(hits1.sum())
        correct5 += int(hits5.sum())
        for cls in range(classes):
            sel = yb == cls
            per_class[cls, 0] += int((hits1 & sel).sum())
            per_class[cls, 1] += int(sel.sum())
    n = len(ds)
    return correct1 / n, correct5 / n, per_class


def cmd_eval(args) -> int:
    cfg = parse_config(args.config)
    model = load_model(args.model)
    _, test_ds = _load_datasets(cfg)
    if test_ds.images.shape[1:] != model.input_shape:
        raise DataError(f"dataset shape {test_ds.images.shape[1:]} does not match "
                        f"model input {model.input_shape}")
    top1, top5, per_class = _eval_model(model, test_ds)
    print(f"top1={top1:.4f} top5={top5:.4f} samples={len(test_ds)}")
    for cls in range(per_class.shape[0]):
        c, t = per_class[cls]
        print(f"class={cls} correct={c} total={t}")
    return 0


def cmd_convert(args) -> int:
    model = load_model(args.model)
    if model.mode != "training":
        raise ModeError(f"{args.model} is already in inference form")
    model.to_inference()
    out = args.out or (os.path.splitext(args.model)[0] + ".lookup.lcnn")
    save_model(model, out)
    print(f"converted to lookup form: {out}")
    return 0


def cmd_bench(args) -> int:
    mean_s = None
    if args.config:
        cfg = parse_config(args.config)
        mean_s = cfg.get_float_list("bench.mean_s")
        if mean_s is not None and len(mean_s) == 1:
            mean_s = mean_s[0]
    else:
        cfg = None
    if args.model:
        model = load_model(args.model)
        if model.mode == "training":
            model = model.copy()
            model.to_inference()
    elif cfg is not None and cfg.has("arch"):
        model = build_model(cfg.get_str("arch"), classes=cfg.get_int("arch.classes"))
    else:
        raise ConfigError("bench needs --model or a config with an 'arch' template")
    report = speedup_report(model, mean_s=mean_s)
    print(render_table(report))
    if args.csv:
        write_csv(report, args.csv)
        fig_path = os.path.splitext(args.csv)[0] + ".png"
        figures.save_speedup_chart(report, fig_path)
        print(f"csv written to {args.csv}; figure to {fig_path}")
    return 0


def cmd_fewshot(args) -> int:
    cfg = parse_config(args.config)
    model_path = args.model or cfg.get_str("model", required=True)
    base = load_model(model_path)
    if base.mode != "training":
        raise ModeError("few-shot fine-tuning needs a training-form model")
    tc = _train_config(cfg, args.seed)
    shots_list = cfg.get_int_list("fewshot.shots", [1, 2, 4])
    trials = cfg.get_int("fewshot.trials", 5)
    novel_classes = cfg.get_int("fewshot.novel_classes", 10)
    query_per_class = cfg.get_int("fewshot.query_per_class", 15)
    iterations = cfg.get_int("fewshot.iterations", 50)
    ep_seed = cfg.get_int("fewshot.seed", 1234)
    noise = cfg.get_float("fewshot.noise", cfg.get_float("data.noise", 0.1))
    pool = max(shots_list) + query_per_class + 8
    novel_ds, _ = data_mod.synthetic_splits(
        num_classes=novel_classes, train_per_class=pool, test_per_class=1,
        shape=base.input_shape, seed=ep_seed, noise=noise)

    freeze_dictionaries(base)
    rows = []  # (shots, trial, accuracy)
    for shots in shots_list:
        for trial in range(trials):
            m = base.copy()
            rng = np.random.default_rng((ep_seed, shots, trial))
            replace_head(m, novel_classes, rng, tc)
            episode = data_mod.make_episode(novel_ds, shots, query_per_class,
                                            seed=ep_seed + 1000 * shots + trial)
            result = few_shot_finetune(m, episode, tc, iterations=iterations)
            rows.append((shots, trial, result.query_accuracy))
            print(f"shots={shots} trial={trial} acc={result.query_accuracy:.4f}")
    summary = []
    for shots in shots_list:
        accs = [a for s, _, a in rows if s == shots]
        mean = float(np.mean(accs))
        std = float(np.std(accs))
        summary.append((shots, accs))
        print(f"shots={shots} mean_acc={mean:.4f} std={std:.4f} trials={len(accs)}")
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write("shots,trial,accuracy\n")
            for shots, trial, acc in rows:
                fh.write(f"{shots},{trial},{acc!r}\n")
        figures.save_fewshot_chart(summary, os.path.splitext(args.csv)[0] + ".png")
        print(f"csv written to {args.csv}")
    return 0


def cmd_transfer(args) -> int:
    cfg = parse_config(args.config)
    tc = _train_config(cfg, args.seed)
    src = load_model(cfg.get_str("transfer.source", required=True))
    dst = _build_from_config(cfg, tc)
    freeze = cfg.get_bool("transfer.freeze", True)
    strict = cfg.get_bool("transfer.strict", True)
    map_raw = cfg.get_str("transfer.map", "auto")
    if map_raw == "auto":
        plan = auto_plan(src, dst, freeze=freeze, strict=strict)
    else:
        try:
            pairs = [tuple(int(v) for v in pair.split(":")) for pair in map_raw.split(",")]
        except ValueError:
            raise ConfigError(f"transfer.map expects 's:d,s:d,...' or 'auto', got {map_raw!r}") from None
        plan = TransferPlan(pairs, freeze_after_transfer=freeze, strict=strict)
    outcome = transfer_dictionaries(src, dst, plan)
    print(f"transferred {len(outcome.applied)} dictionaries; skipped {len(outcome.skipped)}")
    for pair, reason in outcome.skipped:
        print(f"skipped {pair}: {reason}")
    iterations = cfg.get_int("transfer.iterations", 0)
    if iterations:
        train_ds, _ = _load_datasets(cfg)
        _fit(dst, train_ds, tc, cfg, args.out, iterations=iterations)
    out_path = args.out or cfg.get_str("out")
    if out_path:
        save_model(dst, out_path)
        print(f"model written to {out_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lcnn",
        description="lookup-based convolutional networks: train, convert, evaluate, "
                    "transfer dictionaries, and report flop speedups",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    specs = {
        "train": (cmd_train, "train a model per an experiment config"),
        "eval": (cmd_eval, "report top-1/top-5 accuracy of a model on a dataset"),
        "convert": (cmd_convert, "convert a trained model to lookup (inference) form"),
        "fewshot": (cmd_fewshot, "few-shot episodes: new head, frozen dictionaries"),
        "transfer": (cmd_transfer, "transfer dictionaries into a new architecture"),
        "bench": (cmd_bench, "layer-wise dense-vs-lookup flop report"),
    }
    for name, (fn, help_text) in specs.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="experiment config path")
        p.add_argument("--model", help="model file path")
        p.add_argument("--out", help="output model path")
        p.add_argument("--csv", help="CSV report path (figure written alongside)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.set_defaults(fn=fn)
    return parser


REQUIRED_FLAGS = {
    "train": ("config",),
    "eval": ("config", "model"),
    "convert": ("model",),
    "fewshot": ("config",),
    "transfer": ("config",),
    "bench": (),
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    missing = [f"--{flag}" for flag in REQUIRED_FLAGS[args.command]
               if getattr(args, flag) is None]
    if missing:
        print(f"lcnn {args.command}: missing {' '.join(missing)}", file=sys.stderr)
        return 2
    try:
        return args.fn(args)
    except USAGE_ERRORS as exc:
        print(f"lcnn {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"lcnn {args.command}: data error: {exc}", file=sys.stderr)
        return 3
    except NumericFailureError as exc:
        print(f"lcnn {args.command}: numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
