"""Command-line interface.

Subcommands::

    fcdensenet inspect fc-densenet103 --paper-diff
    fcdensenet gradcheck --ops all --seed 0
    fcdensenet train --data synth --preset fc-densenet56 --out runs/a --seed 7
    fcdensenet eval --checkpoint runs/a/checkpoint.bin --data synth

Exit codes: 0 success, 1 check or acceptance failure, 2 usage or I/O error.
Every command is deterministic under a fixed --seed, and every output
artifact embeds the resolved configuration that produced it.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import reference
from .architecture import (
    ArchConfig, PRESETS, build, channel_schedule, conv_layer_count,
    parameter_count, preset as preset_config, stage_report,
)
from .data import load_dataset, save_sample, synth_dataset
from .exceptions import (
    CheckpointError, ConfigError, DatasetError, NonFiniteGradientError,
)
from .gradcheck import CHECKS, run_checks
from .metrics import format_metric_report, metric_report_dict
from .optim import TrainConfig, evaluate, train

_ARCH_KEYS = {
    "growth_rate": int,
    "bottleneck_layers": int,
    "first_conv_maps": int,
    "n_classes": int,
    "dropout_p": float,
}
_ARCH_LIST_KEYS = {"down_blocks", "up_blocks"}
_TRAIN_KEYS = {
    "lr_init": float,
    "lr_decay_per_epoch": float,
    "finetune_lr": float,
    "weight_decay": float,
    "patience": int,
    "finetune_patience": int,
    "batch_size": int,
    "crop_size": int,
    "monitor": str,
    "rms_rho": float,
    "rms_eps": float,
    "max_epochs": int,
    "finetune_max_epochs": int,
    "seed": int,
    "flip_axis": str,
    "stop_on_monitor": float,
}
_TRAIN_BOOL_KEYS = {"finetune"}


def parse_config_file(path):
    """Parse the simple ``key = value`` run-config format.

    Lists are comma-separated; blank lines and ``#`` comments are ignored.
    Raises :class:`ConfigError` with the offending line number.
    """
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config file {path}: {err}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not value:
            raise ConfigError(f"{path}:{lineno}: empty value for key {key!r}")
        try:
            if key == "preset":
                values[key] = value
            elif key in _ARCH_LIST_KEYS:
                values[key] = tuple(int(v) for v in value.split(","))
            elif key in _ARCH_KEYS:
                values[key] = _ARCH_KEYS[key](value)
            elif key in _TRAIN_BOOL_KEYS:
                if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(value)
                values[key] = value.lower() in ("true", "1", "yes")
            elif key in _TRAIN_KEYS:
                values[key] = _TRAIN_KEYS[key](value)
            else:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        except ConfigError:
            raise
        except ValueError:
            raise ConfigError(
                f"{path}:{lineno}: cannot parse value {value!r} for key {key!r}"
            ) from None
    return values


def _resolve_arch(args, file_values, n_classes=None):
    preset_name = getattr(args, "preset", None) or file_values.get("preset")
    overrides = {k: v for k, v in file_values.items()
                 if k in _ARCH_KEYS or k in _ARCH_LIST_KEYS}
    if n_classes is not None:
        overrides["n_classes"] = n_classes
    if preset_name is not None:
        base = asdict(preset_config(preset_name))
        base.update(overrides)
        return ArchConfig(**base), preset_name
    if "down_blocks" not in overrides:
        raise ConfigError(
            "no architecture given: pass a preset or a config file defining "
            "down_blocks/up_blocks/bottleneck_layers/growth_rate"
        )
    required = {"growth_rate", "down_blocks", "bottleneck_layers", "up_blocks",
                "n_classes"}
    missing = required - overrides.keys()
    if missing:
        raise ConfigError(f"config file is missing keys: {sorted(missing)}")
    return ArchConfig(**overrides), None


def _resolve_train(args, file_values):
    kwargs = {k: v for k, v in file_values.items()
              if k in _TRAIN_KEYS or k in _TRAIN_BOOL_KEYS}
    for flag in ("seed", "batch_size", "crop_size", "monitor", "stop_on_monitor"):
        value = getattr(args, flag, None)
        if value is not None:
            kwargs[flag] = value
    if getattr(args, "epochs", None) is not None:
        kwargs["max_epochs"] = args.epochs
    if getattr(args, "no_finetune", False):
        kwargs["finetune"] = False
    return TrainConfig(**kwargs)


def _load_data(args, n_classes_hint=None):
    if args.data == "synth":
        n_classes = getattr(args, "classes", None) or n_classes_hint or 3
        return synth_dataset(
            getattr(args, "synth_samples", None) or 200,
            image_size=getattr(args, "synth_size", None) or 64,
            n_classes=n_classes,
            rng=np.random.default_rng(getattr(args, "seed", None) or 0),
        )
    return load_dataset(args.data)


# ---------------------------------------------------------------------------
# inspect
# ---------------------------------------------------------------------------

def cmd_inspect(args):
    file_values = parse_config_file(args.config) if args.config else {}
    config, preset_name = _resolve_arch(args, file_values, args.classes)
    stages = stage_report(config)
    total = parameter_count(config)
    layers = conv_layer_count(config)
    schedule = channel_schedule(config)

    diff_payload = None
    if args.paper_diff:
        n_match, entries = reference.diff_m_schedule(preset_name, schedule)
        published_params = reference.PUBLISHED_PARAMS_MILLIONS.get(preset_name)
        diff_payload = {
            "preset": preset_name,
            "m_schedule": {
                "stages_compared": len(entries),
                "stages_matching": n_match,
                "entries": entries,
            } if n_match is not None else None,
            "params_published_millions": published_params,
            "params_computed_millions": round(total / 1e6, 3),
        }

    if args.format == "json":
        payload = {
            "preset": preset_name,
            "config": asdict(config),
            "stages": [
                {"stage": s.name, "m": s.m, "params": s.params} for s in stages
            ],
            "total_params": total,
            "conv_layers": layers,
            "pre_softmax_maps": schedule[-1],
            "paper_diff": diff_payload,
        }
        print(json.dumps(payload, indent=2))
        return 0

    title = preset_name or "custom architecture"
    print(f"Architecture report: {title} ({config.n_classes} classes)")
    print(f"{'stage':<26}{'m':>6}  {'params':>12}")
    for s in stages:
        print(f"{s.name:<26}{s.m:>6}  {s.params:>12,}")
    print(f"total parameters:      {total:,} ({total / 1e6:.2f}M)")
    print(f"convolutional layers:  {layers}")
    print(f"pre-softmax maps:      {schedule[-1]}")

    if diff_payload is not None:
        print()
        if diff_payload["m_schedule"] is not None:
            m = diff_payload["m_schedule"]
            print(f"Published per-stage m comparison: "
                  f"{m['stages_matching']} of {m['stages_compared']} stages match")
            for e in m["entries"]:
                if not e["match"]:
                    print(
                        f"  stage {e['stage']}: computed {e['computed']} vs "
                        f"published {e['published']}  <- documented discrepancy: "
                        "the published table's value is inconsistent with its "
                        "own construction rules"
                    )
        else:
            print("No published per-stage schedule for this configuration.")
        if diff_payload["params_published_millions"] is not None:
            print(
                f"Published parameter total: "
                f"{diff_payload['params_published_millions']}M, computed "
                f"{diff_payload['params_computed_millions']}M"
            )
    return 0


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------

def cmd_gradcheck(args):
    names = "all" if args.ops == "all" else [s.strip() for s in args.ops.split(",")]
    try:
        results = run_checks(names, seeds=(args.seed,), corrupt=args.corrupt)
    except KeyError as err:
        print(err.args[0], file=sys.stderr)
        return 2
    width = max(len(r.name) for r in results) + 2
    failed = False
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name:<{width}} seed={r.seed}  max rel err = "
              f"{r.max_rel_err:.3e}  {status}")
        failed = failed or not r.passed
    if failed:
        print("gradient check FAILED", file=sys.stderr)
        return 1
    print(f"all {len(results)} gradient checks passed")
    return 0


# ---------------------------------------------------------------------------
# train / eval
# ---------------------------------------------------------------------------

def _progress_printer(record):
    print(
        f"epoch {record.epoch:4d} phase {record.phase}  lr {record.lr:.6g}  "
        f"loss {record.train_loss:.4f}  val mIoU {record.val_miou:.4f}  "
        f"val acc {record.val_gacc:.4f}",
        flush=True,
    )


def cmd_train(args):
    file_values = parse_config_file(args.config) if args.config else {}
    dataset = _load_data(args)
    if not dataset.train:
        raise DatasetError(f"no training samples found in {args.data!r}")
    n_classes = dataset.n_classes
    config, preset_name = _resolve_arch(args, file_values, n_classes)
    train_config = _resolve_train(args, file_values)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    resolved = {
        "command": "train",
        "data": args.data,
        "preset": preset_name,
        "seed": train_config.seed,
        "arch": asdict(config),
        "train": asdict(train_config),
    }
    (out_dir / "config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True))

    network = build(config, np.random.default_rng(train_config.seed))
    progress = None if args.quiet else _progress_printer
    result = train(network, dataset, train_config, progress=progress)

    ckpt_path = out_dir / "checkpoint.bin"
    ckpt.save(ckpt_path, result.network, train_config, seed=train_config.seed)
    result.write_log(out_dir / "epochs.csv")
    print(f"best {train_config.monitor} = {result.best_metric:.4f} at epoch "
          f"{result.best_epoch}")
    print(f"checkpoint: {ckpt_path}")
    print(f"epoch log:  {out_dir / 'epochs.csv'}")
    return 0


def cmd_eval(args):
    network, stored = ckpt.restore(args.checkpoint)
    n_classes = network.config.n_classes
    dataset = _load_data(args, n_classes_hint=n_classes)
    if dataset.n_classes and dataset.n_classes != n_classes:
        raise DatasetError(
            f"dataset has {dataset.n_classes} classes but the checkpoint was "
            f"trained for {n_classes}"
        )
    samples = dataset.test or dataset.val
    split_used = "test" if dataset.test else "val"
    if not samples:
        raise DatasetError("dataset has neither test nor val samples")

    miou, gacc, acc = evaluate(network, samples, n_classes, dataset.void_label)
    names = dataset.class_names or None
    print(f"Evaluation on {len(samples)} {split_used} samples")
    print(format_metric_report(acc, names))

    payload = {
        "command": "eval",
        "checkpoint": str(args.checkpoint),
        "checkpoint_config": stored,
        "data": args.data,
        "split": split_used,
        "seed": args.seed,
        "metrics": metric_report_dict(acc, names),
    }
    report_path = Path(args.checkpoint).parent / "metrics.json"
    report_path.write_text(json.dumps(payload, indent=2, sort_keys=True))
    print(f"machine-readable report: {report_path}")

    if args.save_predictions:
        pred_dir = Path(args.save_predictions)
        pred_dir.mkdir(parents=True, exist_ok=True)
        from .data import LabeledSample, pad_to_multiple, crop_prediction
        from .metrics import predictions_from_probs
        multiple = 2 ** network.config.depth
        for sample in samples:
            padded, original = pad_to_multiple(sample, multiple)
            probs = network.predict_proba(padded.image[None])
            pred = crop_prediction(predictions_from_probs(probs)[0], original)
            out = LabeledSample(sample.image, pred.astype(np.int64),
                                sample.void_label, sample.name)
            save_sample(out, pred_dir / "images", pred_dir / "labels")
        print(f"prediction maps: {pred_dir}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="fcdensenet",
        description="Fully convolutional DenseNets: inspection, gradient "
                    "checking, training, and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inspect", help="architecture report and published-table diff")
    p.add_argument("preset", nargs="?", choices=sorted(PRESETS),
                   help="preset name (or use --config)")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--classes", type=int, default=None,
                   help="override the class count")
    p.add_argument("--paper-diff", action="store_true",
                   help="compare against the published reference figures")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--ops", default="all",
                   help="'all' or comma-separated check names "
                        f"(available: {', '.join(sorted(CHECKS))})")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt", default=None, metavar="OP",
                   help="testing hook: corrupt one op's analytic gradient to "
                        "confirm the checker fails")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train", help="train a network")
    p.add_argument("--data", required=True,
                   help="dataset directory, or 'synth' for the generator")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None,
                   help="cap on phase-1 epochs")
    p.add_argument("--batch-size", type=int, dest="batch_size", default=None)
    p.add_argument("--crop-size", type=int, dest="crop_size", default=None)
    p.add_argument("--monitor", choices=("mean_iou", "mean_accuracy"),
                   default=None)
    p.add_argument("--stop-on-monitor", type=float, dest="stop_on_monitor",
                   default=None,
                   help="stop once the monitored metric reaches this value")
    p.add_argument("--no-finetune", action="store_true",
                   help="skip the full-image finetuning phase")
    p.add_argument("--classes", type=int, default=None,
                   help="class count for --data synth")
    p.add_argument("--synth-samples", type=int, dest="synth_samples", default=None)
    p.add_argument("--synth-size", type=int, dest="synth_size", default=None)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True,
                   help="dataset directory, or 'synth' for the generator")
    p.add_argument("--seed", type=int, default=0,
                   help="seed for --data synth regeneration")
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--synth-samples", type=int, dest="synth_samples", default=None)
    p.add_argument("--synth-size", type=int, dest="synth_size", default=None)
    p.add_argument("--save-predictions", default=None, metavar="DIR",
                   help="write predicted label maps as indexed images")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DatasetError, CheckpointError, OSError, KeyError) as err:
        message = err.args[0] if err.args else str(err)
        print(f"error: {message}", file=sys.stderr)
        return 2
    except NonFiniteGradientError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
