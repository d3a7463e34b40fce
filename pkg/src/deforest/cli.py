"""Command line entry point: ``deforest <subcommand> [options]``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

from . import pipeline
from .synth import ScenarioConfig, make_scenario, write_scenario

log = logging.getLogger("deforest")

# CLI flag -> dotted config key
_FLAG_KEYS = {
    "landcover_t0": "inputs.landcover_t0",
    "landcover_t1": "inputs.landcover_t1",
    "dem": "inputs.dem",
    "window": "features.window",
    "n_hidden": "model.n_hidden",
    "algorithm": "train.algorithm",
    "max_epochs": "train.max_epochs",
    "learning_rate": "train.learning_rate",
    "patience": "train.patience",
    "test_fraction": "split.test_fraction",
    "stratify": "split.stratify",
    "threshold": "evaluate.threshold",
    "t_low": "risk.t_low",
    "t_high": "risk.t_high",
    "seed": "seed",
    "out": "output.dir",
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (default: out)")
    p.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="override any config key, e.g. --set train.lambda0=0.01 (repeatable)",
    )
    p.add_argument("-v", "--verbose", action="store_true")


def _pipeline_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("config overrides")
    g.add_argument("--landcover-t0")
    g.add_argument("--landcover-t1")
    g.add_argument("--dem")
    g.add_argument("--window", type=int)
    g.add_argument("--n-hidden", type=int)
    g.add_argument("--algorithm", choices=["lm", "backprop"])
    g.add_argument("--max-epochs", type=int)
    g.add_argument("--learning-rate", type=float)
    g.add_argument("--patience", type=int)
    g.add_argument("--test-fraction", type=float)
    g.add_argument("--stratify", action="store_const", const=True)
    g.add_argument("--threshold", type=float)
    g.add_argument("--t-low", type=float)
    g.add_argument("--t-high", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deforest", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    helps = {
        "features": "forest/urban masks, cover index and distance layers",
        "labels": "deforestation labels from the t0/t1 forest masks",
        "train": "build samples, split, normalize and train the network",
        "evaluate": "confusion metrics of the trained model on train/test samples",
        "predict": "fuzzy risk map from t1 features",
        "classify": "three-class risk map from the fuzzy map",
        "run": "full pipeline",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        _common(p)
        _pipeline_flags(p)
        if name == "features":
            p.add_argument("--epoch", choices=["t0", "t1", "both"], default="both")

    p = sub.add_parser("synth", help="write a synthetic two-epoch scenario")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="synth")
    p.add_argument("--nrows", type=int)
    p.add_argument("--ncols", type=int)
    p.add_argument("--forest-fraction", type=float)
    p.add_argument("--n-urban-seeds", type=int)
    p.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="set any scenario field, e.g. --set b_dist=-30",
    )
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _config(args) -> pipeline.PipelineConfig:
    overrides = dict(pipeline.parse_override(s) for s in args.overrides)
    for flag, key in _FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    return pipeline.load_config(args.config, overrides)


def _synth(args) -> dict:
    fields = {f.name: f for f in dataclasses.fields(ScenarioConfig)}
    kwargs = {"seed": args.seed}
    for name in ("nrows", "ncols", "forest_fraction", "n_urban_seeds"):
        if getattr(args, name) is not None:
            kwargs[name] = getattr(args, name)
    for text in args.overrides:
        key, value = pipeline.parse_override(text)
        if key not in fields:
            raise pipeline.ConfigError(key, "unknown scenario field")
        kwargs[key] = value
    scenario = make_scenario(ScenarioConfig(**kwargs))
    paths = write_scenario(scenario, args.out)
    return {"status": "ok", "files": sorted(paths.values())}


def _stage(args) -> object:
    cfg = _config(args)
    needs = {
        "features": ("landcover_t0", "landcover_t1", "dem"),
        "train": ("dem",),
        "predict": ("dem",),
    }.get(args.command, ())
    cfg.validate(needs)
    os.makedirs(cfg.out_dir, exist_ok=True)
    cmd = args.command
    if cmd == "run":
        summary = pipeline.run_pipeline(cfg)
        return {k: summary[k] for k in ("status", "metrics", "risk_class_counts", "label_counts")}
    if cmd == "features":
        epochs = ("t0", "t1") if args.epoch == "both" else (args.epoch,)
        written: list[str] = []
        for e in epochs:
            pipeline.stage_features(cfg, e, written)
        return {"written": written}
    if cmd == "labels":
        pipeline.stage_labels(cfg)
        return {"written": [cfg.path("labels")]}
    if cmd == "train":
        _, _, info = pipeline.stage_train(cfg)
        return {k: info[k] for k in ("epochs_run", "stop_reason", "best_epoch", "best_val_mse", "n_train", "n_test")}
    if cmd == "evaluate":
        return pipeline.stage_evaluate(cfg)
    if cmd == "predict":
        pipeline.stage_predict(cfg)
        return {"written": [cfg.path("fuzzy")]}
    if cmd == "classify":
        return pipeline.class_counts(pipeline.stage_classify(cfg))
    raise AssertionError(cmd)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        result = _synth(args) if args.command == "synth" else _stage(args)
    except pipeline.ConfigError as exc:
        print(f"deforest {args.command}: config error: {exc}", file=sys.stderr)
        return 2
    except pipeline.PipelineError as exc:
        print(f"deforest {args.command}: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"deforest {args.command}: stage '{args.command}' failed: {exc}", file=sys.stderr)
        return 1
    json.dump(result, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
