"""End-to-end orchestration: features, labels, training, risk prediction.

Every stage reads its inputs from and writes its outputs to one output
directory under fixed file names, so each stage can be rerun on its own.

Config files are TOML. Keys are addressed by their dotted path (for example
``train.algorithm``) and any key can be overridden from the command line.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .change import deforestation_labels
from .dataset import NormParams, build_samples, load_samples, normalize, save_samples, split
from .features import FEATURE_NAMES, FeatureStack, distance_to_class, forest_cover_index, stack_features
from .mlp import MlpModel, TrainConfig, evaluate_binary, forward, init_model, load_model, save_model, train
from .raster import CellClass, Grid, assert_aligned, load_grid, reclassify, save_grid

log = logging.getLogger(__name__)

RISK_CLASSES = (1, 2, 3)

FILES = {
    "forest": "forest_{epoch}.asc",
    "urban": "urban_{epoch}.asc",
    "cover": "cover_{epoch}.asc",
    "dist_urban": "dist_urban_{epoch}.asc",
    "labels": "labels.asc",
    "model": "model.txt",
    "norm": "norm.txt",
    "train_samples": "samples_train.txt",
    "test_samples": "samples_test.txt",
    "train_report": "train_report.json",
    "metrics": "metrics.json",
    "fuzzy": "risk_fuzzy.asc",
    "classes": "risk_class.asc",
    "summary": "summary.json",
}


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


# --------------------------------------------------------------------------
# risk maps


@dataclass(frozen=True)
class RiskMap:
    fuzzy: Grid
    classes: Grid


def predict_risk(model: MlpModel, stack: FeatureStack, norm: NormParams, forest_mask_t1: Grid) -> Grid:
    """Model output for pixels forested at t1 with data in every layer; NoData elsewhere."""
    assert_aligned([*stack.layers, forest_mask_t1])
    if model.n_in != len(stack.names) or len(norm.names) != len(stack.names):
        raise ValueError(
            f"model expects {model.n_in} inputs, normalization has {len(norm.names)}, stack has {len(stack.names)}"
        )
    domain = stack.valid & forest_mask_t1.valid & (forest_mask_t1.cells == CellClass.FOREST)
    out = np.full(stack.shape, forest_mask_t1.nodata, dtype=np.float64)
    if domain.any():
        x = norm.apply(stack.values()[domain])
        out[domain] = forward(model, x)
    return Grid(forest_mask_t1.header, out)


def classify_risk(fuzzy: Grid, t_low: float = 1 / 3, t_high: float = 2 / 3) -> Grid:
    """Class 1 below ``t_low``, 2 in ``[t_low, t_high)``, 3 at or above ``t_high``."""
    if not 0.0 < t_low < t_high < 1.0:
        raise ValueError(f"need 0 < t_low < t_high < 1, got t_low={t_low}, t_high={t_high}")
    v = fuzzy.cells
    out = np.where(v < t_low, 1.0, np.where(v < t_high, 2.0, 3.0))
    out[~fuzzy.valid] = fuzzy.nodata
    return Grid(fuzzy.header, out)


def class_counts(classes: Grid) -> dict[str, int]:
    return {str(k): int(np.sum(classes.valid & (classes.cells == k))) for k in RISK_CLASSES}


# --------------------------------------------------------------------------
# configuration


@dataclass
class PipelineConfig:
    landcover_t0: str | None = None
    landcover_t1: str | None = None
    dem: str | None = None
    forest_codes: tuple = (1,)
    urban_codes: tuple = (3,)
    window: int = 3
    n_hidden: int = 8
    train: TrainConfig = field(default_factory=TrainConfig)
    test_fraction: float = 0.3
    stratify: bool = False
    seed: int = 0
    threshold: float = 0.5
    t_low: float = 1 / 3
    t_high: float = 2 / 3
    out_dir: str = "out"

    def validate(self, need_inputs: tuple[str, ...] = ("landcover_t0", "landcover_t1", "dem")) -> None:
        for attr in need_inputs:
            if not getattr(self, attr):
                raise ConfigError(_KEY_OF[attr], "path is required")
        if set(self.forest_codes) & set(self.urban_codes):
            raise ConfigError("classes.urban", "urban and forest codes overlap")
        if not 0.0 < self.t_low < self.t_high < 1.0:
            raise ConfigError("risk.t_low", f"need 0 < t_low < t_high < 1, got {self.t_low}, {self.t_high}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("split.test_fraction", "must be in (0, 1)")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError("evaluate.threshold", "must be in (0, 1)")
        if self.n_hidden < 1:
            raise ConfigError("model.n_hidden", "must be >= 1")

    def path(self, key: str, epoch: str = "") -> str:
        return os.path.join(self.out_dir, FILES[key].format(epoch=epoch))

    def train_config(self) -> TrainConfig:
        return dataclasses.replace(self.train, seed=self.seed)


# dotted config key -> (attribute, parser); train.* keys map onto TrainConfig
_FIELDS: dict[str, tuple[str, Callable[[Any], Any]]] = {
    "inputs.landcover_t0": ("landcover_t0", str),
    "inputs.landcover_t1": ("landcover_t1", str),
    "inputs.dem": ("dem", str),
    "classes.forest": ("forest_codes", lambda v: tuple(float(x) for x in (v if isinstance(v, list) else [v]))),
    "classes.urban": ("urban_codes", lambda v: tuple(float(x) for x in (v if isinstance(v, list) else [v]))),
    "features.window": ("window", int),
    "model.n_hidden": ("n_hidden", int),
    "split.test_fraction": ("test_fraction", float),
    "split.stratify": ("stratify", bool),
    "seed": ("seed", int),
    "evaluate.threshold": ("threshold", float),
    "risk.t_low": ("t_low", float),
    "risk.t_high": ("t_high", float),
    "output.dir": ("out_dir", str),
}
_KEY_OF = {attr: key for key, (attr, _) in _FIELDS.items()}
_TRAIN_TYPES = {f.name: f.type for f in dataclasses.fields(TrainConfig) if f.name != "seed"}
_INPUT_KEYS = ("inputs.landcover_t0", "inputs.landcover_t1", "inputs.dem")


def flatten(doc: Mapping[str, Any], prefix: str = "") -> dict[str, Any]:
    flat = {}
    for k, v in doc.items():
        key = f"{prefix}{k}"
        if isinstance(v, Mapping):
            flat.update(flatten(v, key + "."))
        else:
            flat[key] = v
    return flat


def parse_override(text: str) -> tuple[str, Any]:
    """``key=value`` with the value read as a TOML literal, falling back to a string."""
    if "=" not in text:
        raise ConfigError(text, "override must look like key=value")
    key, raw = (s.strip() for s in text.split("=", 1))
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return key, value


def config_from_flat(flat: Mapping[str, Any], base_dir: str = ".") -> PipelineConfig:
    cfg = PipelineConfig()
    train_kwargs = {}
    for key, value in flat.items():
        try:
            if key in _FIELDS:
                attr, parse = _FIELDS[key]
                if parse is bool and not isinstance(value, bool):
                    raise ValueError(f"expected true/false, got {value!r}")
                value = parse(value)
                if key in _INPUT_KEYS and not os.path.isabs(value):
                    value = os.path.normpath(os.path.join(base_dir, value))
                setattr(cfg, attr, value)
            elif key.startswith("train.") and key[6:] in _TRAIN_TYPES:
                name = key[6:]
                typ = _TRAIN_TYPES[name]
                train_kwargs[name] = str(value) if typ == "str" else int(value) if typ == "int" else float(value)
            else:
                raise ConfigError(key, "unknown config key")
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(key, str(exc)) from None
    try:
        cfg.train = TrainConfig(**train_kwargs)
    except ValueError as exc:
        raise ConfigError("train", str(exc)) from None
    return cfg


def load_config(path: str | None = None, overrides: Mapping[str, Any] | None = None) -> PipelineConfig:
    """Read a TOML config (optional) and apply dotted-key overrides on top."""
    flat: dict[str, Any] = {}
    base_dir = "."
    if path is not None:
        with open(path, "rb") as fh:
            try:
                flat = flatten(tomllib.load(fh))
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(os.fspath(path), f"invalid TOML: {exc}") from None
        base_dir = os.path.dirname(os.path.abspath(path))
    over = dict(overrides or {})
    cfg = config_from_flat({k: v for k, v in flat.items() if k not in over}, base_dir)
    if over:
        # override paths are relative to the working directory, not the config file
        cfg = config_from_flat({**_to_flat(cfg), **over}, ".")
    return cfg


def _to_flat(cfg: PipelineConfig) -> dict[str, Any]:
    flat = {}
    for key, (attr, _) in _FIELDS.items():
        v = getattr(cfg, attr)
        if v is None:
            continue
        flat[key] = list(v) if isinstance(v, tuple) else v
    for name in _TRAIN_TYPES:
        flat[f"train.{name}"] = getattr(cfg.train, name)
    return flat


def config_to_dict(cfg: PipelineConfig) -> dict[str, Any]:
    return _to_flat(cfg)


# --------------------------------------------------------------------------
# stages


def _save(grid: Grid, path: str, written: list[str]) -> None:
    save_grid(grid, path)
    written.append(path)


def _write_json(obj, path: str, written: list[str]) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(path)


def _landcover(cfg: PipelineConfig, epoch: str) -> Grid:
    return load_grid(cfg.landcover_t0 if epoch == "t0" else cfg.landcover_t1)


def forest_mask(landcover: Grid, forest_codes) -> Grid:
    return reclassify(landcover, [(forest_codes, float(CellClass.FOREST))], default=float(CellClass.NON_FOREST))


def urban_mask(landcover: Grid, urban_codes) -> Grid:
    return reclassify(landcover, [(urban_codes, 1.0)], default=0.0)


def stage_features(cfg: PipelineConfig, epoch: str, written: list[str] | None = None) -> FeatureStack:
    """Forest and urban masks, cover index and distance to urban for one epoch."""
    written = [] if written is None else written
    lc = _landcover(cfg, epoch)
    dem = load_grid(cfg.dem)
    assert_aligned([lc, dem])
    forest = forest_mask(lc, cfg.forest_codes)
    urban = urban_mask(lc, cfg.urban_codes)
    cover = forest_cover_index(forest, cfg.window)
    dist = distance_to_class(urban, 1)
    for key, grid in (("forest", forest), ("urban", urban), ("cover", cover), ("dist_urban", dist)):
        _save(grid, cfg.path(key, epoch), written)
    return stack_features(cover, dist, dem)


def _stack_from_disk(cfg: PipelineConfig, epoch: str) -> FeatureStack:
    return stack_features(
        load_grid(cfg.path("cover", epoch)), load_grid(cfg.path("dist_urban", epoch)), load_grid(cfg.dem)
    )


def stage_labels(cfg: PipelineConfig, written: list[str] | None = None) -> Grid:
    written = [] if written is None else written
    labels = deforestation_labels(load_grid(cfg.path("forest", "t0")), load_grid(cfg.path("forest", "t1")))
    _save(labels, cfg.path("labels"), written)
    return labels


def stage_train(cfg: PipelineConfig, written: list[str] | None = None) -> tuple[MlpModel, NormParams, dict]:
    """Build samples from t0 features and labels, split, normalize and fit."""
    written = [] if written is None else written
    samples = build_samples(_stack_from_disk(cfg, "t0"), load_grid(cfg.path("labels")))
    train_raw, test_raw = split(samples, cfg.test_fraction, cfg.seed, cfg.stratify)
    save_samples(train_raw, cfg.path("train_samples"))
    save_samples(test_raw, cfg.path("test_samples"))
    written += [cfg.path("train_samples"), cfg.path("test_samples")]
    train_set, (test_set,), norm = normalize(train_raw, [test_raw])

    tcfg = cfg.train_config()
    model = init_model(len(FEATURE_NAMES), cfg.n_hidden, tcfg.seed)
    # the held-out set doubles as the early-stopping monitor
    model, report = train(model, train_set, test_set, tcfg)
    save_model(model, cfg.path("model"))
    with open(cfg.path("norm"), "w") as fh:
        fh.write(norm.to_text())
    written += [cfg.path("model"), cfg.path("norm")]
    info = report.to_dict()
    info.update(n_samples=len(samples), n_train=len(train_raw), n_test=len(test_raw),
                class_counts=list(samples.class_counts))
    _write_json(info, cfg.path("train_report"), written)
    return model, norm, info


def _load_norm(cfg: PipelineConfig) -> NormParams:
    with open(cfg.path("norm")) as fh:
        return NormParams.from_text(fh.read())


def stage_evaluate(cfg: PipelineConfig, written: list[str] | None = None) -> dict:
    written = [] if written is None else written
    model, norm = load_model(cfg.path("model")), _load_norm(cfg)
    results = {}
    for name in ("train", "test"):
        raw = load_samples(cfg.path(f"{name}_samples"))
        scaled = dataclasses.replace(raw, x=norm.apply(raw.x), norm=norm)
        results[name] = evaluate_binary(model, scaled, cfg.threshold)
    _write_json(results, cfg.path("metrics"), written)
    return results


def stage_predict(cfg: PipelineConfig, written: list[str] | None = None) -> Grid:
    written = [] if written is None else written
    model, norm = load_model(cfg.path("model")), _load_norm(cfg)
    fuzzy = predict_risk(model, _stack_from_disk(cfg, "t1"), norm, load_grid(cfg.path("forest", "t1")))
    _save(fuzzy, cfg.path("fuzzy"), written)
    return fuzzy


def stage_classify(cfg: PipelineConfig, written: list[str] | None = None) -> Grid:
    written = [] if written is None else written
    classes = classify_risk(load_grid(cfg.path("fuzzy")), cfg.t_low, cfg.t_high)
    _save(classes, cfg.path("classes"), written)
    return classes


def run_pipeline(cfg: PipelineConfig) -> dict:
    """Run every stage in order and write ``summary.json``.

    On failure the summary records the failing stage and the files written
    so far, then :class:`PipelineError` is raised.
    """
    cfg.validate()
    os.makedirs(cfg.out_dir, exist_ok=True)
    written: list[str] = []
    summary: dict[str, Any] = {"status": "ok", "seed": cfg.seed, "config": config_to_dict(cfg)}
    stages = [
        ("features_t0", lambda: stage_features(cfg, "t0", written)),
        ("features_t1", lambda: stage_features(cfg, "t1", written)),
        ("labels", lambda: stage_labels(cfg, written)),
        ("train", lambda: stage_train(cfg, written)),
        ("evaluate", lambda: stage_evaluate(cfg, written)),
        ("predict", lambda: stage_predict(cfg, written)),
        ("classify", lambda: stage_classify(cfg, written)),
    ]
    results = {}
    for name, fn in stages:
        log.info("stage %s", name)
        try:
            results[name] = fn()
        except Exception as exc:
            summary.update(status="failed", failed_stage=name, error=str(exc), partial_outputs=written)
            _write_json(summary, cfg.path("summary"), [])
            raise PipelineError(name, exc) from exc

    labels = results["labels"]
    summary["label_counts"] = {
        "stable": int(np.sum(labels.cells == 0)),
        "deforested": int(np.sum(labels.cells == 1)),
    }
    summary["train_report"] = results["train"][2]
    summary["metrics"] = results["evaluate"]
    summary["risk_class_counts"] = class_counts(results["classify"])
    summary["files"] = [os.path.basename(p) for p in written]
    _write_json(summary, cfg.path("summary"), [])
    return summary
