"""Experiment configuration: a JSON document merged over defaults.

Keys are addressed with dots on the command line, e.g.
``--set trainer.phase=TWO --set preprocess.target_size=299``.
"""
from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

from .augment import AugmentConfig
from .dataset import TaskKind
from .errors import ConfigError
from .imageops import PreprocessConfig
from .modelkit import ModelSpec, build_model_spec
from .trainer import OptimizerConfig, PhaseConfig, TrainConfig

CACHE_ENV = "RETINA_PIPELINE_CACHE"

DEFAULTS = {
    "task": "FIVE",
    "seed": 0,
    "paths": {"manifest": "train.csv", "image_dir": "train_images", "output_dir": "runs/default"},
    "split": {"test_frac": 0.2, "val_frac": 0.2, "stratified": False},
    "preprocess": {
        "enabled": True,
        "target_size": 512,
        "black_threshold": 7,
        "blend_alpha": 4.0,
        "blend_bias": 128.0,
        "sigma_ratio": 1 / 30,
    },
    "augment": {"rotation_max": 360.0, "flip_prob": 0.5, "noise_sigma": 10.0},
    "model": {
        "backbone": "TOY",
        "input_size": 32,
        "hidden_widths": [256, 64],
        "weights_origin": "PRETRAINED_IMAGENET",
    },
    "trainer": {
        "phase": "ONE",
        "optimizer": "ADAM",
        "learning_rate": None,
        "batch_size": 16,
        "max_epochs": 50,
        "patience": 1,
        "reinit_backbone": False,
    },
}


def _merge(base: dict, override: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        dotted = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {dotted!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {dotted!r} must be an object")
            out[key] = _merge(base[key], value, dotted + ".")
        else:
            out[key] = value
    return out


def parse_override(item: str) -> dict:
    """``a.b=value`` -> ``{"a": {"b": value}}``; the value is parsed as JSON when possible."""
    if "=" not in item:
        raise ConfigError(f"--set expects key=value, got {item!r}")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    out: dict = {}
    node = out
    parts = key.strip().split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value
    return out


@dataclass
class ExperimentConfig:
    raw: dict
    base_dir: Path

    # -- paths
    def _path(self, key) -> Path:
        p = Path(self.raw["paths"][key])
        return p if p.is_absolute() else self.base_dir / p

    @property
    def manifest(self) -> Path:
        return self._path("manifest")

    @property
    def image_dir(self) -> Path:
        return self._path("image_dir")

    @property
    def output_dir(self) -> Path:
        return self._path("output_dir")

    @property
    def splits_dir(self) -> Path:
        return self.output_dir / "splits"

    @property
    def cache_dir(self) -> Path:
        env = os.environ.get(CACHE_ENV)
        return Path(env) if env else self.output_dir / "cache"

    # -- typed views
    @property
    def task(self) -> TaskKind:
        return TaskKind.parse(self.raw["task"])

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def split(self) -> dict:
        return self.raw["split"]

    @property
    def preprocess_enabled(self) -> bool:
        return bool(self.raw["preprocess"]["enabled"])

    @property
    def preprocess(self) -> PreprocessConfig:
        d = {k: v for k, v in self.raw["preprocess"].items() if k != "enabled"}
        return PreprocessConfig(**d)

    def augment(self, seed: int) -> AugmentConfig:
        return AugmentConfig(seed=seed, **self.raw["augment"])

    @property
    def phase(self) -> PhaseConfig:
        t = self.raw["trainer"]
        return PhaseConfig.of(t["phase"], bool(t["reinit_backbone"]))

    @property
    def train_config(self) -> TrainConfig:
        t = self.raw["trainer"]
        phase = self.phase
        lr = t["learning_rate"] if t["learning_rate"] is not None else phase.learning_rate
        return TrainConfig(
            phase=phase,
            optimizer=OptimizerConfig(t["optimizer"], float(lr)),
            batch_size=int(t["batch_size"]),
            max_epochs=int(t["max_epochs"]),
            patience=int(t["patience"]),
            seed=self.seed,
        )

    def model_spec(self, task: TaskKind | None = None) -> ModelSpec:
        m = self.raw["model"]
        return build_model_spec(
            task or self.task,
            m["backbone"],
            int(m["input_size"]),
            tuple(m["hidden_widths"]),
            frozen=self.phase.backbone_frozen,
            weights_origin=m["weights_origin"],
        )

    def preprocess_key(self) -> str:
        blob = json.dumps(self.preprocess.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def validate(self) -> None:
        """Build every typed view once so bad values fail before any work starts."""
        self.task
        self.preprocess
        self.augment(0)
        self.train_config
        self.model_spec()
        s = self.split
        for key in ("test_frac", "val_frac"):
            if not 0 < float(s[key]) < 1:
                raise ConfigError(f"split.{key} must lie in (0, 1)")

    def to_json(self) -> str:
        return json.dumps(self.raw, indent=2, sort_keys=True)


def load_config(path=None, overrides=()) -> ExperimentConfig:
    raw = copy.deepcopy(DEFAULTS)
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        try:
            user = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        raw = _merge(raw, user)
        base = path.parent.resolve()
    for item in overrides:
        raw = _merge(raw, parse_override(item))
    cfg = ExperimentConfig(raw, base)
    try:
        cfg.validate()
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
    return cfg
