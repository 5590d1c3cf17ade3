"""Experiment configuration: JSON file + dotted overrides, schema-validated."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema

from ._util import derive_seed, fingerprint
from .errors import ConfigError
from .model import CONVNEXT_BACKBONE, BackboneSpec
from .preprocess import AugmentPolicy, CropSpec, NormalizationStats, PreprocessConfig
from .train import TrainConfig

DEFAULTS = {
    "version": 1,
    "seed": 42,
    "paths": {"output_dir": "runs/default", "train_manifest": None, "test_manifest": None},
    "synth": {"n": 500, "n_test": 200, "amf_fraction": 0.2},
    "preprocess": PreprocessConfig().to_dict(),
    "split": {"k": 5},
    "model": {"identifier": CONVNEXT_BACKBONE, "pretrained": True},
    "train": {k: v for k, v in TrainConfig().to_dict().items() if k != "seed"},
    "inference": {"threshold": 0.5},
    "report": {"formats": ["markdown", "json"], "nonconvergence_criterion": "single_class"},
    "ablation": {"ratios": [1.0, 0.6]},
}

# Sections that do not change what is trained or predicted.
_UNFINGERPRINTED = ("paths", "report", "ablation")


def load_schema() -> dict:
    return json.loads(resources.files("mitoslice").joinpath("config_schema.json").read_text())


def _deep_merge(base: dict, update: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in update.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_override(item: str) -> tuple[list[str], object]:
    """``a.b.c=value``; value parsed as JSON, falling back to a plain string."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def apply_overrides(raw: dict, overrides) -> dict:
    raw = copy.deepcopy(raw)
    for item in overrides or ():
        keys, value = parse_override(item)
        node = raw
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {item!r} descends into a non-object")
        node[keys[-1]] = value
    return raw


def validate_raw(raw: dict):
    try:
        jsonschema.validate(raw, load_schema())
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None


@dataclass
class ExperimentConfig:
    raw: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    def __post_init__(self):
        validate_raw(self.raw)
        self.raw = _deep_merge(DEFAULTS, self.raw)
        try:
            # constructing the typed views runs their invariant checks
            self.preprocess, self.backbone, self.train
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path=None, overrides=None) -> "ExperimentConfig":
        raw = {}
        if path is not None:
            path = Path(path)
            if not path.is_file():
                raise ConfigError(f"config file not found: {path}")
            try:
                raw = json.loads(path.read_text())
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls(apply_overrides(raw, overrides))

    def with_overrides(self, overrides) -> "ExperimentConfig":
        return ExperimentConfig(apply_overrides(self.raw, overrides))

    # typed views
    @property
    def seed(self) -> int:
        return self.raw["seed"]

    @property
    def output_dir(self) -> Path:
        return Path(self.raw["paths"]["output_dir"])

    @property
    def train_manifest(self) -> Path:
        p = self.raw["paths"]["train_manifest"]
        return Path(p) if p else self.output_dir / "data" / "train" / "manifest.csv"

    @property
    def test_manifest(self) -> Path:
        p = self.raw["paths"]["test_manifest"]
        return Path(p) if p else self.output_dir / "data" / "test" / "manifest.csv"

    @property
    def preprocess(self) -> PreprocessConfig:
        return PreprocessConfig.from_dict(self.raw["preprocess"])

    @property
    def crop(self) -> CropSpec:
        return self.preprocess.crop

    @property
    def augment(self) -> AugmentPolicy:
        return self.preprocess.augment

    @property
    def normalization(self) -> NormalizationStats:
        return self.preprocess.normalization

    @property
    def backbone(self) -> BackboneSpec:
        return BackboneSpec(**self.raw["model"])

    @property
    def train(self) -> TrainConfig:
        return TrainConfig(seed=self.seed, **self.raw["train"])

    @property
    def k(self) -> int:
        return self.raw["split"]["k"]

    @property
    def threshold(self) -> float:
        return self.raw["inference"]["threshold"]

    @property
    def split_seed(self) -> int:
        return self.seed

    def purpose_seed(self, purpose: str, *keys: int) -> int:
        return derive_seed(self.seed, purpose, *keys)

    @property
    def fingerprint(self) -> str:
        return fingerprint({k: v for k, v in self.raw.items() if k not in _UNFINGERPRINTED})

    def dump(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.raw, indent=2, sort_keys=True) + "\n")
        return path
