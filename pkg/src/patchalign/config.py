"""Run configuration: one JSON document drives every pipeline stage.

Sections: scene (synthetic data), patch (grid size), modes (K-means
discovery), train (optimization), paths (data/model/output locations).
Command-line flags only select files and override seeds; everything with
scientific meaning lives here so a run is reproducible from its echoed
resolved_config.json alone. Unknown keys are rejected rather than ignored:
a typo must fail loudly, not silently fall back to a default.
"""

import dataclasses
import json
from dataclasses import dataclass, field

from .synthdata import SceneConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class PatchConfig:
    patch_h: int = 8
    patch_w: int = 8

    def validate(self):
        if self.patch_h < 2 or self.patch_w < 2:
            raise ConfigError(
                f"patch.patch_h/patch_w must be >= 2, got {self.patch_h}x{self.patch_w}")
        return self


@dataclass
class ModesConfig:
    k: int = 50
    n_samples: int = 10000
    seed: int = 0
    max_iter: int = 300
    tol: float = 1e-6

    def validate(self):
        if self.k < 1:
            raise ConfigError(f"modes.k must be >= 1, got {self.k}")
        if self.n_samples < self.k:
            raise ConfigError(
                f"modes.n_samples must be >= modes.k, got {self.n_samples} < {self.k}")
        if self.max_iter < 1:
            raise ConfigError(f"modes.max_iter must be >= 1, got {self.max_iter}")
        if self.tol < 0:
            raise ConfigError(f"modes.tol must be >= 0, got {self.tol}")
        return self


@dataclass
class PathsConfig:
    data: str | None = None
    modes: str | None = None
    out: str | None = None


@dataclass
class RunConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    patch: PatchConfig = field(default_factory=PatchConfig)
    modes: ModesConfig = field(default_factory=ModesConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)


def _convert(raw, current, path):
    """Coerce a JSON value onto the type of the default it replaces."""
    if dataclasses.is_dataclass(current):
        return _from_json(type(current), raw, path)
    if isinstance(current, bool):
        if not isinstance(raw, bool):
            raise ConfigError(f"{path}: expected a boolean, got {raw!r}")
        return raw
    if isinstance(current, int):
        if isinstance(raw, bool) or not isinstance(raw, int):
            raise ConfigError(f"{path}: expected an integer, got {raw!r}")
        return raw
    if isinstance(current, float):
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {raw!r}")
        return float(raw)
    if isinstance(current, tuple):
        if not isinstance(raw, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {raw!r}")
        out = []
        for i, v in enumerate(raw):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"{path}[{i}]: expected a number, got {v!r}")
            out.append(v)
        return tuple(out)
    if isinstance(current, str) or current is None:
        if raw is not None and not isinstance(raw, str):
            raise ConfigError(f"{path}: expected a string, got {raw!r}")
        return raw
    raise ConfigError(f"{path}: unsupported value {raw!r}")


def _from_json(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object, got {type(data).__name__}")
    base = cls()
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"{path}.{key}: unknown key")
    updates = {name: _convert(data[name], getattr(base, name), f"{path}.{name}")
               for name in data}
    return dataclasses.replace(base, **updates)


def config_from_dict(doc):
    """Validated RunConfig from a parsed JSON document."""
    cfg = _from_json(RunConfig, doc, "config")
    try:
        cfg.scene.validate()
        cfg.train.validate()
    except ValueError as e:  # re-tag constraint violations as config errors
        raise ConfigError(str(e)) from e
    cfg.patch.validate()
    cfg.modes.validate()
    if cfg.modes.k != cfg.train.k:
        raise ConfigError(
            f"modes.k ({cfg.modes.k}) and train.k ({cfg.train.k}) must agree")
    if cfg.patch.patch_h > cfg.scene.height or cfg.patch.patch_w > cfg.scene.width:
        raise ConfigError(
            f"patch {cfg.patch.patch_h}x{cfg.patch.patch_w} exceeds scene "
            f"{cfg.scene.height}x{cfg.scene.width}")
    return cfg


def parse_config(path):
    """Load, validate, and default-fill a config file."""
    with open(path, encoding="utf-8") as f:
        text = f.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: malformed JSON ({e})") from e
    return config_from_dict(doc)


def config_to_dict(cfg):
    return dataclasses.asdict(cfg)


def write_resolved(cfg, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(config_to_dict(cfg), f, indent=2)
        f.write("\n")
