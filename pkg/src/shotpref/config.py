"""Pipeline configuration: one JSON file, strictly validated."""

from __future__ import annotations

import dataclasses
import json
import os
import types
import typing
from dataclasses import dataclass, field

from .errors import ConfigError

CONFIG_VERSION = 1
STRATEGIES = ("tag", "regression", "cyclic", "remote")


@dataclass(frozen=True)
class Seeds:
    dataset: int = 0
    model: int = 0
    dpo: int = 0
    eval: int = 0


@dataclass(frozen=True)
class DatasetSection:
    count: int = 2000
    frames_per_traj: int = 30
    fps: float = 10.0
    jitter: float = 1.0
    subject_height: float = 1.7
    aspect: float = 16 / 9
    tag_distribution: dict | None = None


@dataclass(frozen=True)
class TokenizerSection:
    bins: int = 64


@dataclass(frozen=True)
class ModelSection:
    width: int = 64
    depth: int = 2
    heads: int = 4
    mlp_ratio: int = 4


@dataclass(frozen=True)
class PretrainSection:
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 24
    tag_dropout: float = 0.1
    weight_decay: float = 0.0


@dataclass(frozen=True)
class DpoSection:
    prompts: int = 512
    beta: float = 0.1
    candidates: int = 8
    min_gap: float | None = None
    temperature: float = 1.0
    top_k: int = 50
    lr: float = 1e-4
    pairs_per_step: int = 8
    epochs: int = 1
    grad_clip: float | None = None
    sample_chunk: int = 128


@dataclass(frozen=True)
class RegressionSection:
    samples: int = 2000
    hidden: int = 32
    lr: float = 0.05
    epochs: int = 1500


@dataclass(frozen=True)
class ScorerSection:
    strategy: str = "cyclic"
    remote_endpoint: str | None = None
    timeout: float = 10.0
    caption_seed: int = 0
    regression: RegressionSection = field(default_factory=RegressionSection)


@dataclass(frozen=True)
class EvalSection:
    heldout_prompts: int = 200
    eval_samples: int = 500
    k: int = 3
    previews: int = 2
    preview_resolution: tuple = (160, 90)
    strategy_ablation: tuple = ("tag", "regression")
    beta_sweep: tuple = (0.01, 0.5, 0.9)


@dataclass(frozen=True)
class PathsSection:
    out: str = "runs/desk"


@dataclass(frozen=True)
class PipelineConfig:
    version: int = CONFIG_VERSION
    name: str = "desk"
    seeds: Seeds = field(default_factory=Seeds)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    tokenizer: TokenizerSection = field(default_factory=TokenizerSection)
    model: ModelSection = field(default_factory=ModelSection)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    dpo: DpoSection = field(default_factory=DpoSection)
    scorer: ScorerSection = field(default_factory=ScorerSection)
    eval: EvalSection = field(default_factory=EvalSection)
    paths: PathsSection = field(default_factory=PathsSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def replace(self, path: str, value) -> "PipelineConfig":
        """Copy with one dotted field replaced, e.g. ``replace("dpo.beta", 0.5)``."""
        head, _, rest = path.partition(".")
        if not rest:
            return dataclasses.replace(self, **{head: value})
        section = getattr(self, head)
        return dataclasses.replace(self, **{head: _replace(section, rest, value)})


def _replace(obj, path: str, value):
    head, _, rest = path.partition(".")
    if not rest:
        return dataclasses.replace(obj, **{head: value})
    return dataclasses.replace(obj, **{head: _replace(getattr(obj, head), rest, value)})


def _strip_optional(tp):
    args = typing.get_args(tp)
    if typing.get_origin(tp) in (typing.Union, types.UnionType) and type(None) in args:
        rest = [a for a in args if a is not type(None)]
        return rest[0], True
    return tp, False


def _coerce(value, tp, path: str):
    tp, optional = _strip_optional(tp)
    if value is None:
        if optional:
            return None
        raise ConfigError("must not be null", path)
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError("expected a boolean", path)
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError("expected an integer", path)
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError("expected a number", path)
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError("expected a string", path)
        return value
    if tp is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError("expected a list", path)
        return tuple(value)
    if tp is dict:
        if not isinstance(value, dict):
            raise ConfigError("expected an object", path)
        return value
    return value


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError("expected an object", path or "<root>")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError("unknown field", f"{path}.{key}" if path else key)
    kwargs = {}
    for name in names:
        if name in data:
            kwargs[name] = _coerce(data[name], hints[name], f"{path}.{name}" if path else name)
    return cls(**kwargs)


def _validate(cfg: PipelineConfig) -> PipelineConfig:
    if cfg.version != CONFIG_VERSION:
        raise ConfigError(f"unsupported version {cfg.version}", "version")
    checks = [
        (cfg.dataset.count >= 64, "dataset.count", "must be at least 64"),
        (cfg.dataset.frames_per_traj >= 2, "dataset.frames_per_traj", "must be at least 2"),
        (cfg.dataset.fps > 0, "dataset.fps", "must be positive"),
        (cfg.dpo.beta > 0, "dpo.beta", "must be positive"),
        (cfg.dpo.candidates >= 2, "dpo.candidates", "must be at least 2"),
        (cfg.dpo.prompts >= 1, "dpo.prompts", "must be positive"),
        (cfg.scorer.strategy in STRATEGIES, "scorer.strategy", f"must be one of {STRATEGIES}"),
        (cfg.eval.heldout_prompts >= 1, "eval.heldout_prompts", "must be positive"),
        (cfg.eval.eval_samples > cfg.eval.k, "eval.eval_samples", "must exceed eval.k"),
        (all(s in STRATEGIES for s in cfg.eval.strategy_ablation), "eval.strategy_ablation",
         f"entries must be in {STRATEGIES}"),
        (all(isinstance(b, (int, float)) and b > 0 for b in cfg.eval.beta_sweep), "eval.beta_sweep",
         "entries must be positive numbers"),
        (len(cfg.eval.preview_resolution) == 2, "eval.preview_resolution", "expected [width, height]"),
    ]
    for ok, path, msg in checks:
        if not ok:
            raise ConfigError(msg, path)
    if cfg.scorer.strategy == "remote" and not cfg.scorer.remote_endpoint:
        raise ConfigError("remote strategy needs an endpoint", "scorer.remote_endpoint")
    return cfg


def config_from_dict(data: dict) -> PipelineConfig:
    if not isinstance(data, dict) or "version" not in data:
        raise ConfigError("missing field", "version")
    return _validate(_build(PipelineConfig, data, ""))


def load_config(path: str | os.PathLike) -> PipelineConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    return config_from_dict(data)


def bundled_config_path(name: str = "desk") -> str:
    return os.path.join(os.path.dirname(__file__), "resources", f"{name}.json")
