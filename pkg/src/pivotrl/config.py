"""Application configuration: one YAML file with a section per sub-config."""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .dapo import DapoConfig
from .errors import ConfigError, PivotError
from .pgcot import PipelineConfig
from .rewards import RewardConfig
from .toy_rl import ToyEnvConfig, TrainConfig
from .trace import TagConfig

SECTIONS = {
    "reward": RewardConfig,
    "dapo": DapoConfig,
    "env": ToyEnvConfig,
    "train": TrainConfig,
    "tags": TagConfig,
    "pgcot": PipelineConfig,
}
SCALARS = ("lexicon_path", "behavior_patterns_path")


class _Loader(yaml.SafeLoader):
    pass


# YAML 1.1 reads "1e-8" as a string; accept exponent floats without a dot
_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
                    |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
                    |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
                    |[-+]?\.(?:inf|Inf|INF)
                    |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."),
)


@dataclass(frozen=True)
class AppConfig:
    reward: RewardConfig = field(default_factory=RewardConfig)
    dapo: DapoConfig = field(default_factory=DapoConfig)
    env: ToyEnvConfig = field(default_factory=ToyEnvConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    tags: TagConfig = field(default_factory=TagConfig)
    pgcot: PipelineConfig = field(default_factory=PipelineConfig)
    lexicon_path: str | None = None
    behavior_patterns_path: str | None = None

    def to_dict(self) -> dict:
        out: dict = {}
        for name in SECTIONS:
            sec = dataclasses.asdict(getattr(self, name))
            out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in sec.items()}
        for name in SCALARS:
            out[name] = getattr(self, name)
        return out

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, allow_unicode=True)

    def with_seed(self, seed: int | None) -> "AppConfig":
        if seed is None:
            return self
        return dataclasses.replace(self, env=dataclasses.replace(self.env, seed=seed))


def _build_section(name: str, cls, data) -> object:
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {name}: {', '.join(map(str, unknown))}")
    try:
        return cls(**data)
    except ConfigError:
        raise
    except PivotError as exc:
        raise ConfigError(f"{name}: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from None


def config_from_dict(data: dict | None) -> AppConfig:
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    unknown = sorted(set(data) - set(SECTIONS) - set(SCALARS))
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(map(str, unknown))}")
    kwargs = {name: _build_section(name, cls, data.get(name)) for name, cls in SECTIONS.items()}
    for name in SCALARS:
        v = data.get(name)
        if v is not None and not isinstance(v, str):
            raise ConfigError(f"{name} must be a path string")
        kwargs[name] = v
    return AppConfig(**kwargs)


def parse_config(text: str) -> AppConfig:
    try:
        data = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from None
    return config_from_dict(data)


def load_config(path: str | Path | None) -> AppConfig:
    """``None`` gives the defaults. Raises ``OSError`` if the file cannot be read."""
    if path is None:
        return AppConfig()
    return parse_config(Path(path).read_text(encoding="utf-8"))


def default_config_yaml() -> str:
    return AppConfig().to_yaml()
