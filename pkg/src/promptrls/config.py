"""Run configuration: YAML parsing, strict validation, lossless round-trip.

Unknown keys are hard errors (a silently ignored typo would corrupt a sweep)
and are reported with their line in the file. Section values feed straight
into the module-level config dataclasses, so their invariants fire here too.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Optional

import yaml

from .encoder import EncoderConfig
from .pools import PoolConfig
from .runner import METHODS, AnalyticConfig
from .stream import StreamConfig
from .training import TrainerConfig


class ConfigError(Exception):
    """Invalid configuration; message carries file and line when known."""


@dataclass(frozen=True)
class EncoderSection:
    embed_dim: int = 64
    num_layers: int = 4
    num_heads: int = 4
    prompt_layers: tuple[int, ...] = (0, 1, 2, 3)


@dataclass(frozen=True)
class PoolSection:
    pool_size: int = 16
    prompt_len: int = 8


@dataclass(frozen=True)
class SeedSection:
    run_seed: int = 0
    data_seed: int = 1234
    backbone_seed: int = 7


@dataclass(frozen=True)
class RunConfig:
    encoder: EncoderSection = field(default_factory=EncoderSection)
    pools: PoolSection = field(default_factory=PoolSection)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    analytic: AnalyticConfig = field(default_factory=AnalyticConfig)
    stream: StreamConfig = field(default_factory=StreamConfig)
    method: str = "full"
    seeds: SeedSection = field(default_factory=SeedSection)
    output_dir: str = "runs/default"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        # constructing the wired encoder config validates head/layer relations
        self.encoder_config()

    # -- wiring: stream owns the raw-feature geometry, seeds own all RNGs --
    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            embed_dim=self.encoder.embed_dim,
            num_layers=self.encoder.num_layers,
            num_heads=self.encoder.num_heads,
            image_tokens=self.stream.image_tokens,
            text_tokens=self.stream.text_tokens,
            input_dim=self.stream.input_dim,
            prompt_layers=tuple(self.encoder.prompt_layers),
            backbone_seed=self.seeds.backbone_seed,
        )

    def pool_config(self) -> PoolConfig:
        return PoolConfig(
            pool_size=self.pools.pool_size, prompt_len=self.pools.prompt_len
        )

    def stream_config(self) -> StreamConfig:
        return replace(self.stream, data_seed=self.seeds.data_seed)

    def to_dict(self) -> dict:
        d = {
            "encoder": asdict(self.encoder),
            "pools": asdict(self.pools),
            "trainer": asdict(self.trainer),
            "analytic": asdict(self.analytic),
            "stream": asdict(self.stream),
            "method": self.method,
            "seeds": asdict(self.seeds),
            "output_dir": self.output_dir,
        }
        d["encoder"]["prompt_layers"] = list(self.encoder.prompt_layers)
        d["trainer"]["betas"] = list(self.trainer.betas)
        # data_seed lives in the seeds section only
        del d["stream"]["data_seed"]
        return d

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


_SECTION_TYPES = {
    "encoder": EncoderSection,
    "pools": PoolSection,
    "trainer": TrainerConfig,
    "analytic": AnalyticConfig,
    "stream": StreamConfig,
    "seeds": SeedSection,
}
_SCALAR_KEYS = ("method", "output_dir")

_LIST_FIELDS = {("encoder", "prompt_layers"), ("trainer", "betas")}


def _known_fields(section: str) -> set[str]:
    names = {f.name for f in fields(_SECTION_TYPES[section])}
    if section == "stream":
        names.discard("data_seed")
    return names


def _walk_mapping(node: yaml.Node, path: str, where: str) -> dict[str, tuple[Any, int]]:
    """Key -> (value node, line) for a YAML mapping node."""
    if not isinstance(node, yaml.MappingNode):
        line = node.start_mark.line + 1
        raise ConfigError(f"{path}:{line}: {where} must be a mapping")
    out = {}
    for key_node, value_node in node.value:
        key = key_node.value
        if key in out:
            raise ConfigError(
                f"{path}:{key_node.start_mark.line + 1}: duplicate key {key!r}"
            )
        out[key] = (value_node, key_node.start_mark.line + 1)
    return out


def _scalar(value_node: yaml.Node, path: str, line: int) -> Any:
    try:
        return yaml.safe_load(yaml.serialize(value_node))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}:{line}: unreadable value ({exc})") from exc


def load_config(path: str) -> RunConfig:
    """Parse and validate a YAML config file, raising ConfigError on any issue."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc}") from exc
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f":{mark.line + 1}" if mark else ""
        raise ConfigError(f"{path}{line}: invalid YAML: {exc}") from exc
    if root is None:
        return RunConfig()

    top = _walk_mapping(root, path, "top level")
    overrides: dict[str, Any] = {}
    for key, (value_node, line) in top.items():
        if key in _SECTION_TYPES:
            section_items = _walk_mapping(value_node, path, f"section {key!r}")
            known = _known_fields(key)
            kwargs = {}
            for sub_key, (sub_node, sub_line) in section_items.items():
                if sub_key not in known:
                    raise ConfigError(
                        f"{path}:{sub_line}: unknown key {sub_key!r} in section {key!r}"
                    )
                value = _scalar(sub_node, path, sub_line)
                if (key, sub_key) in _LIST_FIELDS and isinstance(value, list):
                    value = tuple(value)
                kwargs[sub_key] = value
            try:
                overrides[key] = replace(_SECTION_TYPES[key](), **kwargs)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{path}:{line}: invalid section {key!r}: {exc}") from exc
        elif key in _SCALAR_KEYS:
            overrides[key] = _scalar(value_node, path, line)
        else:
            raise ConfigError(f"{path}:{line}: unknown top-level key {key!r}")

    try:
        return RunConfig(**overrides)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}:1: invalid configuration: {exc}") from exc


def from_dict(data: dict) -> RunConfig:
    """Build a RunConfig from a plain dict (the to_dict round trip)."""
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        if key in _SECTION_TYPES:
            value = dict(value)
            for name in list(value):
                if (key, name) in _LIST_FIELDS and isinstance(value[name], list):
                    value[name] = tuple(value[name])
            kwargs[key] = _SECTION_TYPES[key](**value)
        elif key in _SCALAR_KEYS:
            kwargs[key] = value
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return RunConfig(**kwargs)
