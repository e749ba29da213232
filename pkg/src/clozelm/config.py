"""JSON run configuration: one section per component, unknown keys rejected."""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Union

from .decode import DecodeConfig
from .finetune import FinetuneConfig
from .model import ModelConfig
from .optim import OptimizerConfig
from .pretrain import CorruptionPolicy, MixSchedule, PretrainSettings

CONFIG_ENV = "CLOZELM_CONFIG"


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    corruption: CorruptionPolicy = field(default_factory=CorruptionPolicy)
    mix: MixSchedule = field(default_factory=MixSchedule)
    pretrain: PretrainSettings = field(default_factory=PretrainSettings)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RunConfig":
        sections = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(d) - set(sections)
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        built = {}
        for name, body in d.items():
            if not isinstance(body, Mapping):
                raise ValueError(f"config section {name!r} must be an object")
            kind = type(sections[name].default_factory())
            built[name] = _build(kind, name, body)
        return cls(**built)

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            d = dataclasses.asdict(getattr(self, f.name))
            if f.name == "finetune":
                d["mode"] = self.finetune.mode.value
            if f.name == "decode":
                d["banned"] = sorted(self.decode.banned)
            out[f.name] = d
        return out


def _build(kind, section: str, body: Mapping[str, Any]):
    known = {f.name for f in dataclasses.fields(kind)}
    unknown = set(body) - known
    if unknown:
        raise ValueError(f"unknown keys in config section {section!r}: {sorted(unknown)}")
    try:
        return kind(**body)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"config section {section!r}: {exc}") from exc


def load_config(path: Union[str, Path, None] = None) -> RunConfig:
    """Read ``path``, else the file named by $CLOZELM_CONFIG, else all defaults."""
    if path is None:
        path = os.environ.get(CONFIG_ENV) or None
    if path is None:
        return RunConfig()
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: top level must be a JSON object")
    return RunConfig.from_dict(raw)
