"""Run configuration: one JSON document with a section per pipeline stage.

Every key has a default; unknown keys anywhere are rejected. Example::

    {
      "seed": 7,
      "generate": {"n_households": 5, "n_days": 10},
      "train": {"epochs": 50},
      "detect": {"strategy": "quantile", "q": 0.995},
      "pipeline": {"baseline": true}
    }

A top-level ``seed`` overrides the generator and training seeds.
"""

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .datagen import GenConfig
from .detector import DetectorConfig
from .errors import SchemaError
from .preprocess import PreprocessConfig
from .training import TrainConfig


@dataclass(frozen=True)
class ArchConfig:
    encoder_hidden: int = 64
    decoder_hidden: int = 64

    def __post_init__(self):
        if self.encoder_hidden < 1 or self.decoder_hidden < 1:
            raise ValueError("hidden sizes must be >= 1")


@dataclass(frozen=True)
class PipelineOptions:
    baseline: bool = False
    contaminate_training: bool = False
    deterministic: bool = True


SECTIONS = {
    "generate": GenConfig,
    "preprocess": PreprocessConfig,
    "model": ArchConfig,
    "train": TrainConfig,
    "detect": DetectorConfig,
    "pipeline": PipelineOptions,
}


@dataclass(frozen=True)
class RunConfig:
    seed: int = None
    generate: GenConfig = field(default_factory=GenConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    model: ArchConfig = field(default_factory=ArchConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    detect: DetectorConfig = field(default_factory=DetectorConfig)
    pipeline: PipelineOptions = field(default_factory=PipelineOptions)

    def resolved(self):
        """Copy with the top-level seed pushed into the sections."""
        if self.seed is None:
            return self
        return replace(self, generate=replace(self.generate, seed=self.seed),
                       train=replace(self.train, seed=self.seed))

    def with_overrides(self, **sections):
        """Copy with ``section={key: value}`` overrides applied (None values skipped)."""
        out = self
        for name, values in sections.items():
            values = {k: v for k, v in values.items() if v is not None}
            if values:
                out = replace(out, **{name: replace(getattr(out, name), **values)})
        return out

    def to_dict(self):
        d = {"seed": self.seed}
        for name in SECTIONS:
            sec = getattr(self, name)
            d[name] = sec.to_dict() if hasattr(sec, "to_dict") else asdict(sec)
        return d


def _line_of(text, key):
    needle = f'"{key}"'
    for n, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return n
    return 0


def from_dict(d, path="<config>", text=""):
    if not isinstance(d, dict):
        raise SchemaError(path, 1, "document", "config must be a JSON object")
    unknown = set(d) - set(SECTIONS) - {"seed"}
    for key in sorted(unknown):
        raise SchemaError(path, _line_of(text, key), key, "unknown key")
    seed = d.get("seed")
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int)):
        raise SchemaError(path, _line_of(text, "seed"), "seed", "must be an integer")
    kw = {"seed": seed}
    for name, cls in SECTIONS.items():
        sec = d.get(name, {})
        if not isinstance(sec, dict):
            raise SchemaError(path, _line_of(text, name), name, "section must be an object")
        allowed = {f.name for f in fields(cls)}
        for key in sorted(set(sec) - allowed):
            raise SchemaError(path, _line_of(text, key), f"{name}.{key}", "unknown key")
        try:
            if hasattr(cls, "from_dict"):
                kw[name] = cls.from_dict(sec)
            else:
                vals = {k: tuple(v) if isinstance(v, list) else v for k, v in sec.items()}
                kw[name] = cls(**vals)
        except (TypeError, ValueError) as e:
            raise SchemaError(path, _line_of(text, name), name, str(e)) from None
    return RunConfig(**kw)


def load_config(path):
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaError(path, e.lineno, "document", f"invalid JSON: {e.msg}") from None
    return from_dict(d, path, text)


def write_config(path, cfg):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
