"""Flat ``key=value`` run configuration with dotted section keys.

Example::

    # tiny model
    seed = 0
    model.base_channels = 16
    model.blocks_per_level = 1,1,2
    loss.lambda1 = 0.05
    train.steps = 500

Tuples are comma separated; booleans are ``true``/``false``. Unknown keys are
rejected, and ``--set`` style overrides win over file values.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional

from .data import DataConfig
from .errors import ConfigError
from .losses import LossWeights
from .network import ModelConfig
from .train import TrainConfig

SECTIONS = {"model": ModelConfig, "loss": LossWeights, "train": TrainConfig, "data": DataConfig}


@dataclass
class RunConfig:
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def flat(self) -> dict:
        out = {"seed": self.seed}
        for name in SECTIONS:
            for k, v in dataclasses.asdict(getattr(self, name)).items():
                out[f"{name}.{k}"] = v
        return out


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_value(key: str, text: str, like):
    """Convert ``text`` to the type of the default value ``like``."""
    text = text.strip()
    try:
        if isinstance(like, bool):
            low = text.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(text)
        if isinstance(like, int):
            return int(text)
        if isinstance(like, float):
            return float(text)
        if isinstance(like, tuple):
            return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ConfigError(key, f"cannot parse {text!r} as {type(like).__name__}") from None
    return text


def _defaults() -> dict:
    return RunConfig().flat()


def parse_lines(lines: Iterable[str], source: str = "<text>") -> dict:
    """Raw ``{key: text}`` pairs; comments (#) and blank lines are skipped."""
    out = {}
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}", f"expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def build(raw: Mapping[str, str], base: Optional[RunConfig] = None) -> RunConfig:
    """Apply raw string values on top of ``base`` (defaults if omitted)."""
    base = base or RunConfig()
    flat = base.flat()
    for k, text in raw.items():
        if k not in flat:
            raise ConfigError(k, "unknown config key")
        flat[k] = parse_value(k, text, flat[k])
    kwargs = {"seed": flat["seed"]}
    for name, cls in SECTIONS.items():
        prefix = name + "."
        try:
            kwargs[name] = cls(**{k[len(prefix):]: v for k, v in flat.items() if k.startswith(prefix)})
        except ConfigError as e:
            field_name = e.field if "." in e.field else prefix + e.field
            raise ConfigError(field_name, str(e).split(": ", 1)[-1]) from None
    return RunConfig(**kwargs)


def load(path=None, overrides: Iterable[str] = ()) -> RunConfig:
    raw = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError("--config", f"no such file: {p}")
        raw.update(parse_lines(p.read_text().splitlines(), str(p)))
    raw.update(parse_lines(overrides, "--set"))
    return build(raw)


def dump_text(cfg) -> str:
    """Serialize a RunConfig or a bare ModelConfig."""
    if isinstance(cfg, ModelConfig):
        flat = {f"model.{k}": v for k, v in dataclasses.asdict(cfg).items()}
    elif isinstance(cfg, RunConfig):
        flat = cfg.flat()
    else:
        raise TypeError(f"cannot serialize {type(cfg).__name__}")
    return "".join(f"{k} = {format_value(v)}\n" for k, v in flat.items())


def parse_text(text: str) -> RunConfig:
    return build(parse_lines(text.splitlines()))


def model_config_from_text(text: str) -> ModelConfig:
    return parse_text(text).model
