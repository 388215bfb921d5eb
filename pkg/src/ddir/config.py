"""Flat ``key = value`` run configuration.

Keys are ``section.name``; every key has a default, unknown keys are errors.
Lines starting with ``#`` are comments.  Relative paths are resolved against
the directory of the config file.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .encoder import EncoderConfig
from .model import DdirConfig


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, Any] = {
    "model.channels": 32,
    "model.blocks": 4,
    "model.def_channels": 32,
    "model.def_blocks": 4,
    "model.hidden": 64,
    "model.def_hidden": 64,
    "model.layers": 5,
    "model.use_deformation_field": True,
    "model.use_appearance_embedding": True,
    "model.appearance_to_sr": False,
    "model.stop_deformation_grad": False,
    "model.area_weighting": "diagonal",
    "optim.lr": 2e-4,
    "optim.decay": 0.5,
    "optim.decay_every": 200,
    "optim.beta1": 0.9,
    "optim.beta2": 0.999,
    "optim.eps": 1e-8,
    "train.batch": 16,
    "train.epochs": 50,
    "train.steps_per_epoch": 0,
    "train.seed": 0,
    "train.queries": 2304,
    "train.patch": 48,
    "train.save_every": 0,
    "train.deterministic": True,
    "data.train_manifest": "",
    "data.test_manifest": "",
    "eval.scales": [1.5, 1.7, 2.0, 2.3, 2.5, 2.7, 3.0, 3.3, 3.5, 3.7, 4.0],
    "eval.shave": -1,
    "eval.mode": "model",
    "eval.chunk": 65536,
    "io.output_dir": "runs/default",
    "synth.source": "",
    "synth.count": 10,
    "synth.size": 64,
    "synth.scales": [1.5, 2.0],
    "synth.shift": 0.08,
    "synth.shared_shift": False,
    "synth.gain_min": 0.9,
    "synth.gain_max": 1.1,
    "synth.sigma_min": 0.2,
    "synth.sigma_max": 1.5,
    "synth.sigma_grid": 4,
    "synth.noise": 0.0,
    "synth.seed": 0,
    "synth.output": "data/synthetic",
}

PATH_KEYS = {"data.train_manifest", "data.test_manifest", "io.output_dir", "synth.source", "synth.output"}
CHOICES = {"model.area_weighting": ("diagonal", "literal"), "eval.mode": ("model", "bicubic", "identity")}


def _parse(key: str, raw: str) -> Any:
    default = DEFAULTS[key]
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, list):
            return [float(v) for v in raw.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    if key in CHOICES and raw not in CHOICES[key]:
        raise ConfigError(f"{key}: expected one of {', '.join(CHOICES[key])}, got {raw!r}")
    return raw


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return ",".join(repr(float(v)) for v in value)
    return str(value)


@dataclass
class RunConfig:
    values: dict[str, Any] = field(default_factory=lambda: dict(DEFAULTS))
    base_dir: Path = field(default_factory=Path.cwd)

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def path(self, key: str) -> Path | None:
        raw = self.values[key]
        if not raw:
            return None
        p = Path(raw)
        return p if p.is_absolute() else self.base_dir / p

    def with_overrides(self, **overrides: Any) -> "RunConfig":
        """Copy with ``section__name=value`` overrides."""
        values = dict(self.values)
        for k, v in overrides.items():
            key = k.replace("__", ".")
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = v
        return RunConfig(values, self.base_dir)

    def model_config(self) -> DdirConfig:
        v = self.values
        return DdirConfig(
            encoder=EncoderConfig(v["model.channels"], v["model.blocks"]),
            def_encoder=EncoderConfig(v["model.def_channels"], v["model.def_blocks"]),
            hidden=v["model.hidden"],
            def_hidden=v["model.def_hidden"],
            layers=v["model.layers"],
            use_deformation_field=v["model.use_deformation_field"],
            use_appearance_embedding=v["model.use_appearance_embedding"],
            appearance_to_sr=v["model.appearance_to_sr"],
            stop_deformation_grad=v["model.stop_deformation_grad"],
            area_weighting=v["model.area_weighting"],
        )

    def to_text(self) -> str:
        return "".join(f"{k} = {_format(self.values[k])}\n" for k in sorted(self.values))


def parse_config(text: str, base_dir: Path | None = None, source: str = "<config>") -> RunConfig:
    values = dict(DEFAULTS)
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = _parse(key, raw)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return RunConfig(values, base_dir or Path.cwd())


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc})") from exc
    return parse_config(text, path.parent.resolve(), str(path))
