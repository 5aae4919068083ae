"""INI run configuration: ``[model]``, ``[data]`` and ``[train]`` sections.

Values given on the command line as ``section.key=value`` override the file.
Unknown sections or keys are rejected. A relative ``data.manifest`` in a file
resolves against that file's directory.
"""
from __future__ import annotations

import configparser
import dataclasses
import io
import os
import typing
from dataclasses import dataclass, field

from .data import PipelineConfig
from .model import ModelConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    manifest: str = ""
    num_frames: int = 20
    resize_size: int = 256
    crop_size: int = 224
    folds: int = 5
    fold_seed: int = 0

    def __post_init__(self):
        if self.num_frames < 2:
            raise ValueError("num_frames must be >= 2")
        if self.crop_size > self.resize_size:
            raise ValueError("crop_size must not exceed resize_size")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def pipeline(self) -> PipelineConfig:
        return PipelineConfig(
            num_frames=self.data.num_frames,
            resize_size=self.data.resize_size,
            crop_size=self.data.crop_size,
            input_mode=self.model.input_mode,
        )

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        for section in SECTIONS:
            obj = getattr(self, section)
            cp[section] = {
                f.name: _format(getattr(obj, f.name))
                for f in dataclasses.fields(obj)
                if f.name not in _HIDDEN.get(section, ())
            }
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


SECTIONS = {"model": ModelConfig, "data": DataConfig, "train": TrainConfig}
# frame_size follows data.crop_size
_HIDDEN = {"model": ("frame_size",)}


def _format(v):
    if v is None:
        return "none"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


def _parse(raw: str, tp, key):
    raw = raw.strip()
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    try:
        if origin is typing.Union or (origin is not None and type(None) in args):
            if raw.lower() in ("none", ""):
                return None
            inner = next(a for a in args if a is not type(None))
            return _parse(raw, inner, key)
        if origin is tuple:
            return tuple(_parse(p, args[0], key) for p in raw.split(",") if p.strip())
        if tp is bool:
            return raw.lower() in ("1", "true", "yes", "on")
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
        return raw
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from exc


def _field_types(cls):
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls) if f.init}


def load_run_config(path=None, overrides=()) -> RunConfig:
    """Build a :class:`RunConfig` from defaults, an optional INI file, then overrides."""
    values = {s: {} for s in SECTIONS}
    if path is not None:
        cp = configparser.ConfigParser()
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
        for section in cp.sections():
            if section not in SECTIONS:
                raise ConfigError(f"unknown config section [{section}]")
            values[section].update(cp[section])
        manifest = values["data"].get("manifest", "").strip()
        if manifest and not os.path.isabs(manifest):
            # relative to the config file, not the working directory
            values["data"]["manifest"] = os.path.join(os.path.dirname(os.path.abspath(path)), manifest)
    for item in overrides:
        key, sep, raw = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section in override {item!r}")
        values[section][name] = raw

    built = {}
    for section, cls in SECTIONS.items():
        types = _field_types(cls)
        kwargs = {}
        for key, raw in values[section].items():
            if key not in types or key in _HIDDEN.get(section, ()):
                raise ConfigError(f"unknown key {section}.{key}")
            kwargs[key] = _parse(raw, types[key], f"{section}.{key}")
        built[section] = kwargs

    try:
        data = DataConfig(**built["data"])
        mkw = built["model"]
        mkw["frame_size"] = data.crop_size
        model = ModelConfig(**mkw)
        train = TrainConfig(**built["train"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(model=model, data=data, train=train)
