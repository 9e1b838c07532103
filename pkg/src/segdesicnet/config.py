"""Run configuration: one JSON document, defaults filled at load."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from . import geodesy
from .errors import ConfigError
from .geo_encoding import EncoderSettings, GridConfig
from .model import ModelConfig
from .synthetic import WorldConfig, world_to_dict
from .training import TrainConfig

POTSDAM_CLASSES = ["impervious", "building", "low_vegetation", "tree", "car", "clutter"]
FLAIR_CLASSES = [
    "building", "pervious", "impervious", "bare_soil", "water", "coniferous",
    "deciduous", "brushwood", "vine", "grassland", "crop", "plowed_land",
]


def default_class_names(k: int) -> list[str]:
    if k == len(POTSDAM_CLASSES):
        return list(POTSDAM_CLASSES)
    if k == len(FLAIR_CLASSES):
        return list(FLAIR_CLASSES)
    return [f"class_{i}" for i in range(k)]


@dataclass(frozen=True)
class GeodesyConfig:
    median_easting: float = geodesy.MEDIAN_EASTING
    median_northing: float = geodesy.MEDIAN_NORTHING
    center_before_transform: bool = True


@dataclass(frozen=True)
class RunConfig:
    world: WorldConfig = WorldConfig()
    grid: GridConfig = GridConfig()
    geodesy: GeodesyConfig = GeodesyConfig()
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    class_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if self.model.num_classes != self.world.num_classes:
            raise ConfigError(
                f"model.num_classes ({self.model.num_classes}) != world.num_classes ({self.world.num_classes})"
            )
        self.model.check_grid(self.grid.num_scales)
        if not self.class_names:
            object.__setattr__(self, "class_names", tuple(default_class_names(self.model.num_classes)))
        if len(self.class_names) != self.model.num_classes:
            raise ConfigError("class_names must list one name per class")

    @property
    def encoder_settings(self) -> EncoderSettings:
        return EncoderSettings(
            grid=self.grid,
            median_easting=self.geodesy.median_easting,
            median_northing=self.geodesy.median_northing,
            center_before_transform=self.geodesy.center_before_transform,
        )

    def to_dict(self) -> dict[str, Any]:
        model = dataclasses.asdict(self.model)
        model["encoder_channels"] = list(self.model.encoder_channels)
        model["segdesic_hidden"] = list(self.model.segdesic_hidden)
        return {
            "world": world_to_dict(self.world),
            "grid": dataclasses.asdict(self.grid),
            "geodesy": dataclasses.asdict(self.geodesy),
            "model": model,
            "train": dataclasses.asdict(self.train),
            "class_names": list(self.class_names),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


_SECTIONS = {
    "world": WorldConfig,
    "grid": GridConfig,
    "geodesy": GeodesyConfig,
    "model": ModelConfig,
    "train": TrainConfig,
}


def _build(cls, values: dict[str, Any], section: str):
    if not isinstance(values, dict):
        raise ConfigError(f"section {section!r} must be a JSON object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"bad values in {section!r}: {exc}") from exc


def from_dict(doc: dict[str, Any]) -> RunConfig:
    unknown = set(doc) - set(_SECTIONS) - {"class_names"}
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    sections = {name: dict(doc.get(name, {})) for name in _SECTIONS}
    grid = _build(GridConfig, sections["grid"], "grid")
    world = _build(WorldConfig, sections["world"], "world")
    model_vals = sections["model"]
    model_vals.setdefault("encoding_dim", grid.dim)
    model_vals.setdefault("num_classes", world.num_classes)
    built = {name: _build(cls, sections[name], name) for name, cls in _SECTIONS.items() if name not in ("grid", "world")}
    return RunConfig(
        world=world,
        grid=grid,
        geodesy=built["geodesy"],
        model=built["model"],
        train=built["train"],
        class_names=tuple(doc.get("class_names", ())),
    )


def parse_override(text: str) -> tuple[list[str], Any]:
    """``section.key=value`` with a JSON value (bare strings allowed)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form section.key=value")
    key, raw = text.split("=", 1)
    path = key.strip().split(".")
    if len(path) != 2 or path[0] not in _SECTIONS:
        raise ConfigError(f"override key {key!r} must be <section>.<field>")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path, value


def load(path: str | Path | None = None, overrides: list[str] = ()) -> RunConfig:
    doc: dict[str, Any] = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
    for item in overrides:
        (section, key), value = parse_override(item)
        doc.setdefault(section, {})[key] = value
    return from_dict(doc)
