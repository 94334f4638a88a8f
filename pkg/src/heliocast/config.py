"""Pipeline configuration (one JSON file) and the seed derivation scheme."""
from __future__ import annotations

import json
import os
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .models.gbt import DEFAULT_GRID
from .presets import REFERENCE_SITE, UTC_OFFSET_REUNION, site_coordinates
from .timeseries import canonical_variable

LAG_SOURCES = ("preset_table3", "auto", "file")


@dataclass
class SiteConfig:
    name: str
    path: str | None = None
    latitude: float | None = None
    longitude: float | None = None

    def __post_init__(self):
        if self.latitude is None or self.longitude is None:
            known = site_coordinates()
            if self.name not in known:
                raise ConfigError(f"site {self.name!r}: latitude/longitude required")
            self.latitude, self.longitude = known[self.name]


@dataclass
class PipelineConfig:
    sites: list = field(default_factory=list)
    train_year: int = 2014
    test_year: int = 2015
    target: str = "kb"
    horizon: int = 60
    utc_offset: int = UTC_OFFSET_REUNION
    csv_schema: dict = field(default_factory=dict)
    # "preset_table2", a path to an exclusion JSON file, or null for none
    exclusions: str | None = "preset_table2"
    max_gap_minutes: int = 60
    nocturnal_sigma: float = 0.01
    sun_source: str = "computed"
    sun_tables: dict = field(default_factory=dict)
    low_irradiance_floor: float = 5.0
    lag_spec_source: str = "preset_table3"
    lag_spec_path: str | None = None
    reference_site: str = REFERENCE_SITE
    selection_year: int | None = None
    selection_minute_window: int | None = None
    selection_max_order: int = 20
    model_kinds: list = field(default_factory=lambda: ["gbt", "mlp"])
    vector_kinds: list = field(default_factory=lambda: ["instant", "arima"])
    gbt_grid: dict = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_GRID.items()})
    gbt_folds: int = 3
    mlp_sizes: dict = field(default_factory=lambda: {"instant": [5, 10, 30, 100],
                                                     "arima": [5, 10, 30, 100]})
    mlp_folds: int = 10
    mlp_restarts: int = 10
    mlp_keep: int = 5
    mlp_training: dict = field(default_factory=dict)
    stride: int = 1
    seed: int = 0
    workers: int | None = None
    out_dir: str = "heliocast-out"
    synth: dict = field(default_factory=dict)
    synth_gaps: dict | None = None

    def __post_init__(self):
        self.sites = [s if isinstance(s, SiteConfig) else SiteConfig(**s) for s in self.sites]
        names = [s.name for s in self.sites]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate site names")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.train_year == self.test_year:
            raise ConfigError("train_year and test_year must differ")
        try:
            self.target = canonical_variable(self.target)
        except ValueError as err:
            raise ConfigError(str(err)) from None
        if self.lag_spec_source not in LAG_SOURCES:
            raise ConfigError(f"lag_spec_source must be one of {LAG_SOURCES}")
        if self.lag_spec_source == "file" and not self.lag_spec_path:
            raise ConfigError("lag_spec_source=file needs lag_spec_path")
        if set(self.model_kinds) - {"gbt", "mlp"} or not self.model_kinds:
            raise ConfigError("model_kinds must be a non-empty subset of [gbt, mlp]")
        if set(self.vector_kinds) - {"instant", "arima"} or not self.vector_kinds:
            raise ConfigError("vector_kinds must be a non-empty subset of [instant, arima]")
        if self.sun_source not in ("computed", "table_file"):
            raise ConfigError("sun_source must be computed or table_file")
        if self.stride < 1 or self.gbt_folds < 2 or self.mlp_folds < 2:
            raise ConfigError("stride >= 1 and fold counts >= 2 required")
        if not 1 <= self.mlp_keep <= self.mlp_restarts:
            raise ConfigError("need 1 <= mlp_keep <= mlp_restarts")
        if self.workers is not None and self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @property
    def n_workers(self) -> int:
        return self.workers or os.cpu_count() or 1

    def site(self, name: str) -> SiteConfig:
        for s in self.sites:
            if s.name == name:
                return s
        raise ConfigError(f"unknown site {name!r}")

    def to_dict(self) -> dict:
        """Every field, defaults included."""
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        try:
            return cls(**d)
        except TypeError as err:
            raise ConfigError(f"invalid config: {err}") from None

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            d = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: invalid JSON ({err})") from None
        return cls.from_dict(d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def derive_seed(root: int, *keys) -> int:
    """Deterministic 32-bit seed for a task identified by ``keys``.

    The root seed and the CRC-32 of each key (as text) seed a
    ``SeedSequence``; its first state word is the task seed.
    """
    entropy = [int(root) & 0xFFFFFFFF] + [zlib.crc32(str(k).encode()) for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])
