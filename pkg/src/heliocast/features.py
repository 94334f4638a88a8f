"""Derived variables, monthly-hourly normalization and supervised-set assembly."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .timeseries import (
    MODEL_VARIABLES,
    MinuteSeries,
    SiteDataset,
    canonical_variable,
    hour_of_day,
    hour_offset_to_minute_offset,
    local_minutes,
    month_index,
)

log = logging.getLogger(__name__)

LOW_IRRADIANCE_FLOOR = 5.0


def wind_to_units(wd):
    """Cosine and sine of a wind direction in degrees."""
    rad = np.radians(np.mod(wd, 360.0))
    return np.cos(rad), np.sin(rad)


def compute_kb(i_g, i_d):
    """Direct-to-global ratio ``1 - I_D / I_G`` clamped to [0, 1].

    Slots with ``I_G <= 0`` get 0; they are nocturnal in practice and get
    masked afterwards.
    """
    i_g = np.asarray(i_g, dtype=float)
    i_d = np.asarray(i_d, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        kb = np.where(i_g > 0, 1.0 - i_d / np.where(i_g > 0, i_g, 1.0), 0.0)
    kb = np.clip(kb, 0.0, 1.0)
    return float(kb) if kb.ndim == 0 else kb


def low_irradiance(i_g, floor: float = LOW_IRRADIANCE_FLOOR):
    return np.asarray(i_g, dtype=float) < floor


@dataclass
class NocturnalConfig:
    sigma: float = 0.01
    rng_seed: int = 0
    sun_source: str = "computed"
    sun_table: str | None = None

    def __post_init__(self):
        if self.sigma < 0:
            raise ConfigError("nocturnal sigma must be non-negative")
        if self.sun_source not in ("computed", "table_file"):
            raise ConfigError(f"unknown sun_source {self.sun_source!r}")
        if self.sun_source == "table_file" and not self.sun_table:
            raise ConfigError("sun_source=table_file needs sun_table")


def mask_nocturnal(kb: MinuteSeries, sun_times, config: NocturnalConfig) -> MinuteSeries:
    """Replace night slots by ``0.5 + e`` with ``e ~ N(0, sigma^2)``, seeded."""
    night = sun_times.is_night(kb.timestamps)
    values = kb.values.copy()
    rng = np.random.default_rng(config.rng_seed)
    values[night] = 0.5 + config.sigma * rng.standard_normal(int(night.sum()))
    return MinuteSeries(kb.variable, kb.start, values, kb.missing, kb.step)


def derive_variables(dataset: SiteDataset, sun_times, nocturnal: NocturnalConfig,
                     floor: float = LOW_IRRADIANCE_FLOOR) -> SiteDataset:
    """Add kb (night-masked) and wind components to a cleaned dataset.

    Sets ``flags['night']`` and ``flags['low_irradiance']`` (daytime slots
    whose I_G is under ``floor``).
    """
    ds = dataset.copy()
    n = ds.length
    if "UnitX" not in ds.values:
        ux, uy = wind_to_units(ds.values["WD"])
        ds.values["UnitX"], ds.values["UnitY"] = ux, uy
        ds.missing["UnitX"] = ds.missing["UnitY"] = ds.missing["WD"].copy()
    kb = compute_kb(ds.values["I_G"], ds.values["I_D"])
    kb_missing = ds.missing["I_G"] | ds.missing["I_D"]
    masked = mask_nocturnal(MinuteSeries("kb", ds.start, kb, kb_missing), sun_times, nocturnal)
    night = sun_times.is_night(ds.timestamps)
    ds.values["kb"] = masked.values
    ds.missing["kb"] = kb_missing & ~night
    ds.flags["night"] = night
    ds.flags["low_irradiance"] = low_irradiance(ds.values["I_G"], floor) & ~night
    if n and ds.flags["low_irradiance"].any():
        log.info("%s: %d daytime slots below %.1f W/m2", ds.site_name,
                 int(ds.flags["low_irradiance"].sum()), floor)
    return ds


# --- monthly-hourly normalization -------------------------------------------------------

def _cells(ts, utc_offset):
    return month_index(ts, utc_offset) * 24 + hour_of_day(ts, utc_offset)


@dataclass
class MonthlyHourlyStats:
    """Per (month, hour) cell statistics, plus pooled per-hour statistics.

    Cells without any training sample (a month absent from the training
    range) borrow the pooled statistics of their hour of day.
    """

    mean: np.ndarray
    std: np.ndarray
    count: np.ndarray
    utc_offset: int = 0
    hour_mean: np.ndarray = None
    hour_std: np.ndarray = None
    hour_count: np.ndarray = None

    def __post_init__(self):
        if self.hour_count is None:
            self.hour_mean, self.hour_std = np.zeros(24), np.ones(24)
            self.hour_count = np.zeros(24, dtype=np.int64)

    @property
    def degenerate(self) -> np.ndarray:
        scale = np.maximum(1.0, np.abs(self.mean))
        return (self.count < 2) | (self.std <= 1e-12 * scale)

    @property
    def empty(self) -> np.ndarray:
        return self.count == 0

    @property
    def effective_mean(self) -> np.ndarray:
        return np.where(self.empty, self.hour_mean[None, :], self.mean)

    @property
    def effective_std(self) -> np.ndarray:
        scale = np.maximum(1.0, np.abs(self.hour_mean))
        hour_ok = (self.hour_count >= 2) & (self.hour_std > 1e-12 * scale)
        hour_std = np.where(hour_ok, self.hour_std, 1.0)[None, :]
        return np.where(self.empty, hour_std, np.where(self.degenerate, 1.0, self.std))

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(),
                "count": self.count.tolist(), "utc_offset": self.utc_offset,
                "hour_mean": self.hour_mean.tolist(), "hour_std": self.hour_std.tolist(),
                "hour_count": self.hour_count.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "MonthlyHourlyStats":
        hour = [np.array(d[k], dtype=t) for k, t in
                (("hour_mean", float), ("hour_std", float), ("hour_count", np.int64))] \
            if "hour_count" in d else [None, None, None]
        return cls(np.array(d["mean"], dtype=float), np.array(d["std"], dtype=float),
                   np.array(d["count"], dtype=np.int64), d.get("utc_offset", 0), *hour)


def fit_monthly_hourly(series: MinuteSeries, training_range=None, excluded=None,
                       utc_offset: int = 0) -> MonthlyHourlyStats:
    """Per (month, hour) mean and population standard deviation.

    ``training_range`` is an inclusive ``(first_ts, last_ts)`` pair; slots
    flagged in ``excluded`` (aligned with ``series``) and missing slots are
    ignored.
    """
    ts = series.timestamps
    keep = ~series.missing
    if excluded is not None:
        keep &= ~np.asarray(excluded, dtype=bool)
    if training_range is not None:
        keep &= (ts >= training_range[0]) & (ts <= training_range[1])
    if not keep.any():
        raise DataError(f"{series.variable}: empty training range for normalization")
    x = series.values[keep]
    cell = _cells(ts[keep], utc_offset)
    count = np.bincount(cell, minlength=288)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.bincount(cell, weights=x, minlength=288) / count
        mean = np.where(count > 0, mean, 0.0)
        var = np.bincount(cell, weights=(x - mean[cell]) ** 2, minlength=288) / count
    std = np.sqrt(np.where(count > 0, var, 0.0))
    hour = cell % 24
    h_count = np.bincount(hour, minlength=24)
    with np.errstate(invalid="ignore", divide="ignore"):
        h_mean = np.where(h_count > 0, np.bincount(hour, weights=x, minlength=24) / h_count, 0.0)
        h_var = np.bincount(hour, weights=(x - h_mean[hour]) ** 2, minlength=24) / h_count
    h_std = np.sqrt(np.where(h_count > 0, h_var, 1.0))
    return MonthlyHourlyStats(mean.reshape(12, 24), std.reshape(12, 24),
                              count.reshape(12, 24), utc_offset, h_mean, h_std, h_count)


def normalize(values, timestamps, stats: MonthlyHourlyStats) -> np.ndarray:
    cell = _cells(timestamps, stats.utc_offset)
    mean, std = stats.effective_mean.ravel(), stats.effective_std.ravel()
    return (np.asarray(values, dtype=float) - mean[cell]) / std[cell]


def denormalize(values, timestamps, stats: MonthlyHourlyStats) -> np.ndarray:
    cell = _cells(timestamps, stats.utc_offset)
    mean, std = stats.effective_mean.ravel(), stats.effective_std.ravel()
    return np.asarray(values, dtype=float) * std[cell] + mean[cell]


# --- lag specifications ---------------------------------------------------------------

@dataclass(frozen=True)
class FeatureSlot:
    variable: str
    minute_lag: int
    label: str

    def to_list(self) -> list:
        return [self.variable, self.minute_lag, self.label]


@dataclass
class LagSpec:
    """Selected minute lags (``t-k``) and hour lags (``T-k``, k >= 2) per variable."""

    entries: dict = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for var, lags in self.entries.items():
            try:
                var = canonical_variable(var)
            except ValueError as err:
                raise ConfigError(str(err)) from None
            minute = sorted(set(int(k) for k in lags.get("minute_lags", [])))
            hour = sorted(set(int(k) for k in lags.get("hour_lags", [])))
            if any(k < 1 for k in minute):
                raise ConfigError(f"{var}: minute lags must be >= 1")
            if any(k < 2 for k in hour):
                raise ConfigError(f"{var}: hour lags must be >= 2 (T-1 is t-1)")
            clean[var] = {"minute_lags": minute, "hour_lags": hour}
        order = [v for v in MODEL_VARIABLES if v in clean] + [v for v in clean if v not in MODEL_VARIABLES]
        self.entries = {v: clean[v] for v in order}

    @property
    def dimension(self) -> int:
        return sum(len(e["minute_lags"]) + len(e["hour_lags"]) for e in self.entries.values())

    def layout(self) -> list:
        slots = []
        for var, e in self.entries.items():
            items = [(k, f"{var}[t-{k}]") for k in e["minute_lags"]]
            items += [(hour_offset_to_minute_offset(k), f"{var}[T-{k}]") for k in e["hour_lags"]]
            seen = set()
            for lag, label in sorted(items):
                if lag not in seen:
                    seen.add(lag)
                    slots.append(FeatureSlot(var, lag, label))
        return slots

    @property
    def max_minute_lag(self) -> int:
        return max((s.minute_lag for s in self.layout()), default=1)

    def to_json(self) -> dict:
        return {v: dict(e) for v, e in self.entries.items()}

    @classmethod
    def from_json(cls, d: dict) -> "LagSpec":
        if not isinstance(d, dict):
            raise ConfigError("lag spec must be a JSON object")
        try:
            return cls({k: dict(v) for k, v in d.items()})
        except (ValueError, TypeError, AttributeError) as err:
            raise ConfigError(f"invalid lag spec: {err}") from None

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "LagSpec":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: invalid JSON ({err})") from None
        return cls.from_json(d)

    @classmethod
    def instant(cls) -> "LagSpec":
        return cls({v: {"minute_lags": [1]} for v in MODEL_VARIABLES})

    @classmethod
    def table3(cls) -> "LagSpec":
        from .presets import data_path
        return cls.load(data_path("lagspec_table3.json"))


# --- supervised sets ------------------------------------------------------------------

@dataclass
class SupervisedSet:
    X: np.ndarray
    y: np.ndarray
    target_ts: np.ndarray
    layout: list
    horizon: int = 60
    utc_offset: int = 0
    site: str = ""

    def __len__(self) -> int:
        return len(self.y)

    @property
    def dimension(self) -> int:
        return len(self.layout)

    @property
    def labels(self) -> list:
        return [s.label for s in self.layout]

    def slot_timestamps(self, column: int) -> np.ndarray:
        """Timestamps of the input slot feeding ``column`` for every row."""
        return self.target_ts - self.horizon + 1 - self.layout[column].minute_lag

    def subset(self, rows) -> "SupervisedSet":
        return SupervisedSet(self.X[rows], self.y[rows], self.target_ts[rows], self.layout,
                             self.horizon, self.utc_offset, self.site)

    def to_csv(self, path) -> None:
        from .timeseries import from_minutes
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["target_timestamp", *self.labels, "target"])
            for ts, row, y in zip(self.target_ts, self.X, self.y):
                stamp = from_minutes(ts, self.utc_offset).strftime("%Y-%m-%d %H:%M:%S")
                w.writerow([stamp, *map(repr, row.tolist()), repr(float(y))])


def assemble(dataset: SiteDataset, spec: LagSpec, *, horizon: int = 60, target: str = "kb",
             drop_nocturnal: bool = True, stride: int = 1) -> SupervisedSet:
    """Build one row per admissible target slot.

    The present slot is ``target - horizon``; a lag of ``k`` minutes reads the
    slot ``present + 1 - k``. A row is dropped when any slot between its
    deepest input and its target is excluded or missing, and (with
    ``drop_nocturnal``) when its target is at night. ``stride`` keeps targets
    whose local minute-of-day is a multiple of it.
    """
    layout = spec.layout()
    if not layout:
        raise ConfigError("empty lag spec")
    for slot in layout:
        if slot.variable not in dataset.values:
            raise ConfigError(f"lag spec references unknown variable {slot.variable!r}")
    n = dataset.length
    deepest = max(s.minute_lag for s in layout)
    first = horizon + deepest - 1
    if n <= first:
        return _empty_set(layout, horizon, dataset)

    bad = dataset.excluded | ~dataset.present
    for var in {s.variable for s in layout} | {target}:
        bad = bad | dataset.missing[var]
    cum = np.concatenate(([0], np.cumsum(bad)))
    j = np.arange(first, n)
    lo = j - horizon + 1 - deepest
    ok = cum[j + 1] - cum[lo] == 0
    if drop_nocturnal and "night" in dataset.flags:
        ok &= ~dataset.flags["night"][j]
    if stride > 1:
        ok &= (local_minutes(dataset.start + j, dataset.utc_offset) % 1440) % stride == 0
    j = j[ok]
    X = np.empty((len(j), len(layout)))
    for c, slot in enumerate(layout):
        X[:, c] = dataset.values[slot.variable][j - horizon + 1 - slot.minute_lag]
    return SupervisedSet(X, dataset.values[target][j].copy(), dataset.start + j, layout,
                         horizon, dataset.utc_offset, dataset.site_name)


def _empty_set(layout, horizon, dataset):
    return SupervisedSet(np.empty((0, len(layout))), np.empty(0), np.empty(0, dtype=np.int64),
                         layout, horizon, dataset.utc_offset, dataset.site_name)


def assemble_instant(dataset: SiteDataset, **kw) -> SupervisedSet:
    """The 7 model variables at the present slot ``t-1``."""
    return assemble(dataset, LagSpec.instant(), **kw)


def assemble_arima(dataset: SiteDataset, spec: LagSpec, **kw) -> SupervisedSet:
    return assemble(dataset, spec, **kw)


def fit_feature_stats(dataset: SiteDataset, variables, training_range) -> dict:
    """Monthly-hourly stats per variable over the training range, exclusions omitted."""
    return {v: fit_monthly_hourly(dataset.series(v), training_range, dataset.excluded,
                                  dataset.utc_offset) for v in variables}


def normalize_features(data: SupervisedSet, stats: dict) -> np.ndarray:
    """Standardize each column with the stats of its variable at its own slot time."""
    X = np.empty_like(data.X)
    for c, slot in enumerate(data.layout):
        X[:, c] = normalize(data.X[:, c], data.slot_timestamps(c), stats[slot.variable])
    return X
