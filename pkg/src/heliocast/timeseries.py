"""Minute-grid storage and the hourly/minute index arithmetic.

Timestamps are integer minutes since 1970-01-01 00:00 UTC. Calendar
fields (month, hour, minute, day) are always taken in *local* civil time,
obtained by adding a fixed ``utc_offset`` in minutes.
"""
from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone

import numpy as np

VARIABLES = ("I_D", "I_G", "Patm", "RH", "Text", "WD", "WS_Mean", "kb", "UnitX", "UnitY")
RAW_VARIABLES = ("I_D", "I_G", "Patm", "RH", "Text", "WD", "WS_Mean")
# order of the instant vector, and the variable-major order of every feature layout
MODEL_VARIABLES = ("kb", "Patm", "RH", "Text", "WS_Mean", "UnitX", "UnitY")
ALIASES = {"WS": "WS_Mean"}

EPOCH = datetime(1970, 1, 1)


def canonical_variable(name: str) -> str:
    name = ALIASES.get(name, name)
    if name not in VARIABLES:
        raise ValueError(f"unknown variable {name!r}")
    return name


def to_minutes(dt: datetime, utc_offset: int = 0) -> int:
    """Convert a naive local ``datetime`` to UTC minutes.

    Raises ``ValueError`` when the seconds field is not zero.
    """
    if dt.tzinfo is not None:
        dt = dt.astimezone(timezone.utc).replace(tzinfo=None)
        utc_offset = 0
    if dt.second != 0 or dt.microsecond != 0:
        raise ValueError(f"{dt.isoformat()} is not an exact minute")
    delta = dt - EPOCH
    return delta.days * 1440 + delta.seconds // 60 - utc_offset


def from_minutes(ts: int, utc_offset: int = 0) -> datetime:
    """Naive local ``datetime`` for a UTC minute timestamp."""
    return EPOCH + timedelta(minutes=int(ts) + utc_offset)


def parse_day(text: str) -> datetime:
    return datetime.strptime(text, "%Y-%m-%d")


def hour_offset_to_minute_offset(k: int) -> int:
    """Minute lag equivalent to the hourly lag ``T-k``.

    ``T-1`` is the present slot ``t-1``; each further hour adds 60 minutes.
    """
    if int(k) != k or k < 1:
        raise ValueError(f"hour lag must be a positive integer, got {k!r}")
    return 60 * (int(k) - 1) + 1


def local_minutes(ts, utc_offset: int = 0) -> np.ndarray:
    return np.asarray(ts, dtype=np.int64) + utc_offset


def minute_of_hour(ts, utc_offset: int = 0) -> np.ndarray:
    return local_minutes(ts, utc_offset) % 60


def hour_of_day(ts, utc_offset: int = 0) -> np.ndarray:
    return (local_minutes(ts, utc_offset) // 60) % 24


def local_day(ts, utc_offset: int = 0) -> np.ndarray:
    """Days since epoch of the local civil date."""
    return local_minutes(ts, utc_offset) // 1440


def month_index(ts, utc_offset: int = 0) -> np.ndarray:
    """Month of year, 0-based (January is 0)."""
    m = local_minutes(ts, utc_offset).astype("datetime64[m]").astype("datetime64[M]")
    return m.astype(np.int64) % 12


def calendar_year(ts, utc_offset: int = 0) -> np.ndarray:
    y = local_minutes(ts, utc_offset).astype("datetime64[m]").astype("datetime64[Y]")
    return y.astype(np.int64) + 1970


@dataclass(frozen=True)
class MinuteSeries:
    """One variable on a contiguous one-minute grid.

    ``missing`` flags slots without an observation; the value stored at a
    missing slot is meaningless (kept at 0.0).
    """

    variable: str
    start: int
    values: np.ndarray
    missing: np.ndarray = None
    step: int = 1

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        missing = (
            np.zeros(values.shape, dtype=bool)
            if self.missing is None
            else np.asarray(self.missing, dtype=bool)
        )
        if missing.shape != values.shape:
            raise ValueError("values and missing must have the same shape")
        values = np.where(missing, 0.0, values)
        values.flags.writeable = False
        missing.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "missing", missing)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def end(self) -> int:
        """Timestamp of the last slot (inclusive)."""
        return self.start + (len(self) - 1) * self.step

    @property
    def timestamps(self) -> np.ndarray:
        return self.start + self.step * np.arange(len(self), dtype=np.int64)

    def index_of(self, ts: int) -> int:
        off = ts - self.start
        if off % self.step or not 0 <= off // self.step < len(self):
            raise IndexError(f"timestamp {ts} outside series coverage")
        return off // self.step

    def __eq__(self, other):
        if not isinstance(other, MinuteSeries):
            return NotImplemented
        return (
            self.variable == other.variable
            and self.start == other.start
            and self.step == other.step
            and np.array_equal(self.values, other.values)
            and np.array_equal(self.missing, other.missing)
        )

    __hash__ = None


def slice_series(series: MinuteSeries, start: int, end: int) -> MinuteSeries:
    """Sub-series covering ``start``..``end`` inclusive."""
    if start > end:
        raise ValueError("slice start after end")
    try:
        i, j = series.index_of(start), series.index_of(end)
    except IndexError as err:
        raise IndexError(f"slice [{start}, {end}] outside coverage") from err
    return replace(series, start=start, values=series.values[i : j + 1],
                   missing=series.missing[i : j + 1])


def hourly_subsample(series: MinuteSeries, utc_offset: int = 0) -> MinuteSeries:
    """Keep the slots whose local minutes field is 0."""
    ts = series.timestamps
    keep = np.flatnonzero(minute_of_hour(ts, utc_offset) == 0)
    if len(keep) == 0:
        return replace(series, values=np.empty(0), missing=np.empty(0, bool), step=60)
    return MinuteSeries(series.variable, int(ts[keep[0]]), series.values[keep],
                        series.missing[keep], step=60)


@dataclass
class SiteDataset:
    """All variables of one site on a shared minute grid.

    ``present`` is False for grid slots whose row was absent from the source
    file; ``excluded`` flags slots inside exclusion frames.
    """

    site_name: str
    latitude: float
    longitude: float
    start: int
    values: dict
    missing: dict
    present: np.ndarray = None
    excluded: np.ndarray = None
    exclusion_frames: list = field(default_factory=list)
    utc_offset: int = 0
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.length
        for var, v in self.values.items():
            if len(v) != n or len(self.missing[var]) != n:
                raise ValueError(f"series {var} has length {len(v)}, expected {n}")
        if self.present is None:
            self.present = np.ones(n, dtype=bool)
        if self.excluded is None:
            self.excluded = np.zeros(n, dtype=bool)

    @property
    def length(self) -> int:
        return len(next(iter(self.values.values()))) if self.values else 0

    @property
    def end(self) -> int:
        return self.start + self.length - 1

    @property
    def timestamps(self) -> np.ndarray:
        return self.start + np.arange(self.length, dtype=np.int64)

    @property
    def variables(self) -> tuple:
        return tuple(self.values)

    def series(self, variable: str) -> MinuteSeries:
        variable = canonical_variable(variable)
        return MinuteSeries(variable, self.start, self.values[variable], self.missing[variable])

    def copy(self) -> "SiteDataset":
        return SiteDataset(
            self.site_name, self.latitude, self.longitude, self.start,
            {k: v.copy() for k, v in self.values.items()},
            {k: v.copy() for k, v in self.missing.items()},
            self.present.copy(), self.excluded.copy(), list(self.exclusion_frames),
            self.utc_offset, {k: v.copy() for k, v in self.flags.items()},
        )

    def index_range(self, first: int, last: int) -> slice:
        """Grid slice for timestamps ``first``..``last``, clipped to coverage."""
        i = max(first - self.start, 0)
        j = min(last - self.start, self.length - 1)
        return slice(i, max(j + 1, i))

    def save(self, path) -> None:
        arrays = {"present": self.present, "excluded": self.excluded}
        for var in self.values:
            arrays[f"value__{var}"] = self.values[var]
            arrays[f"missing__{var}"] = self.missing[var]
        for name, arr in self.flags.items():
            arrays[f"flag__{name}"] = arr
        meta = {
            "site_name": self.site_name, "latitude": self.latitude,
            "longitude": self.longitude, "start": self.start,
            "utc_offset": self.utc_offset,
            "exclusion_frames": [list(f) for f in self.exclusion_frames],
        }
        arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
        # written member by member with a fixed date so identical data gives identical bytes
        with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
            for name, arr in arrays.items():
                buf = io.BytesIO()
                np.lib.format.write_array(buf, np.asarray(arr), allow_pickle=False)
                info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
                info.compress_type = zipfile.ZIP_DEFLATED
                zf.writestr(info, buf.getvalue())

    @classmethod
    def load(cls, path) -> "SiteDataset":
        with np.load(path) as z:
            meta = json.loads(bytes(z["meta"]).decode())
            values, missing, flags = {}, {}, {}
            for key in z.files:
                kind, _, name = key.partition("__")
                if kind == "value":
                    values[name] = z[key]
                elif kind == "missing":
                    missing[name] = z[key]
                elif kind == "flag":
                    flags[name] = z[key]
            return cls(meta["site_name"], meta["latitude"], meta["longitude"], meta["start"],
                       values, missing, z["present"], z["excluded"],
                       [tuple(f) for f in meta["exclusion_frames"]], meta["utc_offset"], flags)
