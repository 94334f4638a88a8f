"""Reading raw site files and repairing them.

The cleaning order is: parse, report gaps, decompose wind direction,
interpolate, flag exclusion frames.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError, UnrecoverableVariableError, ValidationError
from .features import wind_to_units
from .timeseries import ALIASES, RAW_VARIABLES, SiteDataset, canonical_variable, from_minutes, to_minutes

log = logging.getLogger(__name__)

ISO_FORMAT = "%Y-%m-%d %H:%M:%S"


@dataclass
class CsvSchema:
    timestamp_column: str = "Date"
    delimiter: str = ","
    timestamp_format: str = ISO_FORMAT
    # variable id -> column header; columns named by an alias (WS) are accepted too
    columns: dict = field(default_factory=lambda: {v: v for v in RAW_VARIABLES})

    @classmethod
    def from_dict(cls, d: dict | None) -> "CsvSchema":
        return cls(**(d or {}))


def runs(mask: np.ndarray) -> list:
    """Maximal runs of True as (first_index, last_index) pairs."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return []
    edges = np.diff(np.concatenate(([0], mask.view(np.int8), [0])))
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1) - 1
    return list(zip(starts.tolist(), stops.tolist()))


def _parse_timestamps(texts: list, fmt: str, utc_offset: int, first_line: int) -> np.ndarray:
    if fmt == ISO_FORMAT:
        try:
            arr = np.array([t.replace(" ", "T", 1) for t in texts], dtype="datetime64[s]")
            ok = all(len(t) == 19 for t in texts)
        except ValueError:
            ok = False
        if ok:
            secs = arr.astype(np.int64)
            bad = np.flatnonzero(secs % 60)
            if len(bad):
                raise ValidationError(f"timestamp {texts[bad[0]]!r} has a nonzero seconds field",
                                      line=first_line + int(bad[0]))
            return secs // 60 - utc_offset
    out = np.empty(len(texts), dtype=np.int64)
    for i, text in enumerate(texts):
        try:
            dt = datetime.strptime(text, fmt)
        except ValueError as err:
            raise ParseError(f"malformed timestamp {text!r}: {err}", line=first_line + i) from None
        try:
            out[i] = to_minutes(dt, utc_offset)
        except ValueError:
            raise ValidationError(f"timestamp {text!r} has a nonzero seconds field",
                                  line=first_line + i) from None
    return out


def parse_site_csv(path, schema: CsvSchema | None = None, *, site_name: str | None = None,
                   latitude: float = 0.0, longitude: float = 0.0,
                   utc_offset: int = 0) -> SiteDataset:
    """Load one site file onto a contiguous minute grid.

    Absent rows show up as ``present == False``; empty cells as missing values.
    """
    schema = schema or CsvSchema()
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=schema.delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        rows = list(reader)

    if schema.timestamp_column not in header:
        raise ParseError(f"{path}: no timestamp column {schema.timestamp_column!r}", line=1)
    cols = {}
    for var, colname in schema.columns.items():
        var = canonical_variable(var)
        for name in [colname, var] + [a for a, v in ALIASES.items() if v == var]:
            if name in header:
                cols[var] = header.index(name)
                break
    absent = [v for v in RAW_VARIABLES if v not in cols]
    if absent:
        raise ParseError(f"{path}: missing columns for {absent}", line=1)

    # file line of every non-blank row, for error messages
    lines = np.array([k + 2 for k, r in enumerate(rows) if any(c.strip() for c in r)], dtype=np.int64)
    rows = [rows[k - 2] for k in lines]
    ts_col = header.index(schema.timestamp_column)
    try:
        ts = _parse_timestamps([r[ts_col].strip() if ts_col < len(r) else "" for r in rows],
                               schema.timestamp_format, utc_offset, first_line=0)
    except (ParseError, ValidationError) as err:
        raise type(err)(err.detail, line=int(lines[err.line])) from None
    if len(ts) == 0:
        raise ParseError(f"{path}: no data rows")

    order = np.argsort(ts, kind="stable")
    ts_sorted = ts[order]
    dup = np.flatnonzero(np.diff(ts_sorted) == 0)
    if len(dup):
        line = int(lines[order[dup[0] + 1]])
        raise ValidationError(f"duplicate timestamp {from_minutes(ts_sorted[dup[0]], utc_offset)}",
                              line=line)

    start = int(ts_sorted[0])
    n = int(ts_sorted[-1]) - start + 1
    slot = ts - start
    present = np.zeros(n, dtype=bool)
    present[slot] = True
    values, missing = {}, {}
    for var, ci in cols.items():
        v = np.zeros(n)
        m = np.ones(n, dtype=bool)
        for k, row in enumerate(rows):
            cell = row[ci].strip() if ci < len(row) else ""
            if cell == "" or cell.upper() in ("NA", "NAN"):
                continue
            try:
                v[slot[k]] = float(cell)
            except ValueError:
                raise ParseError(f"bad value {cell!r} for {var}", line=int(lines[k])) from None
            m[slot[k]] = False
        values[var], missing[var] = v, m
    return SiteDataset(site_name or path.stem, latitude, longitude, start, values, missing,
                       present=present, utc_offset=utc_offset)


def write_site_csv(dataset: SiteDataset, path, schema: CsvSchema | None = None,
                   variables=RAW_VARIABLES) -> None:
    """Inverse of :func:`parse_site_csv`; absent rows are skipped, missing cells left empty."""
    schema = schema or CsvSchema()
    ts = dataset.timestamps
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=schema.delimiter)
        w.writerow([schema.timestamp_column] + [schema.columns.get(v, v) for v in variables])
        cols = [(dataset.values[v], dataset.missing[v]) for v in variables]
        for i in np.flatnonzero(dataset.present):
            stamp = from_minutes(ts[i], dataset.utc_offset).strftime(schema.timestamp_format)
            w.writerow([stamp] + ["" if m[i] else repr(float(v[i])) for v, m in cols])


@dataclass
class GapReport:
    missing_timestamp_ranges: list
    missing_value_ranges: dict
    counts: dict
    long_gaps: list = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not self.missing_timestamp_ranges and not any(self.missing_value_ranges.values())

    def to_json(self, utc_offset: int = 0) -> dict:
        def fmt(r):
            return [from_minutes(r[0], utc_offset).strftime(ISO_FORMAT),
                    from_minutes(r[1], utc_offset).strftime(ISO_FORMAT)]

        return {
            "missing_timestamp_ranges": [fmt(r) for r in self.missing_timestamp_ranges],
            "missing_value_ranges": {k: [fmt(r) for r in v]
                                     for k, v in self.missing_value_ranges.items()},
            "counts": self.counts,
            "long_gaps": [{"variable": g[0], "range": fmt(g[1:]), "minutes": g[2] - g[1] + 1}
                          for g in self.long_gaps],
        }


def detect_gaps(dataset: SiteDataset, max_gap_minutes: int = 60) -> GapReport:
    """Report absent rows and, within present rows, runs of missing cells.

    Runs longer than ``max_gap_minutes`` are listed in ``long_gaps`` as
    candidates for an exclusion frame.
    """
    t0 = dataset.start
    ts_ranges = [(t0 + a, t0 + b) for a, b in runs(~dataset.present)]
    value_ranges, counts = {}, {"missing_timestamps": int((~dataset.present).sum())}
    long_gaps = []
    for var in dataset.variables:
        cells = dataset.missing[var] & dataset.present
        value_ranges[var] = [(t0 + a, t0 + b) for a, b in runs(cells)]
        counts[f"missing_values.{var}"] = int(cells.sum())
        for a, b in runs(dataset.missing[var] | ~dataset.present):
            if b - a + 1 > max_gap_minutes:
                long_gaps.append((var, t0 + a, t0 + b))
    for g in long_gaps:
        log.warning("%s: %s gap of %d minutes at %s; consider an exclusion frame",
                    dataset.site_name, g[0], g[2] - g[1] + 1,
                    from_minutes(g[1], dataset.utc_offset))
    return GapReport(ts_ranges, value_ranges, counts, long_gaps)


def interpolate_missing(values: np.ndarray, missing: np.ndarray) -> np.ndarray:
    """Linear interpolation across missing runs, constant extension at the ends."""
    observed = np.flatnonzero(~missing)
    if len(observed) == 0:
        raise UnrecoverableVariableError("no observed values")
    if len(observed) == len(values):
        return values.copy()
    idx = np.arange(len(values))
    out = values.copy()
    out[missing] = np.interp(idx[missing], observed, values[observed])
    return out


def fill_missing(dataset: SiteDataset) -> SiteDataset:
    """Complete the grid and interpolate every missing cell.

    Wind direction is interpolated through its (UnitX, UnitY) components,
    which are re-projected onto the unit circle afterwards.
    """
    ds = dataset.copy()
    n = ds.length
    if "WD" in ds.values and "UnitX" not in ds.values:
        ux, uy = wind_to_units(ds.values["WD"])
        ds.values["UnitX"], ds.values["UnitY"] = ux, uy
        ds.missing["UnitX"] = ds.missing["WD"].copy()
        ds.missing["UnitY"] = ds.missing["WD"].copy()
    for var in list(ds.values):
        if var == "WD" and "UnitX" in ds.values:
            continue
        miss = ds.missing[var] | ~ds.present
        if miss.all():
            raise UnrecoverableVariableError(f"{ds.site_name}: variable {var} is entirely missing")
        obs = np.flatnonzero(~miss)
        if obs[0] > 0 or obs[-1] < n - 1:
            log.warning("%s: %s has leading/trailing missing values; extended by the nearest "
                        "observation", ds.site_name, var)
        ds.values[var] = interpolate_missing(ds.values[var], miss)
        ds.missing[var] = np.zeros(n, dtype=bool)
    if "UnitX" in ds.values:
        ux, uy = ds.values["UnitX"], ds.values["UnitY"]
        norm = np.hypot(ux, uy)
        # antipodal endpoints cancel out; hold the previous direction there
        bad = norm < 1e-12
        if bad.any():
            prev = np.maximum.accumulate(np.where(~bad, np.arange(n), 0))
            ux, uy, norm = ux[prev], uy[prev], norm[prev]
        ds.values["UnitX"], ds.values["UnitY"] = ux / norm, uy / norm
        if "WD" in ds.values:
            ds.values["WD"] = np.degrees(np.arctan2(ds.values["UnitY"], ds.values["UnitX"])) % 360.0
            ds.missing["WD"] = np.zeros(n, dtype=bool)
    ds.present = np.ones(n, dtype=bool)
    return ds


@dataclass
class ExclusionConfig:
    """Per-site inclusive day ranges, as ``("YYYY-MM-DD", "YYYY-MM-DD")`` pairs."""

    sites: dict = field(default_factory=dict)
    version: int = 1

    def __post_init__(self):
        for site, frames in self.sites.items():
            days = []
            for frame in frames:
                if len(frame) != 2:
                    raise ConfigError(f"{site}: exclusion frame {frame!r} needs [start, end]")
                a, b = (_day(x, site) for x in frame)
                if b < a:
                    raise ConfigError(f"{site}: exclusion frame {frame!r} ends before it starts")
                days.append((a, b))
            days.sort()
            for (_, b1), (a2, _) in zip(days, days[1:]):
                if a2 <= b1:
                    raise ConfigError(f"{site}: overlapping exclusion frames")

    def frames_for(self, site: str) -> list:
        return [tuple(f) for f in self.sites.get(site, [])]

    @classmethod
    def load(cls, path) -> "ExclusionConfig":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: invalid JSON ({err})") from None
        if d.get("version", 1) != 1:
            raise ConfigError(f"{path}: unsupported exclusion config version {d['version']}")
        return cls(sites={k: [list(f) for f in v] for k, v in d.get("sites", {}).items()})

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2) + "\n")


def _day(text, site) -> datetime:
    if isinstance(text, str) and len(text.strip()) == 10:
        try:
            return datetime.strptime(text.strip(), "%Y-%m-%d")
        except ValueError:
            pass
    raise ConfigError(f"{site}: exclusion bound {text!r} is not a day (YYYY-MM-DD)")


def table2_exclusions() -> ExclusionConfig:
    from .presets import data_path
    return ExclusionConfig.load(data_path("exclusions_table2.json"))


def apply_exclusions(dataset: SiteDataset, config: ExclusionConfig | list) -> SiteDataset:
    """Flag every slot lying in one of the site's exclusion frames; values untouched."""
    if isinstance(config, ExclusionConfig):
        frames = config.frames_for(dataset.site_name)
    else:
        frames = [tuple(f) for f in config]
        ExclusionConfig({dataset.site_name: [list(f) for f in frames]})
    ds = dataset.copy()
    ds.excluded = np.zeros(ds.length, dtype=bool)
    for a, b in frames:
        first = to_minutes(_day(a, ds.site_name), ds.utc_offset)
        last = to_minutes(_day(b, ds.site_name), ds.utc_offset) + 1439
        ds.excluded[ds.index_range(first, last)] = True
    ds.exclusion_frames = frames
    return ds
