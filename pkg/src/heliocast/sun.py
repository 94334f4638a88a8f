"""Sunrise/sunset times and the day/night partition of the minute grid.

The computation follows the NOAA solar calculator equations (solar
declination and equation of time at local noon, hour angle for a
90.833 degree zenith). One evaluation per day, accurate to about a minute.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

import numpy as np

from .errors import ConfigError, UnsupportedLatitudeError
from .timeseries import EPOCH, local_day

ZENITH = 90.833


def _solar_terms(jd: np.ndarray):
    jc = (jd - 2451545.0) / 36525.0
    mean_long = (280.46646 + jc * (36000.76983 + jc * 0.0003032)) % 360.0
    mean_anom = 357.52911 + jc * (35999.05029 - 0.0001537 * jc)
    ecc = 0.016708634 - jc * (0.000042037 + 0.0000001267 * jc)
    m = np.radians(mean_anom)
    center = (np.sin(m) * (1.914602 - jc * (0.004817 + 0.000014 * jc))
              + np.sin(2 * m) * (0.019993 - 0.000101 * jc) + np.sin(3 * m) * 0.000289)
    true_long = mean_long + center
    omega = np.radians(125.04 - 1934.136 * jc)
    app_long = true_long - 0.00569 - 0.00478 * np.sin(omega)
    obliq0 = 23 + (26 + (21.448 - jc * (46.815 + jc * (0.00059 - jc * 0.001813))) / 60) / 60
    obliq = np.radians(obliq0 + 0.00256 * np.cos(omega))
    decl = np.arcsin(np.sin(obliq) * np.sin(np.radians(app_long)))
    y = np.tan(obliq / 2) ** 2
    l0 = np.radians(mean_long)
    eqtime = 4 * np.degrees(y * np.sin(2 * l0) - 2 * ecc * np.sin(m)
                            + 4 * ecc * y * np.sin(m) * np.cos(2 * l0)
                            - 0.5 * y * y * np.sin(4 * l0) - 1.25 * ecc * ecc * np.sin(2 * m))
    return decl, eqtime


def sunrise_sunset_days(days, latitude: float, longitude: float, utc_offset: int = 0):
    """Rise and set as UTC minute timestamps for local dates given as epoch days."""
    days = np.asarray(days, dtype=np.int64)
    if not abs(latitude) < 66.0:
        raise UnsupportedLatitudeError(f"latitude {latitude} outside (-66, 66)")
    jd = days + 2440587.5 + (720 - utc_offset) / 1440.0
    decl, eqtime = _solar_terms(jd)
    lat = np.radians(latitude)
    cos_ha = np.cos(np.radians(ZENITH)) / (np.cos(lat) * np.cos(decl)) - np.tan(lat) * np.tan(decl)
    if np.any(np.abs(cos_ha) > 1):
        raise UnsupportedLatitudeError(f"polar day or night at latitude {latitude}")
    ha = np.degrees(np.arccos(cos_ha))
    noon = days * 1440 + (720 - 4 * longitude - eqtime)
    expected = days * 1440 + 720 - utc_offset
    noon = noon + 1440 * np.round((expected - noon) / 1440)
    rise = np.round(noon - 4 * ha).astype(np.int64)
    sset = np.round(noon + 4 * ha).astype(np.int64)
    return rise, sset


def sunrise_sunset(date, latitude: float, longitude: float, utc_offset: int = 0):
    """``(rise, set)`` UTC minute timestamps for one local calendar date."""
    if isinstance(date, str):
        date = datetime.strptime(date, "%Y-%m-%d")
    day = (datetime(date.year, date.month, date.day) - EPOCH).days
    rise, sset = sunrise_sunset_days([day], latitude, longitude, utc_offset)
    return int(rise[0]), int(sset[0])


@dataclass
class SunTimes:
    """Per-local-day rise/set table covering ``first_day`` .. ``first_day + len - 1``."""

    first_day: int
    rise: np.ndarray
    set: np.ndarray
    utc_offset: int = 0

    @classmethod
    def computed(cls, first_ts: int, last_ts: int, latitude: float, longitude: float,
                 utc_offset: int = 0) -> "SunTimes":
        d0, d1 = int(local_day(first_ts, utc_offset)), int(local_day(last_ts, utc_offset))
        days = np.arange(d0, d1 + 1)
        rise, sset = sunrise_sunset_days(days, latitude, longitude, utc_offset)
        return cls(d0, rise, sset, utc_offset)

    @classmethod
    def from_table(cls, path, utc_offset: int = 0) -> "SunTimes":
        """Read ``YYYY-MM-DD,HH:MM,HH:MM`` lines of local rise/set times."""
        entries = {}
        with open(Path(path), newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), 1):
                if not row or row[0].startswith("#") or row[0].strip().lower() == "date":
                    continue
                try:
                    day = (datetime.strptime(row[0].strip(), "%Y-%m-%d") - EPOCH).days
                    r, s = (datetime.strptime(x.strip(), "%H:%M") for x in row[1:3])
                except (ValueError, IndexError):
                    raise ConfigError(f"{path}:{lineno}: bad sun table row {row!r}") from None
                entries[day] = (day * 1440 + r.hour * 60 + r.minute - utc_offset,
                                day * 1440 + s.hour * 60 + s.minute - utc_offset)
        if not entries:
            raise ConfigError(f"{path}: empty sun table")
        d0, d1 = min(entries), max(entries)
        gaps = [d for d in range(d0, d1 + 1) if d not in entries]
        if gaps:
            raise ConfigError(f"{path}: no sun times for {len(gaps)} dates inside the table")
        rise = np.array([entries[d][0] for d in range(d0, d1 + 1)], dtype=np.int64)
        sset = np.array([entries[d][1] for d in range(d0, d1 + 1)], dtype=np.int64)
        return cls(d0, rise, sset, utc_offset)

    def _day_index(self, ts) -> np.ndarray:
        idx = local_day(ts, self.utc_offset) - self.first_day
        if idx.size and (idx.min() < 0 or idx.max() >= len(self.rise)):
            raise ConfigError("sun times do not cover every requested date")
        return idx

    def is_night(self, ts) -> np.ndarray:
        """Night is ``[sunset, next sunrise)``: a slot exactly at sunrise is daytime."""
        ts = np.asarray(ts, dtype=np.int64)
        idx = self._day_index(ts)
        return (ts < self.rise[idx]) | (ts >= self.set[idx])
