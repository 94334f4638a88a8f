"""Synthetic multi-site weather with known ground truth.

Each site gets the seven raw variables on a one-minute grid. The target
ratio follows

    kb(s) = clip(sum_L w_L * kb(s - L) + (1 - sum_L w_L) * c(s) + e(s), 0, 1)

where ``c`` is a cloud level and ``L`` runs over the injected lags (by
default one day). The cloud level blends two two-state (clear/cloudy)
Markov chains, one shared by all sites and one local, with weights ``rho``
and ``1 - rho``. Global
irradiance is a daylight bell scaled by ``0.3 + 0.7 kb`` and the diffuse
part is ``(1 - kb) I_G``, so the ratio is recoverable exactly by day.

Every other random stream mixes a shared innovation with a site-local one
as ``sqrt(rho) * shared + sqrt(1 - rho) * local``; ``rho`` is the coupling.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime

import numpy as np
from scipy.signal import lfilter

from .errors import ConfigError
from .presets import UTC_OFFSET_REUNION, site_coordinates
from .sun import sunrise_sunset_days
from .timeseries import RAW_VARIABLES, SiteDataset, local_day, local_minutes, to_minutes


@dataclass
class SynthConfig:
    n_sites: int = 5
    days: int = 90
    start: str = "2014-11-15"
    seed: int = 0
    sites: list | None = None
    coordinates: list | None = None
    utc_offset: int = UTC_OFFSET_REUNION
    coupling: float = 0.6
    # two-state cloud chain: per-minute probabilities of staying in a state
    stay_clear: float = 0.995
    stay_cloudy: float = 0.99
    clear_level: float = 0.8
    cloudy_level: float = 0.2
    cloud_jitter: float = 0.08
    kb_noise: float = 0.02
    kb_lags: dict = field(default_factory=lambda: {1440: 0.5})
    peak_irradiance: float = 1000.0
    # per-variable AR(1) coefficient and innovation scale of the noise part
    ar: dict = field(default_factory=lambda: {
        "Patm": (0.999, 0.03), "RH": (0.998, 0.4), "Text": (0.998, 0.05),
        "WD": (0.999, 1.0), "WS_Mean": (0.99, 0.05), "cloud": (0.995, 1.0)})
    # (amplitude, hour of peak) of the daily cycle
    diurnal: dict = field(default_factory=lambda: {
        "Patm": (1.0, 10.0), "RH": (12.0, 4.0), "Text": (4.0, 14.0),
        "WD": (25.0, 14.0), "WS_Mean": (1.5, 13.0)})
    seasonal_amplitude: float = 1.0

    def __post_init__(self):
        if self.n_sites < 1 or self.days < 1:
            raise ConfigError("n_sites and days must be >= 1")
        for name in ("coupling", "stay_clear", "stay_cloudy", "clear_level", "cloudy_level"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"{name} must be in [0, 1]")
        for var, (phi, scale) in self.ar.items():
            if not abs(phi) < 1 or scale < 0:
                raise ConfigError(f"AR noise of {var} must be stationary with scale >= 0")
        self.kb_lags = {int(k): float(w) for k, w in self.kb_lags.items()}
        if any(k < 1 for k in self.kb_lags) or any(w < 0 for w in self.kb_lags.values()):
            raise ConfigError("kb lags must be >= 1 with non-negative weights")
        if sum(self.kb_lags.values()) >= 1:
            raise ConfigError("kb lag weights must sum below 1")
        if self.kb_noise < 0 or self.cloud_jitter < 0:
            raise ConfigError("noise scales must be >= 0")
        try:
            datetime.strptime(self.start, "%Y-%m-%d")
        except ValueError:
            raise ConfigError(f"start {self.start!r} is not YYYY-MM-DD") from None
        if self.sites is not None and len(self.sites) != self.n_sites:
            raise ConfigError("sites must list n_sites names")
        if self.coordinates is not None and len(self.coordinates) != self.n_sites:
            raise ConfigError("coordinates must list n_sites (lat, lon) pairs")

    def site_names(self) -> list:
        if self.sites is not None:
            return list(self.sites)
        known = list(site_coordinates())
        return [known[i] if i < len(known) else f"Site {i + 1}" for i in range(self.n_sites)]

    def site_coordinates(self) -> list:
        if self.coordinates is not None:
            return [tuple(c) for c in self.coordinates]
        known = site_coordinates()
        fallback = list(known.values())
        return [known.get(name, fallback[i % len(fallback)])
                for i, name in enumerate(self.site_names())]


def _mixed_normals(shared: np.random.Generator, local: np.random.Generator, n: int, rho: float):
    return np.sqrt(rho) * shared.standard_normal(n) + np.sqrt(1 - rho) * local.standard_normal(n)


def _ar1(e: np.ndarray, phi: float, scale: float) -> np.ndarray:
    # start from the stationary distribution so there is no burn-in transient
    e = e.copy()
    e[0] /= np.sqrt(1 - phi * phi)
    return scale * lfilter([1.0], [1.0, -phi], e)


def _cloud_chain(u: np.ndarray, stay_clear: float, stay_cloudy: float) -> np.ndarray:
    """1 for clear, 0 for cloudy; a uniform above the stay probability switches state."""
    state = np.empty(len(u), dtype=np.int8)
    s = 1 if u[0] < 0.5 else 0
    for i, x in enumerate(u.tolist()):
        if x > (stay_clear if s else stay_cloudy):
            s = 1 - s
        state[i] = s
    return state


def _lagged_kb(drive: np.ndarray, lags: dict) -> np.ndarray:
    """Solve the lag recursion in chunks no longer than the shortest lag."""
    kb = np.clip(drive, 0.0, 1.0)
    if not lags:
        return kb
    step = min(lags)
    total = sum(lags.values())
    kb = np.empty_like(drive)
    for a in range(0, len(drive), step):
        b = min(a + step, len(drive))
        idx = np.arange(a, b)
        acc = (1 - total) * drive[a:b]
        for lag, w in lags.items():
            src = idx - lag
            # before the recursion has history, the lagged term falls back to the drive
            acc += w * np.where(src >= 0, kb[np.maximum(src, 0)], drive[a:b])
        kb[a:b] = np.clip(acc, 0.0, 1.0)
    return kb


def _daily_cycle(hours: np.ndarray, amplitude: float, peak: float) -> np.ndarray:
    return amplitude * np.cos(2 * np.pi * (hours - peak) / 24.0)


def generate(config: SynthConfig | None = None, return_truth: bool = False):
    """Site datasets for ``config``; optionally also the per-site true kb arrays."""
    cfg = config or SynthConfig()
    rho = cfg.coupling
    n = cfg.days * 1440
    start = to_minutes(datetime.strptime(cfg.start, "%Y-%m-%d"), cfg.utc_offset)
    ts = start + np.arange(n, dtype=np.int64)
    loc = local_minutes(ts, cfg.utc_offset)
    hours = (loc % 1440) / 60.0
    doy = (loc // 1440) % 365
    season = np.cos(2 * np.pi * (doy - 15) / 365.25)  # austral summer peaks mid-January
    days = local_day(ts, cfg.utc_offset)
    day_index = days - days[0]

    root = np.random.SeedSequence(cfg.seed)
    shared_seq, *site_seqs = root.spawn(cfg.n_sites + 1)
    shared_streams = shared_seq.spawn(8)
    names, coords = cfg.site_names(), cfg.site_coordinates()
    datasets, truth = [], []
    for k in range(cfg.n_sites):
        # fresh generators on the same seeds: every site sees the same shared draws
        shared = [np.random.default_rng(s) for s in shared_streams]
        local = [np.random.default_rng(s) for s in site_seqs[k].spawn(8)]
        lat, lon = coords[k]

        phi_c, _ = cfg.ar["cloud"]
        level = 0.0
        for weight, gen in ((rho, shared[0]), (1 - rho, local[0])):
            state = _cloud_chain(gen.random(n), cfg.stay_clear, cfg.stay_cloudy)
            level = level + weight * np.where(state == 1, cfg.clear_level, cfg.cloudy_level)
        jitter = _ar1(_mixed_normals(shared[1], local[1], n, rho), phi_c,
                      cfg.cloud_jitter * np.sqrt(1 - phi_c ** 2))
        noise = cfg.kb_noise * _mixed_normals(shared[2], local[2], n, rho)
        kb = _lagged_kb(level + jitter + noise, cfg.kb_lags)

        rise, sset = sunrise_sunset_days(np.unique(days), lat, lon, cfg.utc_offset)
        r, s = rise[day_index], sset[day_index]
        day = (ts >= r) & (ts < s)
        bell = np.where(day, np.sin(np.pi * (ts - r + 0.5) / (s - r)), 0.0)
        i_g = cfg.peak_irradiance * bell * (0.3 + 0.7 * kb)
        i_d = (1.0 - kb) * i_g

        values = {"I_D": i_d, "I_G": i_g}
        base = {"Patm": 1013.0, "RH": 72.0, "Text": 24.0}
        seasonal = {"Patm": -2.0, "RH": 5.0, "Text": 3.0}
        for j, var in enumerate(("Patm", "RH", "Text"), start=3):
            phi, scale = cfg.ar[var]
            amp, peak = cfg.diurnal[var]
            values[var] = (base[var] + cfg.seasonal_amplitude * seasonal[var] * season
                           + _daily_cycle(hours, amp, peak)
                           + _ar1(_mixed_normals(shared[j], local[j], n, rho), phi, scale))
        values["RH"] = np.clip(values["RH"], 0.0, 100.0)
        phi, scale = cfg.ar["WD"]
        amp, peak = cfg.diurnal["WD"]
        values["WD"] = np.mod(110.0 + _daily_cycle(hours, amp, peak)
                              + _ar1(_mixed_normals(shared[6], local[6], n, rho), phi, scale), 360.0)
        phi, scale = cfg.ar["WS_Mean"]
        amp, peak = cfg.diurnal["WS_Mean"]
        values["WS_Mean"] = np.exp(np.log(4.0) + 0.1 * _daily_cycle(hours, amp, peak)
                                   + _ar1(_mixed_normals(shared[7], local[7], n, rho), phi, scale))

        values = {v: values[v] for v in RAW_VARIABLES}
        missing = {v: np.zeros(n, dtype=bool) for v in RAW_VARIABLES}
        datasets.append(SiteDataset(names[k], lat, lon, start, values, missing,
                                    utc_offset=cfg.utc_offset))
        truth.append(kb)
    return (datasets, truth) if return_truth else datasets


# --- gap injection --------------------------------------------------------------------

@dataclass
class GapConfig:
    """Inclusive UTC-minute ranges of deleted rows and of deleted cells per variable."""

    timestamp_ranges: list = field(default_factory=list)
    value_ranges: dict = field(default_factory=dict)


@dataclass
class GapTruth:
    config: GapConfig
    original: SiteDataset


def inject_gaps(dataset: SiteDataset, gaps: GapConfig):
    """Delete rows and cells; returns the damaged copy and the ground truth."""
    ds = dataset.copy()
    for a, b in gaps.timestamp_ranges:
        sl = ds.index_range(a, b)
        ds.present[sl] = False
        for var in ds.values:
            ds.values[var][sl] = 0.0
            ds.missing[var][sl] = True
    for var, ranges in gaps.value_ranges.items():
        for a, b in ranges:
            sl = ds.index_range(a, b)
            ds.values[var][sl] = 0.0
            ds.missing[var][sl] = True
    return ds, GapTruth(gaps, dataset)


def random_gap_config(dataset: SiteDataset, n_row_gaps: int = 3, n_value_gaps: int = 5,
                      max_len: int = 40, seed: int = 0, variables=RAW_VARIABLES) -> GapConfig:
    """Random interior gaps that neither touch each other nor the series ends.

    Such gaps are exactly what a maximal-run detector should report back.
    """
    rng = np.random.default_rng(seed)
    n = dataset.length
    taken = np.zeros(n, dtype=bool)
    taken[:2] = taken[-2:] = True

    def draw():
        for _ in range(1000):
            length = int(rng.integers(1, max_len + 1))
            a = int(rng.integers(2, n - length - 2))
            if not taken[a - 1 : a + length + 1].any():
                taken[a : a + length] = True
                return dataset.start + a, dataset.start + a + length - 1
        raise ValueError("series too short for the requested gaps")

    rows = sorted(draw() for _ in range(n_row_gaps))
    values = {}
    for _ in range(n_value_gaps):
        values.setdefault(str(rng.choice(list(variables))), []).append(draw())
    return GapConfig(rows, {k: sorted(v) for k, v in sorted(values.items())})
