import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heliocast.errors import ConfigError, DataError
from heliocast.features import (
    LagSpec,
    MonthlyHourlyStats,
    NocturnalConfig,
    assemble,
    assemble_instant,
    compute_kb,
    denormalize,
    fit_feature_stats,
    fit_monthly_hourly,
    mask_nocturnal,
    normalize,
    normalize_features,
    wind_to_units,
)
from heliocast.sun import SunTimes
from heliocast.timeseries import MODEL_VARIABLES, MinuteSeries, SiteDataset, from_minutes


@pytest.mark.parametrize("ig,id_,kb", [(100.0, 25.0, 0.75), (100.0, 100.0, 0.0), (50.0, 0.0, 1.0),
                                       (0.0, 0.0, 0.0), (-3.0, 1.0, 0.0), (10.0, 12.0, 0.0)])
def test_kb_examples(ig, id_, kb):
    assert compute_kb(ig, id_) == pytest.approx(kb)


@given(st.floats(0.1, 1500), st.floats(0, 1))
def test_kb_inverts_diffuse_fraction(ig, frac):
    assert compute_kb(ig, frac * ig) == pytest.approx(1 - frac, abs=1e-12)


@given(st.floats(-720, 720))
def test_wind_units_on_circle(wd):
    ux, uy = wind_to_units(wd)
    assert ux * ux + uy * uy == pytest.approx(1.0)
    back = np.degrees(np.arctan2(uy, ux))
    diff = (back - wd + 180) % 360 - 180
    assert abs(diff) < 1e-7


def test_wind_examples():
    assert np.allclose(wind_to_units(0.0), (1.0, 0.0))
    assert np.allclose(wind_to_units(90.0), (0.0, 1.0), atol=1e-15)


def test_nocturnal_mask_statistics(small_site):
    ds, st_ = small_site
    night = ds.flags["night"]
    kb = ds.values["kb"][night]
    assert night.sum() > 10_000
    assert abs(kb.mean() - 0.5) < 0.001
    assert abs(kb.std() - 0.01) < 0.001
    assert not ds.missing["kb"][night].any()


def test_nocturnal_mask_is_seeded(small_sites):
    ds = small_sites[0]
    st_ = SunTimes.computed(ds.start, ds.end, ds.latitude, ds.longitude, ds.utc_offset)
    kb = MinuteSeries("kb", ds.start, np.zeros(ds.length))
    a = mask_nocturnal(kb, st_, NocturnalConfig(rng_seed=3))
    b = mask_nocturnal(kb, st_, NocturnalConfig(rng_seed=3))
    c = mask_nocturnal(kb, st_, NocturnalConfig(rng_seed=4))
    assert a == b and a != c
    z = mask_nocturnal(kb, st_, NocturnalConfig(sigma=0.0))
    night = st_.is_night(kb.timestamps)
    assert np.all(z.values[night] == 0.5) and np.all(z.values[~night] == 0.0)


def test_nocturnal_config_validation():
    with pytest.raises(ConfigError):
        NocturnalConfig(sigma=-1)
    with pytest.raises(ConfigError):
        NocturnalConfig(sun_source="table_file")


def test_derive_variables_flags(small_site):
    ds, _ = small_site
    assert set(MODEL_VARIABLES) <= set(ds.values)
    low = ds.flags["low_irradiance"]
    assert not (low & ds.flags["night"]).any()
    assert np.all(ds.values["I_G"][low] < 5.0)


def brute_force_stats(ts, values, utc_offset):
    cells = {}
    for t, v in zip(ts, values):
        d = from_minutes(int(t), utc_offset)
        cells.setdefault((d.month - 1, d.hour), []).append(v)
    return {k: (np.mean(v), np.std(v), len(v)) for k, v in cells.items()}


def test_monthly_hourly_matches_brute_force(rng):
    start = 23_000_000
    n = 3 * 24 * 60 * 40
    vals = rng.normal(size=n) + np.sin(np.arange(n) / 600)
    s = MinuteSeries("Text", start, vals)
    stats = fit_monthly_hourly(s, utc_offset=240)
    ref = brute_force_stats(s.timestamps, vals, 240)
    assert int(stats.count.sum()) == n
    for (m, h), (mean, std, cnt) in ref.items():
        assert stats.count[m, h] == cnt
        assert stats.mean[m, h] == pytest.approx(mean, abs=1e-12)
        assert stats.std[m, h] == pytest.approx(std, abs=1e-12)


def test_monthly_hourly_ignores_excluded_missing_and_out_of_range():
    n = 1440
    vals = np.ones(n)
    vals[100:200] = 1000.0
    miss = np.zeros(n, bool)
    miss[300:400] = True
    vals[300:400] = -1000.0
    s = MinuteSeries("Text", 0, vals, miss)
    excl = np.zeros(n, bool)
    excl[100:200] = True
    stats = fit_monthly_hourly(s, (0, 1200), excl)
    assert np.all(stats.mean[stats.count > 0] == 1.0)
    assert stats.count.sum() == 1201 - 100 - 100
    with pytest.raises(DataError):
        fit_monthly_hourly(s, (0, 10), np.ones(n, bool))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_normalization_standardizes_training_cells(seed):
    rng = np.random.default_rng(seed)
    n = 24 * 60 * 5
    vals = rng.normal(3.0, 2.0, n)
    s = MinuteSeries("Text", 0, vals)
    stats = fit_monthly_hourly(s)
    z = normalize(vals, s.timestamps, stats)
    cell = (s.timestamps // 60) % 24
    for h in range(24):
        assert abs(z[cell == h].mean()) < 1e-9
        assert z[cell == h].std() == pytest.approx(1.0, abs=1e-9)
    assert np.allclose(denormalize(z, s.timestamps, stats), vals, atol=1e-12)


def test_degenerate_cells_use_unit_std():
    vals = np.full(1440, 7.0)
    s = MinuteSeries("Text", 0, vals)
    stats = fit_monthly_hourly(s)
    assert np.all(stats.effective_std == 1.0)
    assert np.all(normalize(vals, s.timestamps, stats) == 0.0)


def test_empty_cells_fall_back_to_hour_stats(rng):
    # training data only in January; a March timestamp uses pooled hour stats
    vals = rng.normal(5.0, 2.0, 1440 * 3)
    s = MinuteSeries("Text", 0, vals)
    stats = fit_monthly_hourly(s)
    march = 60 * 1440 + 600
    hour = 10
    got = normalize([5.0], [march], stats)[0]
    assert got == pytest.approx((5.0 - stats.hour_mean[hour]) / stats.hour_std[hour])
    assert stats.empty[2, hour]
    back = MonthlyHourlyStats.from_dict(stats.to_dict())
    assert np.array_equal(back.effective_mean, stats.effective_mean)
    assert np.array_equal(back.effective_std, stats.effective_std)


def test_table3_dimensions():
    spec = LagSpec.table3()
    assert spec.dimension == 70
    layout = spec.layout()
    assert len(layout) == 70
    assert layout[0].label == "kb[t-1]"
    kb = [s for s in layout if s.variable == "kb"]
    assert [s.minute_lag for s in kb] == [1, 2, 61, 121, 1381]
    assert [s.label for s in kb] == ["kb[t-1]", "kb[t-2]", "kb[T-2]", "kb[T-3]", "kb[T-24]"]
    assert LagSpec.instant().dimension == 7


def test_lagspec_validation(tmp_path):
    with pytest.raises(ConfigError):
        LagSpec({"kb": {"minute_lags": [0]}})
    with pytest.raises(ConfigError):
        LagSpec({"kb": {"hour_lags": [1]}})
    with pytest.raises(ConfigError):
        LagSpec.from_json([1, 2])
    spec = LagSpec.table3()
    spec.save(tmp_path / "l.json")
    assert LagSpec.load(tmp_path / "l.json") == spec


def test_lagspec_merges_colliding_slots():
    spec = LagSpec({"kb": {"minute_lags": [61], "hour_lags": [2]}})
    assert len(spec.layout()) == 1


def test_instant_rows_brute_force(small_site):
    ds, _ = small_site
    data = assemble_instant(ds)
    assert data.dimension == 7
    rng = np.random.default_rng(0)
    for r in rng.choice(len(data), 200, replace=False):
        t = data.target_ts[r]
        present = t - 60
        i = present - ds.start
        assert data.y[r] == ds.values["kb"][t - ds.start]
        for c, v in enumerate(MODEL_VARIABLES):
            assert data.X[r, c] == ds.values[v][i]
        assert not ds.flags["night"][t - ds.start]


def test_arima_rows_read_the_right_slots(small_site):
    ds, _ = small_site
    data = assemble(ds, LagSpec.table3(), stride=7)
    assert data.dimension == 70
    rng = np.random.default_rng(1)
    for r in rng.choice(len(data), 50, replace=False):
        t = data.target_ts[r]
        for c, slot in enumerate(data.layout):
            # k-th minute lag of present slot t-60 reads t-60+1-k
            assert data.X[r, c] == ds.values[slot.variable][t - 60 + 1 - slot.minute_lag - ds.start]


def test_rows_never_touch_excluded_slots(small_site):
    ds, _ = small_site
    ds = ds.copy()
    ds.excluded[5000:9000] = True
    ds.excluded[30000:30001] = True
    data = assemble(ds, LagSpec.table3(), stride=3, drop_nocturnal=False)
    deepest = max(s.minute_lag for s in data.layout)
    bad = np.flatnonzero(ds.excluded) + ds.start
    for t in data.target_ts:
        lo = t - 60 + 1 - deepest
        assert not np.any((bad >= lo) & (bad <= t))
    assert len(data) > 0


def test_stride_and_night_filter(small_site):
    ds, _ = small_site
    full = assemble_instant(ds, drop_nocturnal=False)
    strided = assemble_instant(ds, drop_nocturnal=False, stride=5)
    mod = (full.target_ts + ds.utc_offset) % 1440 % 5
    assert np.array_equal(strided.target_ts, full.target_ts[mod == 0])
    day = assemble_instant(ds)
    assert len(day) < len(full)


def test_assemble_rejects_unknown_variable(small_site):
    ds, _ = small_site
    with pytest.raises(ConfigError):
        assemble(ds, LagSpec({"Nope": {"minute_lags": [1]}}))
    no_wind = ds.copy()
    del no_wind.values["UnitX"]
    with pytest.raises(ConfigError):
        assemble(no_wind, LagSpec.instant())


def test_assemble_short_dataset_empty(small_site):
    ds, _ = small_site
    short = SiteDataset(ds.site_name, ds.latitude, ds.longitude, ds.start,
                        {k: v[:100] for k, v in ds.values.items()},
                        {k: v[:100] for k, v in ds.missing.items()}, utc_offset=ds.utc_offset)
    assert len(assemble(short, LagSpec.table3())) == 0


def test_normalize_features_uses_slot_times(small_site):
    ds, _ = small_site
    data = assemble(ds, LagSpec.table3(), stride=30)
    stats = fit_feature_stats(ds, MODEL_VARIABLES, (ds.start, ds.end))
    Z = normalize_features(data, stats)
    for c in (0, 4, 69):
        slot = data.layout[c]
        ts = data.target_ts - 60 + 1 - slot.minute_lag
        assert np.allclose(Z[:, c], normalize(data.X[:, c], ts, stats[slot.variable]))


def test_supervised_csv(tmp_path, small_site):
    ds, _ = small_site
    data = assemble_instant(ds, stride=60)
    data.to_csv(tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0].startswith("target_timestamp,kb[t-1]")
    assert len(lines) == len(data) + 1
    first = from_minutes(int(data.target_ts[0]), data.utc_offset)
    assert lines[1].startswith(first.strftime("%Y-%m-%d %H:%M:%S"))
    assert first.minute == 0
