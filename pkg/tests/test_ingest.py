from datetime import datetime

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heliocast.errors import ConfigError, ParseError, UnrecoverableVariableError, ValidationError
from heliocast.ingest import (
    CsvSchema,
    ExclusionConfig,
    apply_exclusions,
    detect_gaps,
    fill_missing,
    interpolate_missing,
    parse_site_csv,
    runs,
    table2_exclusions,
    write_site_csv,
)
from heliocast.timeseries import RAW_VARIABLES, SiteDataset, to_minutes

HEADER = "Date," + ",".join(RAW_VARIABLES)


def _row(stamp, vals=None):
    vals = vals if vals is not None else [str(float(i + 1)) for i in range(len(RAW_VARIABLES))]
    return stamp + "," + ",".join(vals)


def _write(tmp_path, lines, name="site.csv"):
    p = tmp_path / name
    p.write_text("\n".join(lines) + "\n")
    return p


def test_parse_basic(tmp_path):
    p = _write(tmp_path, [HEADER, _row("2014-01-01 00:00:00"), _row("2014-01-01 00:01:00"),
                          _row("2014-01-01 00:03:00")])
    ds = parse_site_csv(p, utc_offset=240)
    assert ds.start == to_minutes(datetime(2014, 1, 1), 240)
    assert ds.length == 4
    assert ds.present.tolist() == [True, True, False, True]
    assert ds.values["I_D"][0] == 1.0 and ds.values["WS_Mean"][3] == 7.0
    assert ds.site_name == "site"


def test_parse_empty_cells_are_missing(tmp_path):
    vals = ["1", "", "3", "NA", "5", "6", "7"]
    ds = parse_site_csv(_write(tmp_path, [HEADER, _row("2014-01-01 00:00:00", vals)]))
    assert ds.missing["I_G"][0] and ds.missing["RH"][0]
    assert not ds.missing["Patm"][0]


def test_parse_unsorted_rows(tmp_path):
    p = _write(tmp_path, [HEADER, _row("2014-01-01 00:02:00"), _row("2014-01-01 00:00:00")])
    ds = parse_site_csv(p)
    assert ds.present.tolist() == [True, False, True]


def test_parse_alias_column(tmp_path):
    header = HEADER.replace("WS_Mean", "WS")
    ds = parse_site_csv(_write(tmp_path, [header, _row("2014-01-01 00:00:00")]))
    assert ds.values["WS_Mean"][0] == 7.0


def test_parse_custom_schema(tmp_path):
    header = "when;" + ";".join(f"c{i}" for i in range(len(RAW_VARIABLES)))
    line = "01/01/2014 00:00;" + ";".join(str(i) for i in range(len(RAW_VARIABLES)))
    schema = CsvSchema(timestamp_column="when", delimiter=";", timestamp_format="%d/%m/%Y %H:%M",
                       columns={v: f"c{i}" for i, v in enumerate(RAW_VARIABLES)})
    ds = parse_site_csv(_write(tmp_path, [header, line]), schema)
    assert ds.values["WS_Mean"][0] == 6.0


def test_parse_empty_file(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("")
    with pytest.raises(ParseError):
        parse_site_csv(p)


def test_parse_missing_column(tmp_path):
    header = HEADER.replace(",RH", "")
    with pytest.raises(ParseError) as exc:
        parse_site_csv(_write(tmp_path, [header, "2014-01-01 00:00:00,1,2,3,4,5,6"]))
    assert exc.value.line == 1 and "RH" in str(exc.value)


def test_parse_bad_value_reports_line(tmp_path):
    bad = ["1", "2", "x", "4", "5", "6", "7"]
    p = _write(tmp_path, [HEADER, _row("2014-01-01 00:00:00"), "", _row("2014-01-01 00:01:00", bad)])
    with pytest.raises(ParseError) as exc:
        parse_site_csv(p)
    assert exc.value.line == 4


def test_parse_bad_timestamp_reports_line(tmp_path):
    p = _write(tmp_path, [HEADER, _row("2014-01-01 00:00:00"), _row("2014-13-01 00:00:00")])
    with pytest.raises(ParseError) as exc:
        parse_site_csv(p)
    assert exc.value.line == 3


def test_parse_nonzero_seconds(tmp_path):
    p = _write(tmp_path, [HEADER, _row("2014-01-01 00:00:00"), _row("2014-01-01 00:01:30")])
    with pytest.raises(ValidationError) as exc:
        parse_site_csv(p)
    assert exc.value.line == 3


def test_parse_duplicate(tmp_path):
    p = _write(tmp_path, [HEADER, _row("2014-01-01 00:00:00"), _row("2014-01-01 00:01:00"),
                          _row("2014-01-01 00:00:00")])
    with pytest.raises(ValidationError) as exc:
        parse_site_csv(p)
    assert exc.value.line == 4


def test_write_parse_round_trip(tmp_path, small_sites):
    ds = small_sites[0]
    p = tmp_path / "rt.csv"
    write_site_csv(ds, p)
    back = parse_site_csv(p, site_name=ds.site_name, utc_offset=ds.utc_offset)
    assert back.start == ds.start and back.length == ds.length
    for v in RAW_VARIABLES:
        assert np.array_equal(back.values[v], ds.values[v])


@pytest.mark.parametrize("mask,expected", [
    ([], []),
    ([0, 0], []),
    ([1], [(0, 0)]),
    ([1, 1, 0, 1], [(0, 1), (3, 3)]),
    ([0, 1, 1, 1], [(1, 3)]),
])
def test_runs_examples(mask, expected):
    assert runs(np.array(mask, dtype=bool)) == expected


@given(st.lists(st.booleans(), max_size=200))
def test_runs_cover_mask_exactly(bits):
    mask = np.array(bits, dtype=bool)
    rebuilt = np.zeros(len(mask), dtype=bool)
    prev_end = -2
    for a, b in runs(mask):
        assert a <= b and a > prev_end + 1
        rebuilt[a : b + 1] = True
        prev_end = b
    assert np.array_equal(rebuilt, mask)


def _dataset(n=200, start=0):
    vals = {v: np.linspace(0, 1, n) + i for i, v in enumerate(RAW_VARIABLES)}
    vals["WD"] = np.full(n, 90.0)
    return SiteDataset("S", 0.0, 0.0, start, vals, {v: np.zeros(n, bool) for v in RAW_VARIABLES})


def test_detect_gaps_reports_ranges_and_counts():
    ds = _dataset()
    ds.present[10:15] = False
    for v in RAW_VARIABLES:
        ds.missing[v][10:15] = True
    ds.missing["RH"][50:53] = True
    rep = detect_gaps(ds, max_gap_minutes=4)
    assert rep.missing_timestamp_ranges == [(10, 14)]
    assert rep.missing_value_ranges["RH"] == [(50, 52)]
    assert rep.missing_value_ranges["Text"] == []
    assert rep.counts["missing_timestamps"] == 5
    assert rep.counts["missing_values.RH"] == 3
    assert ("RH", 10, 14) in rep.long_gaps
    assert not rep.empty
    assert detect_gaps(_dataset()).empty


def test_detect_gaps_to_json():
    ds = _dataset()
    ds.present[0:2] = False
    js = detect_gaps(ds).to_json(0)
    assert js["missing_timestamp_ranges"] == [["1970-01-01 00:00:00", "1970-01-01 00:01:00"]]


def test_interpolate_linear_exact():
    x = 3.0 + 0.25 * np.arange(50)
    miss = np.zeros(50, bool)
    miss[5:20] = True
    miss[30] = True
    out = interpolate_missing(np.where(miss, 0.0, x), miss)
    assert np.max(np.abs(out - x)) < 1e-12


def test_interpolate_extends_ends():
    miss = np.array([1, 0, 0, 1], bool)
    assert interpolate_missing(np.array([0.0, 2.0, 4.0, 0.0]), miss).tolist() == [2.0, 2.0, 4.0, 4.0]


def test_interpolate_all_missing():
    with pytest.raises(UnrecoverableVariableError):
        interpolate_missing(np.zeros(3), np.ones(3, bool))


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.integers(1, 60), st.integers(2, 100))
def test_fill_restores_linear_signal(a, b, length, pos):
    n = 200
    x = a + b * np.arange(n) / n
    ds = _dataset(n)
    ds.values["Text"] = x.copy()
    ds.missing["Text"][pos : pos + length] = True
    ds.values["Text"][pos : pos + length] = 0.0
    out = fill_missing(ds)
    assert np.max(np.abs(out.values["Text"] - x)) < 1e-12
    assert not out.missing["Text"].any() and out.present.all()


def test_fill_wind_through_components():
    ds = _dataset(5)
    ds.values["WD"] = np.array([350.0, 0.0, 0.0, 0.0, 10.0])
    ds.missing["WD"][1:4] = True
    out = fill_missing(ds)
    wd = out.values["WD"]
    # interpolating across north must stay near north, not swing through 180
    assert np.all(np.minimum(wd, 360 - wd) <= 10.0 + 1e-9)
    assert np.allclose(np.hypot(out.values["UnitX"], out.values["UnitY"]), 1.0)


def test_fill_antipodal_endpoints_hold_direction():
    ds = _dataset(3)
    ds.values["WD"] = np.array([0.0, 0.0, 180.0])
    ds.missing["WD"][1] = True
    out = fill_missing(ds)
    assert np.allclose(np.hypot(out.values["UnitX"], out.values["UnitY"]), 1.0)


def test_fill_unrecoverable_variable():
    ds = _dataset(10)
    ds.missing["RH"][:] = True
    with pytest.raises(UnrecoverableVariableError):
        fill_missing(ds)


def test_exclusion_config_validation():
    with pytest.raises(ConfigError):
        ExclusionConfig({"A": [["2014-01-05", "2014-01-01"]]})
    with pytest.raises(ConfigError):
        ExclusionConfig({"A": [["2014-01-01", "2014-01-05"], ["2014-01-05", "2014-01-09"]]})
    with pytest.raises(ConfigError):
        ExclusionConfig({"A": [["2014-01-01 00:00", "2014-01-05"]]})
    with pytest.raises(ConfigError):
        ExclusionConfig({"A": [["2014-01-01"]]})


def test_exclusion_config_round_trip(tmp_path):
    cfg = ExclusionConfig({"A": [["2014-01-01", "2014-01-02"]]})
    cfg.save(tmp_path / "x.json")
    assert ExclusionConfig.load(tmp_path / "x.json") == cfg
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError):
        ExclusionConfig.load(tmp_path / "bad.json")


def test_table2_preset():
    cfg = table2_exclusions()
    assert cfg.frames_for("Moufia")[0] == ("2014-01-01", "2014-01-23")
    assert cfg.frames_for("Saint Andre") == [("2014-01-01", "2014-03-29")]
    assert cfg.frames_for("Possession") == []


def test_apply_exclusions_flags_whole_days():
    start = to_minutes(datetime(2014, 1, 1), 240)
    ds = _dataset(5 * 1440, start)
    ds.utc_offset = 240
    out = apply_exclusions(ds, [("2014-01-02", "2014-01-03")])
    assert out.excluded.sum() == 2 * 1440
    assert not out.excluded[1439] and out.excluded[1440] and out.excluded[3 * 1440 - 1]
    assert not out.excluded[3 * 1440]
    for v in RAW_VARIABLES:
        assert np.array_equal(out.values[v], ds.values[v])
    assert not ds.excluded.any()
