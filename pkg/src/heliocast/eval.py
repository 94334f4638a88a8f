"""Metrics, protocol enforcement and the per-site / cross-site / correlation tables."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import jsonschema
import numpy as np

from .errors import DataError, LayoutMismatchError
from .features import SupervisedSet
from .models import ModelArtifact, predict
from .presets import data_path
from .timeseries import SiteDataset, calendar_year, canonical_variable, from_minutes

log = logging.getLogger(__name__)

REPORT_VERSION = 1


def _residuals(y, yhat) -> np.ndarray:
    y, yhat = np.asarray(y, dtype=float), np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {yhat.shape}")
    if y.size == 0:
        raise ValueError("metrics need at least one value")
    return yhat - y


def rmse(y, yhat) -> float:
    r = _residuals(y, yhat)
    return float(np.sqrt(np.mean(r * r)))


def mae(y, yhat) -> float:
    return float(np.mean(np.abs(_residuals(y, yhat))))


def target_years(data: SupervisedSet) -> np.ndarray:
    return calendar_year(data.target_ts, data.utc_offset)


def split_train_test(data: SupervisedSet, train_year: int = 2014, test_year: int = 2015):
    """Partition rows by the local calendar year of their target."""
    if train_year == test_year:
        raise ValueError("train and test years must differ")
    years = target_years(data)
    train, test = data.subset(years == train_year), data.subset(years == test_year)
    for name, part, year in (("train", train, train_year), ("test", test, test_year)):
        if len(part) == 0:
            raise DataError(f"{data.site or 'dataset'}: no {name} rows for year {year}")
    return train, test


def filter_nocturnal_targets(data: SupervisedSet, sun_times) -> SupervisedSet:
    """Drop rows whose target lies in [sunset, next sunrise)."""
    if len(data) == 0:
        return data
    return data.subset(~sun_times.is_night(data.target_ts))


# --- reports --------------------------------------------------------------------------

@dataclass
class EvalRow:
    train_site: str
    test_site: str
    vector_kind: str
    model_kind: str
    rmse: float
    mae: float
    n_test_rows: int
    target_ts: np.ndarray = field(default=None, repr=False)
    actual: np.ndarray = field(default=None, repr=False)
    predicted: np.ndarray = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("train_site", "test_site", "vector_kind", "model_kind", "rmse", "mae", "n_test_rows")}


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)

    def add(self, row: EvalRow) -> None:
        self.rows.append(row)

    def genuine(self) -> list:
        return [r for r in self.rows if r.train_site == r.test_site]


def evaluate_site(artifact: ModelArtifact, test_set: SupervisedSet, sun_times=None) -> EvalRow:
    """RMSE/MAE of ``artifact`` on ``test_set`` (night targets removed when sun times given)."""
    artifact.check_layout(test_set)
    if sun_times is not None:
        test_set = filter_nocturnal_targets(test_set, sun_times)
    if len(test_set) == 0:
        raise DataError(f"{test_set.site}: empty test set")
    yhat = predict(artifact, test_set)
    return EvalRow(artifact.provenance.get("site", ""), test_set.site, artifact.vector_kind,
                   artifact.kind, rmse(test_set.y, yhat), mae(test_set.y, yhat), len(test_set),
                   test_set.target_ts, test_set.y, yhat)


@dataclass
class CrossSiteMatrix:
    """``rmse[i, j]``: model trained on ``sites[i]`` evaluated on ``sites[j]``."""

    sites: list
    model_kind: str
    vector_kind: str
    rmse: np.ndarray

    def to_dict(self) -> dict:
        return {"model_kind": self.model_kind, "vector_kind": self.vector_kind,
                "sites": list(self.sites), "rmse": self.rmse.tolist()}


def cross_site_evaluate(artifacts: dict, test_sets: dict, sun_times: dict | None = None,
                        report: EvalReport | None = None) -> CrossSiteMatrix:
    """Evaluate every site's artifact on every site's test set."""
    sites = list(artifacts)
    kinds = {(a.kind, a.vector_kind) for a in artifacts.values()}
    if len(kinds) != 1:
        raise LayoutMismatchError(f"artifacts mix model/vector kinds: {sorted(kinds)}")
    (model_kind, vector_kind), = kinds
    out = np.empty((len(sites), len(sites)))
    for i, train_site in enumerate(sites):
        for j, test_site in enumerate(sites):
            st = sun_times.get(test_site) if sun_times else None
            row = evaluate_site(artifacts[train_site], test_sets[test_site], st)
            row.train_site = train_site
            out[i, j] = row.rmse
            if report is not None:
                report.add(row)
    return CrossSiteMatrix(sites, model_kind, vector_kind, out)


@dataclass
class CorrelationRow:
    variable: str
    mean: float | None
    std: float | None
    n_pairs: int


@dataclass
class CorrelationTable:
    rows: list = field(default_factory=list)


def _valid_series(ds: SiteDataset, variable: str, window=None):
    ok = ds.present & ~ds.excluded & ~ds.missing[variable]
    ts = ds.timestamps
    if window is not None:
        ok &= (ts >= window[0]) & (ts <= window[1])
    return ts[ok], ds.values[variable][ok]


def between_site_correlation(datasets, variable: str, window=None) -> CorrelationRow:
    """Mean and std of Pearson correlations over all site pairs.

    Each pair is aligned on the timestamps valid (present, observed, not
    excluded) in both of its members.
    """
    variable = canonical_variable(variable)
    if len(datasets) < 2:
        raise ValueError("need at least two sites")
    series = [_valid_series(ds, variable, window) for ds in datasets]
    corrs = []
    for (i, (ta, va)), (j, (tb, vb)) in combinations(enumerate(series), 2):
        _, ia, ib = np.intersect1d(ta, tb, assume_unique=True, return_indices=True)
        a, b = va[ia], vb[ib]
        if len(a) < 2 or np.std(a) == 0 or np.std(b) == 0:
            log.warning("%s: skipping pair (%s, %s) with %d usable points", variable,
                        datasets[i].site_name, datasets[j].site_name, len(a))
            continue
        corrs.append(float(np.corrcoef(a, b)[0, 1]))
    if not corrs:
        return CorrelationRow(variable, None, None, 0)
    return CorrelationRow(variable, float(np.mean(corrs)), float(np.std(corrs)), len(corrs))


# --- output ---------------------------------------------------------------------------

def report_schema() -> dict:
    return json.loads(data_path("report.schema.json").read_text())


def report_dict(report: EvalReport | None = None, matrices=(), correlations=None) -> dict:
    return {
        "format": "heliocast-report", "version": REPORT_VERSION,
        "results": [r.to_dict() for r in (report.rows if report else [])],
        "cross_site": [m.to_dict() for m in matrices],
        "correlations": [vars(r) for r in (correlations.rows if correlations else [])],
    }


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def emit_report(out_dir, report: EvalReport | None = None, matrices=(),
                correlations: CorrelationTable | None = None, utc_offset: int = 0,
                dump_predictions: bool = True) -> dict:
    """Write ``report.json`` and CSV tables shaped like the published ones.

    * ``table4.csv``: one line per (model, vector, metric), one column per
      test site, from genuine-site rows;
    * ``table5.csv``: variable, mean, std, n_pairs;
    * ``table6_<model>_<vector>.csv``: train sites in rows, test sites in columns;
    * ``predictions/<train>__<test>__<vector>__<model>.csv``.
    Returns the report dict (already validated against the shipped schema).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = report_dict(report, matrices, correlations)
    jsonschema.validate(doc, report_schema())
    (out / "report.json").write_text(json.dumps(doc, indent=2) + "\n")

    rows = report.genuine() if report else []
    sites = list(dict.fromkeys(r.test_site for r in rows))
    combos = list(dict.fromkeys((r.model_kind, r.vector_kind) for r in rows))
    lookup = {(r.model_kind, r.vector_kind, r.test_site): r for r in rows}
    lines = []
    for model_kind, vector_kind in combos:
        for metric in ("rmse", "mae"):
            cells = [lookup.get((model_kind, vector_kind, s)) for s in sites]
            lines.append([model_kind, vector_kind, metric,
                          *(_fmt(getattr(c, metric)) if c else "" for c in cells)])
    _write_csv(out / "table4.csv", ["model", "vector", "metric", *sites], lines)

    corr_rows = correlations.rows if correlations else []
    _write_csv(out / "table5.csv", ["variable", "mean", "std", "n_pairs"],
               [[r.variable, _fmt(r.mean), _fmt(r.std), r.n_pairs] for r in corr_rows])

    for m in matrices:
        _write_csv(out / f"table6_{m.model_kind}_{m.vector_kind}.csv", ["train_site", *m.sites],
                   [[s, *map(_fmt, m.rmse[i])] for i, s in enumerate(m.sites)])

    if dump_predictions and report:
        pred_dir = out / "predictions"
        pred_dir.mkdir(exist_ok=True)
        for r in report.rows:
            if r.predicted is None:
                continue
            name = f"{r.train_site}__{r.test_site}__{r.vector_kind}__{r.model_kind}.csv"
            stamps = [from_minutes(t, utc_offset).strftime("%Y-%m-%d %H:%M:%S") for t in r.target_ts]
            _write_csv(pred_dir / name.replace(" ", "_"), ["timestamp", "actual", "predicted"],
                       [[s, repr(float(a)), repr(float(p))]
                        for s, a, p in zip(stamps, r.actual, r.predicted)])
    return doc


def load_report(path):
    """Read a ``report.json`` back into ``(EvalReport, matrices, CorrelationTable)``."""
    doc = json.loads(Path(path).read_text())
    jsonschema.validate(doc, report_schema())
    report = EvalReport([EvalRow(**r) for r in doc["results"]])
    matrices = [CrossSiteMatrix(m["sites"], m["model_kind"], m["vector_kind"],
                                np.array(m["rmse"], dtype=float)) for m in doc["cross_site"]]
    table = CorrelationTable([CorrelationRow(**c) for c in doc["correlations"]])
    return report, matrices, table
