"""End-to-end orchestration: clean, select lags, train, evaluate.

Every stage caches its output under ``out_dir`` and later stages reuse the
caches, computing missing ones on demand:

    clean/<site>.npz, clean/<site>.gaps.json
    lagspec.json, selection_report.json
    models/<site>__<vector>__<model>.json
    report/ (genuine-site results), cross/ (transfer matrices), summary/
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from datetime import datetime
from pathlib import Path

import numpy as np

from .arima import SelectionConfig, build_lag_spec
from .config import PipelineConfig, SiteConfig, derive_seed
from .errors import ConfigError, DataError
from .eval import (
    CorrelationTable,
    EvalReport,
    between_site_correlation,
    cross_site_evaluate,
    emit_report,
    evaluate_site,
    load_report,
    split_train_test,
)
from .features import (
    LagSpec,
    NocturnalConfig,
    SupervisedSet,
    assemble,
    derive_variables,
    fit_feature_stats,
    normalize_features,
)
from .ingest import (
    CsvSchema,
    ExclusionConfig,
    apply_exclusions,
    detect_gaps,
    fill_missing,
    parse_site_csv,
    table2_exclusions,
    write_site_csv,
)
from .models import ModelArtifact, load_model, save_model
from .models.gbt import expand_grid, gbt_fit, gbt_tune
from .models.mlp import mlp_ensemble, mlp_select_size, training_config_from_dict
from .sun import SunTimes
from .synth import SynthConfig, generate, inject_gaps, random_gap_config
from .timeseries import MODEL_VARIABLES, SiteDataset, to_minutes

log = logging.getLogger(__name__)


def slug(name: str) -> str:
    return name.replace(" ", "_")


def _dump_json(path: Path, obj) -> None:
    def default(o):
        if isinstance(o, np.generic):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        raise TypeError(f"not JSON serializable: {type(o).__name__}")

    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, default=default) + "\n")


def year_range(year: int, utc_offset: int) -> tuple:
    """Inclusive UTC minute bounds of a local calendar year."""
    return (to_minutes(datetime(year, 1, 1), utc_offset),
            to_minutes(datetime(year + 1, 1, 1), utc_offset) - 1)


# --- cleaning -------------------------------------------------------------------------

def _exclusions(cfg: PipelineConfig) -> ExclusionConfig:
    if cfg.exclusions is None:
        return ExclusionConfig()
    if cfg.exclusions == "preset_table2":
        return table2_exclusions()
    return ExclusionConfig.load(cfg.exclusions)


def sun_times_for(cfg: PipelineConfig, ds: SiteDataset) -> SunTimes:
    if cfg.sun_source == "table_file":
        path = cfg.sun_tables.get(ds.site_name)
        if not path:
            raise ConfigError(f"{ds.site_name}: no sun table configured")
        return SunTimes.from_table(path, cfg.utc_offset)
    return SunTimes.computed(ds.start, ds.end, ds.latitude, ds.longitude, cfg.utc_offset)


def clean_site(cfg: PipelineConfig, site: SiteConfig):
    """Parse, report gaps, interpolate, flag exclusions and derive kb / wind components."""
    if not site.path:
        raise ConfigError(f"site {site.name!r} has no data path")
    if not Path(site.path).exists():
        raise DataError(f"{site.name}: data file {site.path} not found")
    raw = parse_site_csv(site.path, CsvSchema.from_dict(cfg.csv_schema), site_name=site.name,
                         latitude=site.latitude, longitude=site.longitude,
                         utc_offset=cfg.utc_offset)
    gaps = detect_gaps(raw, cfg.max_gap_minutes)
    ds = apply_exclusions(fill_missing(raw), _exclusions(cfg))
    nocturnal = NocturnalConfig(cfg.nocturnal_sigma, derive_seed(cfg.seed, "night", site.name),
                                cfg.sun_source, cfg.sun_tables.get(site.name))
    ds = derive_variables(ds, sun_times_for(cfg, ds), nocturnal, cfg.low_irradiance_floor)
    return ds, gaps


def run_clean(cfg: PipelineConfig, sites=None) -> dict:
    out = Path(cfg.out_dir) / "clean"
    out.mkdir(parents=True, exist_ok=True)
    reports = {}
    for site in cfg.sites:
        if sites and site.name not in sites:
            continue
        ds, gaps = clean_site(cfg, site)
        ds.save(out / f"{slug(site.name)}.npz")
        reports[site.name] = gaps.to_json(cfg.utc_offset)
        _dump_json(out / f"{slug(site.name)}.gaps.json", reports[site.name])
        log.info("%s: cleaned %d minutes, %d absent rows", site.name, ds.length,
                 gaps.counts["missing_timestamps"])
    return reports


def load_datasets(cfg: PipelineConfig, sites=None) -> dict:
    """Cleaned datasets by site name, cleaning those not cached yet."""
    names = [s.name for s in cfg.sites if not sites or s.name in sites]
    out = Path(cfg.out_dir) / "clean"
    todo = [n for n in names if not (out / f"{slug(n)}.npz").exists()]
    if todo:
        run_clean(cfg, todo)
    return {n: SiteDataset.load(out / f"{slug(n)}.npz") for n in names}


# --- lag selection --------------------------------------------------------------------

def select_lags(cfg: PipelineConfig, datasets: dict | None = None):
    if cfg.lag_spec_source == "preset_table3":
        return LagSpec.table3(), {"source": "preset_table3"}
    if cfg.lag_spec_source == "file":
        return LagSpec.load(cfg.lag_spec_path), {"source": "file", "path": cfg.lag_spec_path}
    ref = cfg.reference_site if any(s.name == cfg.reference_site for s in cfg.sites) \
        else cfg.sites[0].name
    datasets = datasets or load_datasets(cfg, [ref])
    sel = SelectionConfig(year=cfg.selection_year or cfg.train_year,
                          max_order=cfg.selection_max_order,
                          minute_window=cfg.selection_minute_window)
    spec, report = build_lag_spec(datasets[ref], MODEL_VARIABLES, sel)
    return spec, {"source": "auto", "reference_site": ref, "config": asdict(sel),
                  "variables": report}


def run_select_lags(cfg: PipelineConfig) -> LagSpec:
    spec, report = select_lags(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec.save(out / "lagspec.json")
    _dump_json(out / "selection_report.json", report)
    return spec


def load_lag_spec(cfg: PipelineConfig) -> LagSpec:
    path = Path(cfg.out_dir) / "lagspec.json"
    return LagSpec.load(path) if path.exists() else run_select_lags(cfg)


# --- training -------------------------------------------------------------------------

def vector_spec(kind: str, arima_spec: LagSpec) -> LagSpec:
    return LagSpec.instant() if kind == "instant" else arima_spec


def supervised_set(cfg: PipelineConfig, ds: SiteDataset, spec: LagSpec) -> SupervisedSet:
    return assemble(ds, spec, horizon=cfg.horizon, target=cfg.target, stride=cfg.stride)


def _normalized(cfg, ds, data: SupervisedSet):
    variables = sorted({s.variable for s in data.layout})
    stats = fit_feature_stats(ds, variables, year_range(cfg.train_year, cfg.utc_offset))
    return normalize_features(data, stats), stats


def _artifact_path(cfg, site, vector, model) -> Path:
    return Path(cfg.out_dir) / "models" / f"{slug(site)}__{vector}__{model}.json"


def _train_unit(job: dict) -> str:
    cfg = PipelineConfig.from_dict(job["config"])
    site, vector, model = job["site"], job["vector"], job["model"]
    ds = SiteDataset.load(Path(cfg.out_dir) / "clean" / f"{slug(site)}.npz")
    spec = vector_spec(vector, LagSpec.from_json(job["lagspec"]))
    train, _ = split_train_test(supervised_set(cfg, ds, spec), cfg.train_year, cfg.test_year)
    seed = derive_seed(cfg.seed, "train", site, vector, model)
    provenance = {"site": site, "train_year": cfg.train_year, "vector_kind": vector,
                  "seed": seed, "n_train_rows": len(train)}
    if model == "gbt":
        grid = expand_grid(cfg.gbt_grid)
        folds = min(cfg.gbt_folds, len(train))
        hp = gbt_tune(train.X, train.y, grid, folds, seed) if len(grid) > 1 else grid[0]
        fitted = gbt_fit(train.X, train.y, hp, seed)  # refit on the complete training set
        artifact = ModelArtifact("gbt", fitted, train.layout, vector, cfg.horizon,
                                 cfg.utc_offset, {}, provenance)
    else:
        X, stats = _normalized(cfg, ds, train)
        ens = mlp_ensemble(X, train.y, job["hidden_size"],
                           training_config_from_dict(cfg.mlp_training), seed,
                           cfg.mlp_restarts, cfg.mlp_keep)
        ens.cv_scores = {int(k): v for k, v in job["cv_scores"].items()}
        artifact = ModelArtifact("mlp", ens, train.layout, vector, cfg.horizon,
                                 cfg.utc_offset, stats, provenance)
    path = _artifact_path(cfg, site, vector, model)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_model(artifact, path)
    return str(path)


def _select_mlp_size(job: dict) -> tuple:
    cfg = PipelineConfig.from_dict(job["config"])
    vector = job["vector"]
    ds = SiteDataset.load(Path(cfg.out_dir) / "clean" / f"{slug(job['site'])}.npz")
    spec = vector_spec(vector, LagSpec.from_json(job["lagspec"]))
    train, _ = split_train_test(supervised_set(cfg, ds, spec), cfg.train_year, cfg.test_year)
    X, _ = _normalized(cfg, ds, train)
    sizes = cfg.mlp_sizes.get(vector) or [10]
    size, scores = mlp_select_size(X, train.y, sizes, cfg.mlp_folds,
                                   training_config_from_dict(cfg.mlp_training),
                                   derive_seed(cfg.seed, "mlp-size", vector))
    return vector, size, {str(k): v for k, v in scores.items()}


def _run_jobs(fn, jobs, workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(fn, jobs))


def run_train(cfg: PipelineConfig, sites=None) -> list:
    """Train every (site, vector kind, model kind) unit; returns artifact paths."""
    datasets_needed = [s.name for s in cfg.sites if not sites or s.name in sites]
    load_datasets(cfg, datasets_needed)
    spec = load_lag_spec(cfg)
    base = {"config": cfg.to_dict(), "lagspec": spec.to_json()}
    sizes = {}
    if "mlp" in cfg.model_kinds:
        ref = cfg.reference_site if cfg.reference_site in datasets_needed else datasets_needed[0]
        load_datasets(cfg, [ref])
        jobs = [dict(base, site=ref, vector=v) for v in cfg.vector_kinds]
        for vector, size, scores in _run_jobs(_select_mlp_size, jobs, cfg.n_workers):
            sizes[vector] = (size, scores)
            log.info("MLP hidden size for %s vectors: %d", vector, size)
    jobs = []
    for site in datasets_needed:
        for vector in cfg.vector_kinds:
            for model in cfg.model_kinds:
                job = dict(base, site=site, vector=vector, model=model)
                if model == "mlp":
                    job["hidden_size"], job["cv_scores"] = sizes[vector]
                jobs.append(job)
    return _run_jobs(_train_unit, jobs, cfg.n_workers)


def load_artifacts(cfg: PipelineConfig, sites=None) -> dict:
    """Artifacts keyed by (site, vector, model), training those not on disk."""
    names = [s.name for s in cfg.sites if not sites or s.name in sites]
    keys = [(s, v, m) for s in names for v in cfg.vector_kinds for m in cfg.model_kinds]
    if any(not _artifact_path(cfg, *k).exists() for k in keys):
        run_train(cfg, [k[0] for k in keys if not _artifact_path(cfg, *k).exists()])
    return {k: load_model(_artifact_path(cfg, *k)) for k in keys}


# --- evaluation -----------------------------------------------------------------------

def build_test_sets(cfg: PipelineConfig, datasets: dict, spec: LagSpec) -> dict:
    out = {}
    for name, ds in datasets.items():
        for vector in cfg.vector_kinds:
            data = supervised_set(cfg, ds, vector_spec(vector, spec))
            out[name, vector] = split_train_test(data, cfg.train_year, cfg.test_year)[1]
    return out


def correlation_table(datasets: dict, variables=MODEL_VARIABLES) -> CorrelationTable:
    table = CorrelationTable()
    if len(datasets) >= 2:
        for var in variables:
            table.rows.append(between_site_correlation(list(datasets.values()), var))
    return table


def run_evaluate(cfg: PipelineConfig, sites=None) -> dict:
    """Genuine-site results, between-site correlations and prediction dumps."""
    datasets = load_datasets(cfg, sites)
    spec = load_lag_spec(cfg)
    artifacts = load_artifacts(cfg, sites)
    tests = build_test_sets(cfg, datasets, spec)
    suns = {n: sun_times_for(cfg, ds) for n, ds in datasets.items()}
    report = EvalReport()
    for (site, vector, model), art in artifacts.items():
        report.add(evaluate_site(art, tests[site, vector], suns[site]))
    return emit_report(Path(cfg.out_dir) / "report", report, (), correlation_table(datasets),
                       cfg.utc_offset)


def run_cross_eval(cfg: PipelineConfig, sites=None) -> dict:
    datasets = load_datasets(cfg, sites)
    spec = load_lag_spec(cfg)
    artifacts = load_artifacts(cfg, sites)
    tests = build_test_sets(cfg, datasets, spec)
    suns = {n: sun_times_for(cfg, ds) for n, ds in datasets.items()}
    report, matrices = EvalReport(), []
    for vector in cfg.vector_kinds:
        for model in cfg.model_kinds:
            arts = {n: artifacts[n, vector, model] for n in datasets}
            matrices.append(cross_site_evaluate(arts, {n: tests[n, vector] for n in datasets},
                                                suns, report))
    return emit_report(Path(cfg.out_dir) / "cross", report, matrices, None, cfg.utc_offset,
                       dump_predictions=False)


def run_report(cfg: PipelineConfig) -> dict:
    """Merge the evaluate and cross-eval outputs into ``summary/``."""
    out = Path(cfg.out_dir)
    if not (out / "report" / "report.json").exists():
        run_evaluate(cfg)
    if not (out / "cross" / "report.json").exists():
        run_cross_eval(cfg)
    genuine, _, correlations = load_report(out / "report" / "report.json")
    _, matrices, _ = load_report(out / "cross" / "report.json")
    return emit_report(out / "summary", genuine, matrices, correlations, cfg.utc_offset,
                       dump_predictions=False)


def format_summary(doc: dict) -> str:
    lines = ["test-set errors (genuine site)", f"{'site':<14}{'vector':<9}{'model':<7}"
             f"{'rmse':>9}{'mae':>9}{'rows':>9}"]
    for r in doc["results"]:
        lines.append(f"{r['test_site']:<14}{r['vector_kind']:<9}{r['model_kind']:<7}"
                     f"{r['rmse']:>9.4f}{r['mae']:>9.4f}{r['n_test_rows']:>9d}")
    for c in doc["correlations"]:
        if c == doc["correlations"][0]:
            lines += ["", "between-site correlation"]
        mean = "n/a" if c["mean"] is None else f"{c['mean']:.3f} +- {c['std']:.3f}"
        lines.append(f"{c['variable']:<10}{mean}")
    for m in doc["cross_site"]:
        lines += ["", f"cross-site rmse ({m['model_kind']}, {m['vector_kind']}); rows train, "
                      "columns test"]
        for name, row in zip(m["sites"], m["rmse"]):
            lines.append(f"{name:<14}" + "".join(f"{x:>9.4f}" for x in row))
    return "\n".join(lines)


# --- synthetic data -------------------------------------------------------------------

def run_synth(cfg: PipelineConfig) -> Path:
    """Write synthetic site CSVs and a ready-to-run config pointing at them."""
    out = Path(cfg.out_dir) / "synth"
    out.mkdir(parents=True, exist_ok=True)
    synth = dict(cfg.synth)
    synth.setdefault("seed", cfg.seed)
    synth["utc_offset"] = cfg.utc_offset
    try:
        scfg = SynthConfig(**synth)
    except TypeError as err:
        raise ConfigError(f"invalid synth config: {err}") from None
    sites, truth = [], {}
    for ds in generate(scfg):
        if cfg.synth_gaps:
            gcfg = random_gap_config(ds, seed=derive_seed(cfg.seed, "gaps", ds.site_name),
                                     **cfg.synth_gaps)
            ds, _ = inject_gaps(ds, gcfg)
            truth[ds.site_name] = {"timestamp_ranges": gcfg.timestamp_ranges,
                                   "value_ranges": gcfg.value_ranges}
        path = out / f"{slug(ds.site_name)}.csv"
        write_site_csv(ds, path, CsvSchema.from_dict(cfg.csv_schema))
        sites.append({"name": ds.site_name, "path": str(path.resolve()),
                      "latitude": ds.latitude, "longitude": ds.longitude})
    if truth:
        _dump_json(out / "gaps_truth.json", truth)
    derived = PipelineConfig.from_dict(dict(cfg.to_dict(), sites=sites))
    derived.save(out / "pipeline.json")
    return out / "pipeline.json"
