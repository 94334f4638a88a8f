import json
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from heliocast import pipeline
from heliocast.cli import main
from heliocast.config import PipelineConfig
from heliocast.eval import report_schema
from heliocast.features import LagSpec
from heliocast.models import load_model
from heliocast.ingest import ISO_FORMAT
from heliocast.timeseries import from_minutes

from conftest import tiny_pipeline_config


def _tree(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def _run_all(out_dir, seed=0):
    """synth, then every CLI stage in order; returns the derived config path."""
    base = tiny_pipeline_config(out_dir, seed)
    base.save(Path(out_dir).parent / f"{Path(out_dir).name}.json")
    cfg_path = pipeline.run_synth(base)
    for cmd in ("clean", "select-lags", "train", "evaluate", "cross-eval", "report"):
        assert main([cmd, "--config", str(cfg_path)]) == 0, cmd
    return cfg_path


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "out"
    return _run_all(out), out


def test_stage_outputs_exist(full_run):
    cfg_path, out = full_run
    cfg = PipelineConfig.load(cfg_path)
    names = [s.name for s in cfg.sites]
    for name in names:
        slug = pipeline.slug(name)
        assert (out / "clean" / f"{slug}.npz").exists()
        assert (out / "clean" / f"{slug}.gaps.json").exists()
        for vector in ("instant", "arima"):
            for model in ("gbt", "mlp"):
                art = load_model(out / "models" / f"{slug}__{vector}__{model}.json")
                assert art.vector_kind == vector and art.kind == model
                assert art.provenance["site"] == name
    spec = LagSpec.from_json(json.loads((out / "lagspec.json").read_text()))
    assert spec == LagSpec.table3()
    for part in ("report", "cross", "summary"):
        doc = json.loads((out / part / "report.json").read_text())
        jsonschema.validate(doc, report_schema())


def test_report_contents(full_run):
    cfg_path, out = full_run
    cfg = PipelineConfig.load(cfg_path)
    summary = json.loads((out / "summary" / "report.json").read_text())
    assert len(summary["results"]) == 3 * 2 * 2
    assert all(r["train_site"] == r["test_site"] for r in summary["results"])
    assert all(0 < r["mae"] <= r["rmse"] < 1 for r in summary["results"])
    assert len(summary["cross_site"]) == 4
    for m in summary["cross_site"]:
        assert np.array(m["rmse"]).shape == (3, 3)
    assert [c["variable"] for c in summary["correlations"]] == list(pipeline.MODEL_VARIABLES)
    # the diagonal of each matrix matches the genuine-site result
    genuine = {(r["test_site"], r["vector_kind"], r["model_kind"]): r["rmse"]
               for r in summary["results"]}
    for m in summary["cross_site"]:
        for i, site in enumerate(m["sites"]):
            assert m["rmse"][i][i] == genuine[site, m["vector_kind"], m["model_kind"]]
    assert [s.name for s in cfg.sites] == summary["cross_site"][0]["sites"]


def test_clean_recovers_injected_gaps(full_run):
    cfg_path, out = full_run
    truth = json.loads((out / "synth" / "gaps_truth.json").read_text())
    for name, t in truth.items():
        rep = json.loads((out / "clean" / f"{pipeline.slug(name)}.gaps.json").read_text())
        fmt = [[from_minutes(int(m), 240).strftime(ISO_FORMAT) for m in r]
               for r in t["timestamp_ranges"]]
        assert rep["missing_timestamp_ranges"] == fmt
        assert rep["counts"]["missing_timestamps"] == sum(b - a + 1 for a, b in t["timestamp_ranges"])


def test_format_summary_lists_every_result(full_run):
    _, out = full_run
    doc = json.loads((out / "summary" / "report.json").read_text())
    text = pipeline.format_summary(doc)
    assert text.count("\n") >= len(doc["results"])
    assert "cross-site rmse (gbt, instant)" in text


def test_rerun_is_byte_identical(full_run, tmp_path):
    _, out = full_run
    again = tmp_path / "out"
    _run_all(again)
    a, b = _tree(out), _tree(again)
    # the derived config names absolute CSV paths, so it differs by location only
    for tree in (a, b):
        tree.pop("synth/pipeline.json")
    assert a.keys() == b.keys()
    assert [k for k in a if a[k] != b[k]] == []


def test_train_subset_of_sites(tmp_path):
    cfg = PipelineConfig.load(pipeline.run_synth(tiny_pipeline_config(
        tmp_path / "out", model_kinds=["gbt"], vector_kinds=["instant"])))
    paths = pipeline.run_train(cfg, ["Possession"])
    assert [Path(p).name for p in paths] == ["Possession__instant__gbt.json"]


def test_auto_lag_selection_stage(tmp_path):
    cfg = tiny_pipeline_config(tmp_path / "out", lag_spec_source="auto",
                               selection_minute_window=120, selection_max_order=4)
    cfg = PipelineConfig.load(pipeline.run_synth(cfg))
    spec = pipeline.run_select_lags(cfg)
    assert spec.dimension >= 1 and "kb" in spec.entries
    assert pipeline.load_lag_spec(cfg) == spec
