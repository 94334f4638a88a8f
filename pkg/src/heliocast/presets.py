"""Shipped reference data: lag table, exclusion frames, site coordinates."""
import json
from importlib import resources
from pathlib import Path


def data_path(name: str) -> Path:
    return Path(str(resources.files("heliocast") / "data" / name))


def site_coordinates() -> dict:
    """Site name -> (latitude, longitude) for the five recording sites."""
    d = json.loads(data_path("sites_table1.json").read_text())
    return {k: tuple(v) for k, v in d.items()}


REFERENCE_SITE = "Possession"
UTC_OFFSET_REUNION = 240
