"""Trained regressors and their portable artifact format."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DataError, LayoutMismatchError
from ..features import FeatureSlot, MonthlyHourlyStats, SupervisedSet, normalize_features
from .gbt import GbtHyperParams, GbtModel, gbt_fit, gbt_tune
from .mlp import MlpEnsemble, MlpModel, MlpTrainingConfig, mlp_fit, mlp_select_and_ensemble

ARTIFACT_VERSION = 1
MODEL_KINDS = ("gbt", "mlp")
VECTOR_KINDS = ("instant", "arima")


class ArtifactError(DataError):
    pass


@dataclass
class ModelArtifact:
    kind: str
    model: object
    layout: list
    vector_kind: str
    horizon: int = 60
    utc_offset: int = 0
    feature_stats: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ArtifactError(f"unknown model kind {self.kind!r}")
        if self.vector_kind not in VECTOR_KINDS:
            raise ArtifactError(f"unknown vector kind {self.vector_kind!r}")

    def check_layout(self, data: SupervisedSet) -> None:
        if [s.to_list() for s in data.layout] != [s.to_list() for s in self.layout]:
            raise LayoutMismatchError(
                f"feature layout mismatch: model expects {len(self.layout)} features "
                f"({self.layout[0].label}...), data has {data.dimension}")
        if data.horizon != self.horizon:
            raise LayoutMismatchError(f"horizon {data.horizon} != model horizon {self.horizon}")

    def predict(self, data: SupervisedSet) -> np.ndarray:
        self.check_layout(data)
        return predict(self, data)

    def to_dict(self) -> dict:
        return {
            "format": "heliocast-model", "version": ARTIFACT_VERSION,
            "kind": self.kind, "vector_kind": self.vector_kind,
            "horizon": self.horizon, "utc_offset": self.utc_offset,
            "feature_layout": [s.to_list() for s in self.layout],
            "feature_stats": {k: v.to_dict() for k, v in self.feature_stats.items()},
            "provenance": self.provenance,
            "model": self.model.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelArtifact":
        if d.get("format") != "heliocast-model":
            raise ArtifactError("not a heliocast model artifact")
        if d.get("version") != ARTIFACT_VERSION:
            raise ArtifactError(f"artifact version {d.get('version')} != {ARTIFACT_VERSION}")
        try:
            kind = d["kind"]
            model = GbtModel.from_dict(d["model"]) if kind == "gbt" else MlpEnsemble.from_dict(d["model"])
            return cls(kind, model, [FeatureSlot(*s) for s in d["feature_layout"]],
                       d["vector_kind"], d["horizon"], d["utc_offset"],
                       {k: MonthlyHourlyStats.from_dict(v) for k, v in d["feature_stats"].items()},
                       d.get("provenance", {}))
        except (KeyError, TypeError, ValueError) as err:
            raise ArtifactError(f"corrupted artifact: {err!r}") from None


def predict(model, features, target_ts=None) -> np.ndarray:
    """Predictions on the raw target scale.

    ``model`` may be a :class:`ModelArtifact`, :class:`GbtModel` or
    :class:`MlpEnsemble`; ``features`` a :class:`SupervisedSet` or a
    matrix. MLP artifacts normalize their inputs with their stored
    monthly-hourly statistics, which needs slot timestamps, so they require a
    SupervisedSet.
    """
    if isinstance(model, ModelArtifact):
        if model.kind == "mlp":
            if not isinstance(features, SupervisedSet):
                raise DataError("MLP artifacts predict from a SupervisedSet (timestamps needed)")
            model.check_layout(features)
            X = normalize_features(features, model.feature_stats)
        else:
            if isinstance(features, SupervisedSet):
                model.check_layout(features)
            X = features.X if isinstance(features, SupervisedSet) else features
        return predict(model.model, X)
    X = features.X if isinstance(features, SupervisedSet) else np.asarray(features, dtype=float)
    if isinstance(model, (GbtModel, MlpEnsemble, MlpModel)):
        n_in = model.n_features if isinstance(model, GbtModel) else (
            model.input_dim if isinstance(model, MlpModel) else model.members[0].input_dim)
        if X.ndim != 2 or X.shape[1] != n_in:
            raise DataError(f"expected {n_in} features, got shape {X.shape}")
        return model.predict(X)
    raise TypeError(f"cannot predict with {type(model).__name__}")


def save_model(artifact: ModelArtifact, path) -> None:
    Path(path).write_text(json.dumps(artifact.to_dict()) + "\n")


def load_model(path) -> ModelArtifact:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise ArtifactError(f"{path}: corrupted artifact ({err})") from None
    return ModelArtifact.from_dict(d)


__all__ = [
    "ArtifactError", "GbtHyperParams", "GbtModel", "MlpEnsemble", "MlpModel",
    "MlpTrainingConfig", "ModelArtifact", "gbt_fit", "gbt_tune", "load_model", "mlp_fit",
    "mlp_select_and_ensemble", "predict", "save_model",
]
