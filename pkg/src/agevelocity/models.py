"""Model choice, construction and the JSON persistence envelope."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from . import baselines, gbm
from .errors import ConfigError, SchemaError

FORMAT = "agevelocity.model"
FORMAT_VERSION = 1
MODEL_TYPES = ("gbm", "rf", "enet")

_PARAMS = {
    "gbm": gbm.GbmParams,
    "rf": baselines.ForestParams,
    "enet": baselines.ElasticNetParams,
}
_CLASSES = {
    "gbm": gbm.BoostedEnsemble,
    "rf": baselines.ForestModel,
    "enet": baselines.ElasticNetModel,
}


def make_params(kind: str, overrides: dict | None = None):
    if kind not in MODEL_TYPES:
        raise ConfigError(f"model must be one of {MODEL_TYPES}, got {kind!r}")
    overrides = dict(overrides or {})
    try:
        if kind == "gbm":
            return gbm.GbmParams.from_dict(overrides)
        return _PARAMS[kind](**overrides)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {kind} parameters: {exc}") from exc


@dataclass(frozen=True)
class ModelSpec:
    """A model family plus its hyperparameters; ``fit`` returns a fitted model."""

    kind: str = "gbm"
    overrides: dict = field(default_factory=dict)

    @property
    def params(self):
        return make_params(self.kind, self.overrides)

    def fit(self, X, y):
        p = self.params
        if self.kind == "gbm":
            return gbm.fit(X, y, p)
        if self.kind == "rf":
            return baselines.rf_fit(X, y, p)
        return baselines.enet_fit(X, y, p)

    def with_seed(self, seed: int) -> "ModelSpec":
        if self.kind == "enet":
            return self
        return ModelSpec(self.kind, {**self.overrides, "seed": seed})


def model_to_dict(model) -> dict:
    return {"format": FORMAT, "version": FORMAT_VERSION, "model_type": model.model_type, **model.to_dict()}


def model_from_dict(doc: dict):
    if doc.get("format") != FORMAT:
        raise SchemaError(f"not a model document (format={doc.get('format')!r})")
    if doc.get("version") != FORMAT_VERSION:
        raise SchemaError(f"unsupported model document version {doc.get('version')!r}")
    kind = doc.get("model_type")
    if kind not in _CLASSES:
        raise SchemaError(f"unknown model_type {kind!r}")
    return _CLASSES[kind].from_dict(doc)


def save_model(model, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)))


def load_model(path):
    return model_from_dict(json.loads(Path(path).read_text()))
