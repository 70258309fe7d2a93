"""Group recommendation with hypergraph convolution and contrastive learning."""

import json

from . import _core
from ._core import (
    Dataset,
    DivergenceError,
    InvalidDatasetError,
    Model,
    ParseError,
    UsageError,
    anneal_beta,
    bpr_loss,
    build_id,
    evaluate_scores,
    infonce_filtered,
    infonce_vanilla,
    popularity_scores,
    ranking_metrics,
    selfcheck,
    w2_diag_gauss,
)

__all__ = [
    "Dataset", "Model", "DivergenceError", "InvalidDatasetError", "ParseError", "UsageError",
    "anneal_beta", "bpr_loss", "build_id", "config", "config_hash", "evaluate_scores",
    "infonce_filtered", "infonce_vanilla", "load_config", "load_model", "popularity_scores",
    "ranking_metrics", "selfcheck", "train", "w2_diag_gauss",
]


def config(overrides=None, **sections):
    """Full validated configuration: defaults merged with the given sections.

    >>> config(model={"dim": 32}, train={"max_epochs": 5})["model"]["dim"]
    32
    """
    doc = dict(overrides or {})
    doc.update(sections)
    return json.loads(_core.normalize_config(json.dumps(doc)))


def load_config(path=None, overrides=()):
    return json.loads(_core.load_config(path, list(overrides)))


def config_hash(cfg):
    return _core.config_hash(json.dumps(cfg))


def train(dataset, cfg=None):
    return _core.train(dataset, json.dumps(cfg or {}))


def load_model(path, cfg):
    return Model.load(path, json.dumps(cfg))
