"""Config file handling.

A config is a small YAML document of key-value settings; every CLI flag
overrides the corresponding config value.  Recognized keys:

    vertical: auto                  # vertical name (directory under the root)
    fields: [model, price, engine]  # ordered field names
    seed: 0                         # RNG seed for training and dropout
    filter_top_k: 500               # variable-node filter size
    node:                           # any stage-1 hyperparameter, e.g.
      epochs: 10
      batch_size: 16
    relation:                       # any stage-2 hyperparameter, e.g.
      m: 10
      vote_threshold: 1
"""

from __future__ import annotations

from pathlib import Path

import yaml

from .dom import VerticalSchema
from .filtering import DEFAULT_TOP_K
from .node_model import NodeModelConfig
from .relation_model import RelationConfig


def load_config(path: str | Path | None) -> dict:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config must be a mapping")
    return data


def schema_from(config: dict, vertical: str | None = None,
                fields: str | None = None) -> VerticalSchema:
    """Schema from config, with CLI overrides (comma-separated fields)."""
    name = vertical or config.get("vertical")
    field_list = ([f.strip() for f in fields.split(",") if f.strip()]
                  if fields else config.get("fields"))
    if not name or not field_list:
        raise ValueError("a vertical name and field list are required "
                         "(via --config or --vertical/--fields)")
    return VerticalSchema(name, tuple(field_list))


def node_config_from(config: dict, **overrides) -> NodeModelConfig:
    merged = dict(config.get("node", {}))
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return NodeModelConfig.from_dict(merged)


def relation_config_from(config: dict, **overrides) -> RelationConfig:
    merged = dict(config.get("relation", {}))
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return RelationConfig.from_dict(merged)


def seed_from(config: dict, seed: int | None) -> int:
    return seed if seed is not None else int(config.get("seed", 0))


def top_k_from(config: dict, top_k: int | None) -> int:
    return top_k if top_k is not None else int(config.get("filter_top_k", DEFAULT_TOP_K))
