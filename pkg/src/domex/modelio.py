"""Checkpoint save/load for the two model stages.

One container holds either stage 1 alone or both stages; metadata carries
the schema, hyperparameters, vocabularies, and the seed sites the model was
trained on.
"""

from __future__ import annotations

from pathlib import Path

from . import nn
from .dom import VerticalSchema
from .errors import DataError
from .features import Vocab
from .node_model import NodeModel, NodeModelConfig
from .relation_model import RelationConfig, RelationModel


def save_models(path: str | Path, node_model: NodeModel,
                relation_model: RelationModel | None = None,
                seed_sites: list[str] | None = None) -> None:
    meta = {
        "stage": 2 if relation_model is not None else 1,
        "vertical": node_model.schema.vertical_name,
        "fields": list(node_model.schema.fields),
        "seed_sites": list(seed_sites or []),
        "node_config": node_model.cfg.to_dict(),
        "vocab": node_model.vocab.to_dict(),
        "hidden_activation": "relu",
        "node_loss_history": node_model.loss_history,
        "node_params": sorted(node_model.params),
    }
    params = dict(node_model.params)
    if relation_model is not None:
        meta["relation_config"] = relation_model.cfg.to_dict()
        meta["xpath_tag_to_id"] = relation_model.xpath_tag_to_id
        meta["pair_loss_history"] = relation_model.loss_history
        meta["relation_params"] = sorted(relation_model.params)
        params.update(relation_model.params)
    nn.save_checkpoint(path, meta, params)


def load_models(path: str | Path) -> tuple[NodeModel, RelationModel | None, dict]:
    meta, arrays = nn.load_checkpoint(path)
    schema = VerticalSchema(meta["vertical"], tuple(meta["fields"]))
    vocab = Vocab.from_dict(meta["vocab"])
    node_cfg = NodeModelConfig.from_dict(meta["node_config"])
    node_params = nn.params_from_arrays(
        {name: arrays[name] for name in meta["node_params"]})
    stored_dim = node_params["mlp_w1"].data.shape[0]
    if stored_dim != node_cfg.node_vector_dim:
        raise DataError(
            f"{path}: checkpoint metadata claims a {node_cfg.node_vector_dim}-d "
            f"node vector but the classifier expects {stored_dim}")
    node_model = NodeModel(schema, vocab, node_cfg, params=node_params)
    node_model.loss_history = list(meta.get("node_loss_history", []))

    relation_model = None
    if meta.get("relation_params"):
        relation_cfg = RelationConfig.from_dict(meta["relation_config"])
        relation_params = nn.params_from_arrays(
            {name: arrays[name] for name in meta["relation_params"]})
        relation_model = RelationModel(
            schema, relation_cfg, dict(meta["xpath_tag_to_id"]),
            node_cfg.node_vector_dim, params=relation_params)
        relation_model.loss_history = list(meta.get("pair_loss_history", []))
    return node_model, relation_model, meta
