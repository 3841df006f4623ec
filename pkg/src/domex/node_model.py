"""Stage 1: encode each retained node into a 250-d vector and classify it
into one of K fields or "none".

The node vector concatenates three views: node text (char-CNN per token +
word embedding, then a BiLSTM averaged over time), preceding text (same
architecture with its own BiLSTM weights), and max-pooled discrete feature
embeddings (leaf tag bag, string-type bag).  Class layout: fields 0..K-1 in
schema order, none = index K; argmax ties resolve to the lowest index.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nn
from .dom import VerticalSchema
from .errors import EmptyTrainingSet
from .features import NodeFeatureBundle, Vocab

logger = logging.getLogger(__name__)


@dataclass
class NodeModelConfig:
    dim_char: int = 100
    dim_word: int = 100
    cnn_filters: int = 50
    cnn_kernel: int = 3
    lstm_hidden_node_text: int = 100  # total across both directions
    lstm_hidden_prev_text: int = 100
    dim_tag: int = 20
    dim_type: int = 30
    mlp_hidden: int = 100
    dropout: float = 0.3
    epochs: int = 10
    batch_size: int = 16

    @property
    def node_vector_dim(self) -> int:
        return (self.lstm_hidden_node_text + self.lstm_hidden_prev_text
                + self.dim_tag + self.dim_type)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, data: dict) -> "NodeModelConfig":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass
class NodePrediction:
    """Per-node stage-1 output; the score vector and the frozen node vector
    are both kept for the pair stage."""

    ordinal: int
    xpath: str
    text: str
    label_index: int
    scores: np.ndarray  # pre-softmax, length K+1
    probs: np.ndarray
    vector: np.ndarray  # 250-d node representation

    def field_label(self, schema: VerticalSchema) -> str | None:
        return schema.fields[self.label_index] if self.label_index < schema.k else None


def load_word_vectors(path: str | Path, dim: int) -> dict[str, np.ndarray]:
    """Plain-text word vectors: one token plus ``dim`` floats per line."""
    table: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8", errors="replace") as fh:
        for line in fh:
            parts = line.rstrip("\n").split(" ")
            if len(parts) != dim + 1:
                continue
            try:
                table[parts[0]] = np.asarray([float(x) for x in parts[1:]])
            except ValueError:
                continue  # header or malformed row
    return table


class NodeModel:
    """Stage-1 parameters plus the forward passes built on them."""

    def __init__(self, schema: VerticalSchema, vocab: Vocab, cfg: NodeModelConfig,
                 params: dict[str, nn.Parameter] | None = None,
                 rng: np.random.Generator | None = None,
                 word_vectors: dict[str, np.ndarray] | None = None):
        self.schema = schema
        self.vocab = vocab
        self.cfg = cfg
        self.loss_history: list[float] = []
        if params is not None:
            self.params = params
        else:
            if rng is None:
                raise ValueError("either params or an rng is required")
            self.params = self._init_params(rng, word_vectors)

    def _init_params(self, rng: np.random.Generator,
                     word_vectors: dict[str, np.ndarray] | None) -> dict[str, nn.Parameter]:
        cfg = self.cfg
        params: dict[str, nn.Parameter] = {}

        def put(p: nn.Parameter) -> nn.Parameter:
            params[p.name] = p
            return p

        put(nn.embedding_param("char_emb", (self.vocab.char_size, cfg.dim_char), rng))
        word_emb = put(nn.embedding_param("word_emb", (self.vocab.word_size, cfg.dim_word), rng))
        if word_vectors:
            hits = 0
            for token, idx in self.vocab.word_to_id.items():
                vec = word_vectors.get(token)
                if vec is not None and vec.shape == (cfg.dim_word,):
                    word_emb.data[idx] = vec
                    hits += 1
            logger.info("initialized %d/%d word rows from pretrained vectors",
                        hits, len(self.vocab.word_to_id))
        put(nn.uniform_param("cnn_filters", (cfg.cnn_kernel, cfg.dim_char, cfg.cnn_filters), rng))
        put(nn.zeros_param("cnn_bias", (cfg.cnn_filters,)))
        token_dim = cfg.dim_word + cfg.cnn_filters
        for view, total in (("node", cfg.lstm_hidden_node_text),
                            ("prev", cfg.lstm_hidden_prev_text)):
            half = total // 2
            for direction in ("fwd", "bwd"):
                wx, wh, b = nn.lstm_weight_params(f"{view}_lstm_{direction}", token_dim, half, rng)
                put(wx), put(wh), put(b)
        put(nn.embedding_param("tag_emb", (self.vocab.tag_size, cfg.dim_tag), rng))
        put(nn.embedding_param("type_emb", (self.vocab.type_size, cfg.dim_type), rng))
        put(nn.uniform_param("mlp_w1", (cfg.node_vector_dim, cfg.mlp_hidden), rng))
        put(nn.zeros_param("mlp_b1", (cfg.mlp_hidden,)))
        put(nn.uniform_param("mlp_w2", (cfg.mlp_hidden, self.schema.k + 1), rng))
        put(nn.zeros_param("mlp_b2", (self.schema.k + 1,)))
        return params

    # -- forward passes -----------------------------------------------------

    def _lstm_weights(self, view: str, direction: str):
        p = self.params
        return (p[f"{view}_lstm_{direction}_wx"], p[f"{view}_lstm_{direction}_wh"],
                p[f"{view}_lstm_{direction}_b"])

    def _char_vector(self, char_ids: list[int],
                     cache: dict[tuple, nn.Tensor] | None) -> nn.Tensor:
        # repeated tokens share one CNN subgraph; gradients add up per reuse
        if cache is None:
            key = None
        else:
            key = tuple(char_ids)
            hit = cache.get(key)
            if hit is not None:
                return hit
        vec = nn.conv1d_maxpool(
            nn.embed_lookup(self.params["char_emb"], char_ids),
            self.params["cnn_filters"], self.params["cnn_bias"])
        if cache is not None:
            cache[key] = vec
        return vec

    def encode_text_view(self, tokens: Sequence[tuple[int, list[int]]], which: str,
                         char_cache: dict[tuple, nn.Tensor] | None = None) -> nn.Tensor:
        """CNN-over-chars per token, concatenated with the word embedding,
        then bilstm_avg; an empty token list yields the zero vector."""
        total = (self.cfg.lstm_hidden_node_text if which == "node"
                 else self.cfg.lstm_hidden_prev_text)
        if not tokens:
            return nn.constant(np.zeros(total))
        char_vecs = [self._char_vector(char_ids, char_cache) for _, char_ids in tokens]
        word_rows = nn.embed_lookup(self.params["word_emb"], [w for w, _ in tokens])
        token_matrix = nn.concat([word_rows, nn.stack_rows(char_vecs)], axis=1)
        return nn.bilstm_avg(token_matrix, self._lstm_weights(which, "fwd"),
                             self._lstm_weights(which, "bwd"))

    def encode_discrete_view(self, tag_ids: set[int], type_ids: set[int]) -> nn.Tensor:
        """Elementwise max over active feature embeddings in each bag;
        empty bags pool to zero."""
        parts = []
        for ids, table, dim in ((tag_ids, "tag_emb", self.cfg.dim_tag),
                                (type_ids, "type_emb", self.cfg.dim_type)):
            if ids:
                rows = nn.embed_lookup(self.params[table], sorted(ids))
                parts.append(nn.max_rows(rows))
            else:
                parts.append(nn.constant(np.zeros(dim)))
        return nn.concat(parts)

    def encode_node(self, bundle: NodeFeatureBundle,
                    char_cache: dict[tuple, nn.Tensor] | None = None) -> nn.Tensor:
        """Fixed concatenation: node text, preceding text, discrete."""
        return nn.concat([
            self.encode_text_view(bundle.node_tokens, "node", char_cache),
            self.encode_text_view(bundle.prev_tokens, "prev", char_cache),
            self.encode_discrete_view(bundle.tag_features, bundle.type_features),
        ])

    def classify_node(self, vector: nn.Tensor, mode: str = "infer",
                      rng: np.random.Generator | None = None) -> nn.Tensor:
        hidden = nn.dense(vector, self.params["mlp_w1"], self.params["mlp_b1"],
                          activation="relu")
        hidden = nn.dropout(hidden, self.cfg.dropout, mode, rng)
        return nn.dense(hidden, self.params["mlp_w2"], self.params["mlp_b2"])

    def example_loss(self, bundle: NodeFeatureBundle, label: int,
                     rng: np.random.Generator,
                     char_cache: dict[tuple, nn.Tensor] | None = None) -> nn.Tensor:
        logits = self.classify_node(self.encode_node(bundle, char_cache),
                                    mode="train", rng=rng)
        loss, _ = nn.softmax_xent(logits, label)
        return loss

    def predict_bundle(self, bundle: NodeFeatureBundle,
                       char_cache: dict[tuple, nn.Tensor] | None = None
                       ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(scores, probs, node_vector) with dropout disabled, no graph."""
        with nn.no_grad():
            vector = self.encode_node(bundle, char_cache)
            logits = self.classify_node(vector, mode="infer")
        probs = nn.softmax_probs(logits.data)
        return logits.data.copy(), probs, vector.data.copy()

    def parameters(self) -> list[nn.Parameter]:
        return [self.params[name] for name in sorted(self.params)]


def train_node_model(examples: Sequence[tuple[NodeFeatureBundle, int]],
                     vocab: Vocab, schema: VerticalSchema, cfg: NodeModelConfig,
                     seed: int = 0,
                     word_vectors: dict[str, np.ndarray] | None = None) -> NodeModel:
    """Adam-train the node classifier on every retained node of the seed
    pages (labels: matched field index, or K for none)."""
    if not examples:
        raise EmptyTrainingSet("no node examples to train on")
    rng = np.random.default_rng(seed)
    model = NodeModel(schema, vocab, cfg, rng=rng, word_vectors=word_vectors)
    state = nn.AdamState()
    order = np.arange(len(examples))
    for epoch in range(cfg.epochs):
        rng.shuffle(order)
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            char_cache: dict[tuple, nn.Tensor] = {}
            losses = [model.example_loss(*examples[i], rng=rng, char_cache=char_cache)
                      for i in batch]
            batch_loss = nn.mean_stack(losses)
            batch_loss.backward()
            nn.adam_step(model.parameters(), state)
            total += batch_loss.item() * len(batch)
        epoch_loss = total / len(order)
        model.loss_history.append(epoch_loss)
        logger.info("node model epoch %d/%d: loss %.4f", epoch + 1, cfg.epochs, epoch_loss)
    return model


def predict_nodes(model: NodeModel, pages: Sequence[tuple[list, list[NodeFeatureBundle]]]
                  ) -> list[list[NodePrediction]]:
    """Stage-1 predictions for already-featurized pages.

    ``pages`` holds (nodes, bundles) pairs; every retained node gets a
    prediction with its full score vector and frozen node vector.
    """
    out: list[list[NodePrediction]] = []
    char_cache: dict[tuple, nn.Tensor] = {}  # weights frozen: reuse across pages
    for nodes, bundles in pages:
        preds = []
        for node, bundle in zip(nodes, bundles):
            scores, probs, vector = model.predict_bundle(bundle, char_cache)
            preds.append(NodePrediction(
                ordinal=node.ordinal, xpath=node.xpath, text=node.text,
                label_index=int(np.argmax(probs)), scores=scores, probs=probs,
                vector=vector))
        out.append(preds)
    return out
