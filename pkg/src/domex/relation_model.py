"""Stage 2: node-pair relation network over stage-1 outputs.

Fields with at least one stage-1 prediction are "certain" (their predicted
nodes are anchors); the rest are "uncertain" and contribute their top-m
candidates by raw stage-1 score.  Ordered pairs over distinct fields are
classified into {(N,N), (N,V), (V,N), (V,V)}; per-node Value votes are
aggregated with threshold N, and site-level XPath voting corrects outlier
pages afterwards.

Stage-1 node vectors enter as frozen constants: no gradient flows back into
stage-1 parameters.
"""

from __future__ import annotations

import logging
import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import nn
from .dom import Page, VerticalSchema
from .errors import EmptyTrainingSet, MalformedXPath, NoPairsConstructed
from .node_model import NodePrediction

logger = logging.getLogger(__name__)

# pair-label class ids: head Value doubles, tail Value adds one
PAIR_LABEL_NAMES = ("NN", "NV", "VN", "VV")


def pair_label_index(head_is_value: bool, tail_is_value: bool) -> int:
    return 2 * int(head_is_value) + int(tail_is_value)


@dataclass
class RelationConfig:
    dim_xpath_tag: int = 30
    xpath_lstm_hidden: int = 100  # total across both directions
    dim_pos: int = 30
    pos_buckets: int = 100
    mlp_hidden: int = 100
    dropout: float = 0.3
    epochs: int = 10
    batch_size: int = 32
    vote_threshold: int = 1
    m: int = 10

    def pair_vector_dim(self, node_vector_dim: int) -> int:
        return 2 * node_vector_dim + 2 * self.xpath_lstm_hidden + 2 * self.dim_pos

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, data: dict) -> "RelationConfig":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass
class CertaintyPartition:
    """Stage-1 split of fields plus the nodes carried into pair construction.

    ``certain`` maps a field to its anchor ordinals (best score first);
    ``uncertain`` maps a field to its top-m candidate ordinals.
    """

    certain: dict[str, list[int]]
    uncertain: dict[str, list[int]]
    m: int

    @property
    def t(self) -> int:
        return len(self.certain)


@dataclass(frozen=True)
class NodePair:
    head_ordinal: int
    head_field: str
    tail_ordinal: int
    tail_field: str
    label: int | None = None  # pair-label class id, training only


@dataclass
class PairVote:
    """Value-vote tally for one (node, field) assignment."""

    ordinal: int
    field_name: str
    x_total: int = 0
    value_votes: int = 0


def partition_fields(preds: Sequence[NodePrediction], schema: VerticalSchema,
                     m: int = 10) -> CertaintyPartition:
    """Split fields by whether stage 1 predicted at least one node for them."""
    certain: dict[str, list[int]] = {}
    uncertain: dict[str, list[int]] = {}
    for idx, field_name in enumerate(schema.fields):
        anchors = [p for p in preds if p.label_index == idx]
        if anchors:
            anchors.sort(key=lambda p: (-p.scores[idx], p.ordinal))
            certain[field_name] = [p.ordinal for p in anchors]
        else:
            ranked = sorted(preds, key=lambda p: (-p.scores[idx], p.ordinal))
            uncertain[field_name] = [p.ordinal for p in ranked[:m]]
    return CertaintyPartition(certain=certain, uncertain=uncertain, m=m)


def construct_pairs(part: CertaintyPartition, schema: VerticalSchema,
                    truth_nodes: dict[str, set[int]] | None = None) -> list[NodePair]:
    """Ordered pairs over distinct fields.

    Certain fields contribute one representative anchor (their best), and
    uncertain fields all m candidates; pairs that would reuse the same node
    on both sides are skipped.  With one anchor per certain field and no
    shared candidates the count is T(T-1) + 2T(K-T)m + (K-T)(K-T-1)m².
    When ``truth_nodes`` is given, each side is labeled Value iff that node
    is ground truth for that side's field.
    """
    members: list[tuple[str, list[int]]] = []
    for field_name in schema.fields:
        if field_name in part.certain:
            members.append((field_name, part.certain[field_name][:1]))
        else:
            members.append((field_name, part.uncertain[field_name]))
    pairs: list[NodePair] = []
    for head_field, head_nodes in members:
        for tail_field, tail_nodes in members:
            if head_field == tail_field:
                continue
            for h in head_nodes:
                for t in tail_nodes:
                    if h == t:
                        continue
                    label = None
                    if truth_nodes is not None:
                        label = pair_label_index(
                            h in truth_nodes.get(head_field, set()),
                            t in truth_nodes.get(tail_field, set()))
                    pairs.append(NodePair(h, head_field, t, tail_field, label))
    return pairs


_XPATH_STEP_RE = re.compile(r"/([^/\[\]]+)(?:\[\d+\])?")


def xpath_tags(xpath: str) -> list[str]:
    """Tag sequence with sibling indices stripped: /html[1]/div[2] -> [html, div]."""
    if not xpath or not xpath.startswith("/"):
        raise MalformedXPath(f"cannot parse xpath {xpath!r}")
    tags = _XPATH_STEP_RE.findall(xpath)
    if not tags:
        raise MalformedXPath(f"cannot parse xpath {xpath!r}")
    return [t.lower() for t in tags]


def position_bucket(ordinal: int, page_size: int, buckets: int = 100) -> int:
    """Bucket = floor(ordinal * L / page_size), clamped to [0, L-1]."""
    raw = ordinal * buckets // max(page_size, 1)
    return min(max(raw, 0), buckets - 1)


def build_xpath_tag_vocab(pages: Sequence[Page]) -> dict[str, int]:
    """Tag table for the XPath encoder; id 0 is the OOV bucket."""
    tags: set[str] = set()
    for page in pages:
        for node in page.nodes:
            tags.update(xpath_tags(node.xpath))
    return {"<unk>": 0, **{t: i + 1 for i, t in enumerate(sorted(tags))}}


@dataclass
class PairExample:
    """One training/inference pair flattened to model inputs."""

    head_xpath: str
    tail_xpath: str
    head_vector: np.ndarray
    tail_vector: np.ndarray
    head_bucket: int
    tail_bucket: int
    label: int | None = None


class RelationModel:
    """Pair-stage parameters plus the forward passes built on them."""

    def __init__(self, schema: VerticalSchema, cfg: RelationConfig,
                 xpath_tag_to_id: dict[str, int], node_vector_dim: int,
                 params: dict[str, nn.Parameter] | None = None,
                 rng: np.random.Generator | None = None):
        self.schema = schema
        self.cfg = cfg
        self.xpath_tag_to_id = xpath_tag_to_id
        self.node_vector_dim = node_vector_dim
        self.loss_history: list[float] = []
        if params is not None:
            self.params = params
        else:
            if rng is None:
                raise ValueError("either params or an rng is required")
            self.params = self._init_params(rng)

    def _init_params(self, rng: np.random.Generator) -> dict[str, nn.Parameter]:
        cfg = self.cfg
        params: dict[str, nn.Parameter] = {}

        def put(p: nn.Parameter) -> nn.Parameter:
            params[p.name] = p
            return p

        put(nn.embedding_param("xpath_tag_emb", (len(self.xpath_tag_to_id), cfg.dim_xpath_tag), rng))
        half = cfg.xpath_lstm_hidden // 2
        for direction in ("fwd", "bwd"):
            wx, wh, b = nn.lstm_weight_params(f"xpath_lstm_{direction}", cfg.dim_xpath_tag, half, rng)
            put(wx), put(wh), put(b)
        put(nn.embedding_param("pos_emb", (cfg.pos_buckets, cfg.dim_pos), rng))
        pair_dim = cfg.pair_vector_dim(self.node_vector_dim)
        put(nn.uniform_param("pair_w1", (pair_dim, cfg.mlp_hidden), rng))
        put(nn.zeros_param("pair_b1", (cfg.mlp_hidden,)))
        put(nn.uniform_param("pair_w2", (cfg.mlp_hidden, 4), rng))
        put(nn.zeros_param("pair_b2", (4,)))
        return params

    def encode_xpath(self, xpath: str) -> nn.Tensor:
        """Tag-embedding lookup followed by bilstm_avg over the tag sequence."""
        ids = [self.xpath_tag_to_id.get(t, 0) for t in xpath_tags(xpath)]
        rows = nn.embed_lookup(self.params["xpath_tag_emb"], ids)
        p = self.params
        return nn.bilstm_avg(
            rows,
            (p["xpath_lstm_fwd_wx"], p["xpath_lstm_fwd_wh"], p["xpath_lstm_fwd_b"]),
            (p["xpath_lstm_bwd_wx"], p["xpath_lstm_bwd_wh"], p["xpath_lstm_bwd_b"]))

    def position_feature(self, bucket: int) -> nn.Tensor:
        rows = nn.embed_lookup(self.params["pos_emb"], [bucket])
        return nn.reshape(rows, (self.cfg.dim_pos,))

    def encode_pair(self, example: PairExample,
                    xpath_cache: dict[str, nn.Tensor] | None = None) -> nn.Tensor:
        """Concatenation [n_h, n_t, xpath_h, xpath_t, pos_h, pos_t].

        ``xpath_cache`` shares encoder outputs for repeated XPaths inside one
        batch graph; gradients accumulate through every reuse.
        """
        def xp(xpath: str) -> nn.Tensor:
            if xpath_cache is None:
                return self.encode_xpath(xpath)
            hit = xpath_cache.get(xpath)
            if hit is None:
                hit = xpath_cache[xpath] = self.encode_xpath(xpath)
            return hit

        return nn.concat([
            nn.constant(example.head_vector),
            nn.constant(example.tail_vector),
            xp(example.head_xpath),
            xp(example.tail_xpath),
            self.position_feature(example.head_bucket),
            self.position_feature(example.tail_bucket),
        ])

    def classify_pair(self, pair_vector: nn.Tensor, mode: str = "infer",
                      rng: np.random.Generator | None = None) -> nn.Tensor:
        hidden = nn.dense(pair_vector, self.params["pair_w1"], self.params["pair_b1"],
                          activation="relu")
        hidden = nn.dropout(hidden, self.cfg.dropout, mode, rng)
        return nn.dense(hidden, self.params["pair_w2"], self.params["pair_b2"])

    def predict_pairs(self, examples: Sequence[PairExample]) -> list[int]:
        """Argmax pair-label ids, dropout off, no graph."""
        labels: list[int] = []
        with nn.no_grad():
            cache: dict[str, nn.Tensor] = {}
            for ex in examples:
                logits = self.classify_pair(self.encode_pair(ex, cache))
                labels.append(int(np.argmax(nn.softmax_probs(logits.data))))
        return labels

    def parameters(self) -> list[nn.Parameter]:
        return [self.params[name] for name in sorted(self.params)]


def pairs_to_examples(pairs: Sequence[NodePair], preds: Sequence[NodePrediction],
                      cfg: RelationConfig) -> list[PairExample]:
    """Flatten pairs into model inputs (frozen vectors, buckets, xpaths)."""
    by_ordinal = {p.ordinal: p for p in preds}
    page_size = len(preds)
    out = []
    for pair in pairs:
        head = by_ordinal[pair.head_ordinal]
        tail = by_ordinal[pair.tail_ordinal]
        out.append(PairExample(
            head_xpath=head.xpath, tail_xpath=tail.xpath,
            head_vector=head.vector, tail_vector=tail.vector,
            head_bucket=position_bucket(head.ordinal, page_size, cfg.pos_buckets),
            tail_bucket=position_bucket(tail.ordinal, page_size, cfg.pos_buckets),
            label=pair.label))
    return out


def train_relation_model(examples: Sequence[PairExample], schema: VerticalSchema,
                         cfg: RelationConfig, xpath_tag_to_id: dict[str, int],
                         node_vector_dim: int, seed: int = 0) -> RelationModel:
    """Adam-train the pair classifier on labeled pair examples."""
    if not examples:
        raise NoPairsConstructed("stage-1 output yielded no trainable pairs")
    if any(ex.label is None for ex in examples):
        raise EmptyTrainingSet("training pairs must carry labels")
    rng = np.random.default_rng(seed)
    model = RelationModel(schema, cfg, xpath_tag_to_id, node_vector_dim, rng=rng)
    state = nn.AdamState()
    order = np.arange(len(examples))
    label_counts = Counter(ex.label for ex in examples)
    logger.info("pair-label distribution: %s",
                {PAIR_LABEL_NAMES[k]: v for k, v in sorted(label_counts.items())})
    for epoch in range(cfg.epochs):
        rng.shuffle(order)
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            cache: dict[str, nn.Tensor] = {}
            losses = []
            for i in batch:
                ex = examples[i]
                logits = model.classify_pair(
                    model.encode_pair(ex, cache), mode="train", rng=rng)
                loss, _ = nn.softmax_xent(logits, ex.label)
                losses.append(loss)
            batch_loss = nn.mean_stack(losses)
            batch_loss.backward()
            nn.adam_step(model.parameters(), state)
            total += batch_loss.item() * len(batch)
        epoch_loss = total / len(order)
        model.loss_history.append(epoch_loss)
        logger.info("pair model epoch %d/%d: loss %.4f", epoch + 1, cfg.epochs, epoch_loss)
    return model


def tally_votes(pairs: Sequence[NodePair], labels: Sequence[int]) -> dict[tuple[int, str], PairVote]:
    """Each node in X pairs receives X labels; count its Value votes."""
    votes: dict[tuple[int, str], PairVote] = {}

    def bump(ordinal: int, field_name: str, is_value: bool) -> None:
        key = (ordinal, field_name)
        vote = votes.get(key)
        if vote is None:
            vote = votes[key] = PairVote(ordinal, field_name)
        vote.x_total += 1
        vote.value_votes += int(is_value)

    for pair, label in zip(pairs, labels):
        bump(pair.head_ordinal, pair.head_field, label >= 2)
        bump(pair.tail_ordinal, pair.tail_field, label % 2 == 1)
    return votes


def aggregate_votes(pairs: Sequence[NodePair], labels: Sequence[int],
                    part: CertaintyPartition, preds: Sequence[NodePrediction],
                    schema: VerticalSchema, n_threshold: int = 1) -> dict[str, int | None]:
    """Final per-field node choice for one page.

    Certain fields keep their best stage-1 anchor.  For an uncertain field,
    candidates with at least ``n_threshold`` Value votes are eligible; the
    winner has the most Value votes, ties broken by stage-1 score for the
    field, then lower ordinal.  No eligible candidate means the field is
    extracted as absent.
    """
    votes = tally_votes(pairs, labels)
    scores = {p.ordinal: p.scores for p in preds}
    choice: dict[str, int | None] = {}
    for idx, field_name in enumerate(schema.fields):
        if field_name in part.certain:
            choice[field_name] = part.certain[field_name][0]
            continue
        eligible = []
        for ordinal in part.uncertain[field_name]:
            vote = votes.get((ordinal, field_name))
            if vote is not None and vote.value_votes >= n_threshold:
                eligible.append((ordinal, vote.value_votes))
        if not eligible:
            choice[field_name] = None
            continue
        eligible.sort(key=lambda item: (-item[1], -scores[item[0]][idx], item[0]))
        choice[field_name] = eligible[0][0]
    return choice


def site_vote(page_choices: list[dict[str, int | None]], pages: Sequence[Page],
              fraction: float = 1.0) -> list[dict[str, int | None]]:
    """Site-level XPath voting.

    Pass 1 counts, per field, the chosen XPaths over the first
    ceil(fraction * P) pages; pass 2 re-selects the majority XPath in every
    page where it exists, keeping the original choice elsewhere.
    """
    if len(page_choices) != len(pages):
        raise ValueError("choices and pages must align")
    head = math.ceil(fraction * len(pages))
    counts: dict[str, Counter[str]] = {}
    for choice, page in zip(page_choices[:head], pages[:head]):
        for field_name, ordinal in choice.items():
            if ordinal is not None:
                counts.setdefault(field_name, Counter())[page.nodes[ordinal].xpath] += 1
    majority: dict[str, str] = {}
    for field_name, counter in counts.items():
        majority[field_name] = sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))[0][0]

    corrected: list[dict[str, int | None]] = []
    for choice, page in zip(page_choices, pages):
        by_xpath = {node.xpath: node.ordinal for node in page.nodes}
        new_choice = dict(choice)
        for field_name, xpath in majority.items():
            ordinal = by_xpath.get(xpath)
            if ordinal is not None:
                new_choice[field_name] = ordinal
        corrected.append(new_choice)
    return corrected
