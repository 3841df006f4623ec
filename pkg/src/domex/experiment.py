"""Experiment orchestration: cyclic seed/target splits, training both
stages on seed sites only, label-free transfer to target sites, and
page-level scoring.

Target-site labels are touched only inside the metrics computation; a
runtime assertion guards the split hygiene.
"""

from __future__ import annotations

import logging
import time
from collections import Counter
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .corpus import MatchDiagnostics, match_truth_nodes
from .dom import Page, SiteCorpus, VerticalSchema
from .errors import InsufficientSites, NoPairsConstructed
from .features import NodeFeatureBundle, Vocab, build_vocabs, featurize_page
from .filtering import DEFAULT_TOP_K, filter_site
from .metrics import metrics_to_dict, page_level_f1
from .node_model import NodeModel, NodeModelConfig, NodePrediction, predict_nodes, train_node_model
from .relation_model import (
    RelationConfig,
    RelationModel,
    aggregate_votes,
    build_xpath_tag_vocab,
    construct_pairs,
    pairs_to_examples,
    partition_fields,
    site_vote,
    train_relation_model,
)

logger = logging.getLogger(__name__)


def cyclic_split(site_ids: list[str], k: int, permutation: int) -> tuple[list[str], list[str]]:
    """Seeds are k consecutive sites starting at ``permutation`` (cyclic);
    targets are the rest, in order."""
    n = len(site_ids)
    if not 1 <= k < n:
        raise InsufficientSites(f"need k in [1, {n - 1}], got {k}")
    seeds = [site_ids[(permutation + i) % n] for i in range(k)]
    targets = [s for s in site_ids if s not in seeds]
    return seeds, targets


@dataclass
class ExperimentSpec:
    schema: VerticalSchema
    k: int = 3
    permutation: int = 0
    stage: int = 2
    voting: bool = True
    vote_fraction: float = 1.0
    seed: int = 0
    filter_top_k: int = DEFAULT_TOP_K
    site_order: list[str] | None = None  # defaults to lexicographic corpus order
    node_cfg: NodeModelConfig = dataclass_field(default_factory=NodeModelConfig)
    relation_cfg: RelationConfig = dataclass_field(default_factory=RelationConfig)

    def describe(self) -> dict:
        return {
            "vertical": self.schema.vertical_name,
            "fields": list(self.schema.fields),
            "k": self.k,
            "permutation": self.permutation,
            "stage": self.stage,
            "voting": self.voting,
            "vote_fraction": self.vote_fraction,
            "seed": self.seed,
            "filter_top_k": self.filter_top_k,
            "node_config": self.node_cfg.to_dict(),
            "relation_config": self.relation_cfg.to_dict(),
        }


@dataclass
class PreparedPage:
    page: Page
    bundles: list[NodeFeatureBundle]
    truth_nodes: dict[str, set[int]] | None = None
    labels: list[int] | None = None


def prepare_site(site: SiteCorpus, vocab: Vocab, schema: VerticalSchema,
                 with_labels: bool, diagnostics: MatchDiagnostics | None = None
                 ) -> list[PreparedPage]:
    """Featurize a (already filtered) site; optionally attach node labels."""
    prepared = []
    for page in site.pages:
        bundles = featurize_page(page, vocab)
        truth_nodes = labels = None
        if with_labels:
            truth_nodes = match_truth_nodes(page, schema, diagnostics)
            by_node: dict[int, int] = {}
            for idx, field_name in enumerate(schema.fields):
                for ordinal in truth_nodes[field_name]:
                    by_node.setdefault(ordinal, idx)
            labels = [by_node.get(n.ordinal, schema.k) for n in page.nodes]
        prepared.append(PreparedPage(page, bundles, truth_nodes, labels))
    return prepared


def _recall_ceiling_losses(raw_site: SiteCorpus, filtered_site: SiteCorpus,
                           schema: VerticalSchema) -> int:
    """(page, field) slots whose truth matches a raw node but no retained node."""
    losses = 0
    for raw_page, kept_page in zip(raw_site.pages, filtered_site.pages):
        raw_match = match_truth_nodes(raw_page, schema)
        kept_match = match_truth_nodes(kept_page, schema)
        for field_name in schema.fields:
            if raw_match[field_name] and not kept_match[field_name]:
                losses += 1
    return losses


def stage1_choices(preds: list[NodePrediction], schema: VerticalSchema) -> dict[str, int | None]:
    """Top-1 extraction straight from the node classifier: per field, the
    argmax-predicted node with the best raw score, else absent."""
    choice: dict[str, int | None] = {}
    for idx, field_name in enumerate(schema.fields):
        predicted = [p for p in preds if p.label_index == idx]
        if predicted:
            predicted.sort(key=lambda p: (-p.scores[idx], p.ordinal))
            choice[field_name] = predicted[0].ordinal
        else:
            choice[field_name] = None
    return choice


def stage2_choices(preds: list[NodePrediction], schema: VerticalSchema,
                   model: RelationModel, cfg: RelationConfig) -> dict[str, int | None]:
    part = partition_fields(preds, schema, cfg.m)
    pairs = construct_pairs(part, schema)
    if not pairs:
        # degenerate page (e.g. single retained node): fall back to stage 1
        return stage1_choices(preds, schema)
    examples = pairs_to_examples(pairs, preds, cfg)
    labels = model.predict_pairs(examples)
    return aggregate_votes(pairs, labels, part, preds, schema, cfg.vote_threshold)


def _choices_to_predictions(choices: list[dict[str, int | None]],
                            pages: list[Page]) -> list[dict[str, tuple[str, str] | None]]:
    out = []
    for choice, page in zip(choices, pages):
        row: dict[str, tuple[str, str] | None] = {}
        for field_name, ordinal in choice.items():
            row[field_name] = None if ordinal is None else (
                page.nodes[ordinal].xpath, page.nodes[ordinal].text)
        out.append(row)
    return out


def predict_site_choices(node_model: NodeModel, relation: RelationModel | None,
                         site: SiteCorpus, filter_top_k: int = DEFAULT_TOP_K
                         ) -> tuple[list[Page], list[dict[str, int | None]],
                                    list[dict[str, int | None]] | None]:
    """Label-free inference over one target site.

    Returns the filtered pages, stage-1 choices, and stage-2 choices (None
    when no pair model is given).
    """
    schema = node_model.schema
    filtered, _ = filter_site(site, filter_top_k)
    prepared = prepare_site(filtered, node_model.vocab, schema, False)
    preds_per_page = predict_nodes(
        node_model, [(p.page.nodes, p.bundles) for p in prepared])
    pages = [p.page for p in prepared]
    s1 = [stage1_choices(preds, schema) for preds in preds_per_page]
    s2 = None
    if relation is not None:
        s2 = [stage2_choices(preds, schema, relation, relation.cfg)
              for preds in preds_per_page]
    return pages, s1, s2


def build_pair_training_examples(prepared: list[PreparedPage],
                                 preds_per_page: list[list[NodePrediction]],
                                 schema: VerticalSchema, cfg: RelationConfig):
    """Pairs from the trained stage-1 model's own predictions on seed pages,
    labeled from ground-truth node matches."""
    examples = []
    label_counts: Counter[int] = Counter()
    for prep, preds in zip(prepared, preds_per_page):
        if not preds:
            continue
        part = partition_fields(preds, schema, cfg.m)
        pairs = construct_pairs(part, schema, truth_nodes=prep.truth_nodes)
        for ex in pairs_to_examples(pairs, preds, cfg):
            label_counts[ex.label] += 1
            examples.append(ex)
    return examples, label_counts


@dataclass
class SeedPreparation:
    """Everything derived from the seed sites before training."""

    prepared: list[PreparedPage]
    vocab: Vocab
    diagnostics: MatchDiagnostics
    recall_ceiling_losses: int


def prepare_seed_sites(sites_by_id: dict[str, SiteCorpus], seed_ids: list[str],
                       schema: VerticalSchema, filter_top_k: int,
                       vocab: Vocab | None = None) -> SeedPreparation:
    """Per-site variable-node filtering, shared vocabulary, node labels.

    Pass an existing ``vocab`` (e.g. from a checkpoint) to featurize under
    it instead of building a fresh one.
    """
    match_diag = MatchDiagnostics()
    filtered_seeds = []
    recall_ceiling = 0
    for sid in seed_ids:
        filtered, _ = filter_site(sites_by_id[sid], filter_top_k)
        recall_ceiling += _recall_ceiling_losses(sites_by_id[sid], filtered, schema)
        filtered_seeds.append(filtered)
    if vocab is None:
        vocab = build_vocabs(filtered_seeds)
    prepared: list[PreparedPage] = []
    for site in filtered_seeds:
        prepared.extend(prepare_site(site, vocab, schema, True, match_diag))
    return SeedPreparation(prepared, vocab, match_diag, recall_ceiling)


def node_examples_from(prepared: list[PreparedPage]) -> list[tuple[NodeFeatureBundle, int]]:
    return [
        (bundle, label)
        for prep in prepared
        for bundle, label in zip(prep.bundles, prep.labels)
    ]


def train_stage2_from_prepared(seed_prep: SeedPreparation, node_model: NodeModel,
                               relation_cfg: RelationConfig, seed: int
                               ) -> tuple[RelationModel, Counter]:
    """Pairs from the final stage-1 model's predictions on the seed pages."""
    seed_preds = predict_nodes(
        node_model, [(p.page.nodes, p.bundles) for p in seed_prep.prepared])
    pair_examples, pair_label_counts = build_pair_training_examples(
        seed_prep.prepared, seed_preds, node_model.schema, relation_cfg)
    if not pair_examples:
        raise NoPairsConstructed("no pairs could be built from seed pages")
    xpath_vocab = build_xpath_tag_vocab([p.page for p in seed_prep.prepared])
    relation = train_relation_model(
        pair_examples, node_model.schema, relation_cfg, xpath_vocab,
        node_model.cfg.node_vector_dim, seed)
    return relation, pair_label_counts


def run_experiment(sites: list[SiteCorpus], spec: ExperimentSpec) -> dict:
    """Train on seed sites, predict on target sites, and score.

    Returns a deterministic report dict (timings go to the log, not the
    report, so reruns with the same seed are byte-identical).
    """
    started = time.perf_counter()
    schema = spec.schema
    by_id = {s.site_id: s for s in sites}
    order = spec.site_order or sorted(by_id)
    missing = [s for s in order if s not in by_id]
    if missing:
        raise InsufficientSites(f"corpus lacks sites {missing}")
    seed_ids, target_ids = cyclic_split(order, spec.k, spec.permutation)
    assert not set(seed_ids) & set(target_ids), "split hygiene violated"
    logger.info("seeds=%s targets=%s", seed_ids, target_ids)

    seed_prep = prepare_seed_sites(by_id, seed_ids, schema, spec.filter_top_k)
    for prep in seed_prep.prepared:
        assert prep.page.site_id in seed_ids, "split hygiene violated"

    node_examples = node_examples_from(seed_prep.prepared)
    node_model = train_node_model(node_examples, seed_prep.vocab, schema,
                                  spec.node_cfg, spec.seed)
    logger.info("stage 1 trained on %d node examples in %.1fs",
                len(node_examples), time.perf_counter() - started)

    relation = None
    pair_label_counts: Counter[int] = Counter()
    if spec.stage >= 2:
        relation, pair_label_counts = train_stage2_from_prepared(
            seed_prep, node_model, spec.relation_cfg, spec.seed)
        logger.info("stage 2 trained")

    # target-side inference, one site at a time
    all_pages: list[Page] = []
    s1_predictions = []
    s2_predictions = []
    voted_predictions = []
    for sid in target_ids:
        pages, s1, s2 = predict_site_choices(node_model, relation, by_id[sid],
                                             spec.filter_top_k)
        final = s2 if s2 is not None else s1
        if s2 is not None:
            s2_predictions.extend(_choices_to_predictions(s2, pages))
        if spec.voting:
            voted = site_vote(final, pages, spec.vote_fraction)
            voted_predictions.extend(_choices_to_predictions(voted, pages))
        s1_predictions.extend(_choices_to_predictions(s1, pages))
        all_pages.extend(pages)

    truths = [p.truth for p in all_pages]
    report = {
        "spec": spec.describe(),
        "seeds": seed_ids,
        "targets": target_ids,
        "target_pages": len(all_pages),
        "metrics": {},
        "diagnostics": {
            "node_examples": len(node_examples),
            "node_epoch_losses": node_model.loss_history,
            "truth_conflicts": seed_prep.diagnostics.conflicts,
            "truth_unmatched_values": seed_prep.diagnostics.unmatched_values,
            "recall_ceiling_losses": seed_prep.recall_ceiling_losses,
        },
    }
    per_field, macro = page_level_f1(s1_predictions, truths, schema.fields)
    report["metrics"]["stage1"] = metrics_to_dict(per_field, macro)
    if relation is not None:
        per_field, macro = page_level_f1(s2_predictions, truths, schema.fields)
        report["metrics"]["stage2"] = metrics_to_dict(per_field, macro)
        report["diagnostics"]["pair_epoch_losses"] = relation.loss_history
        report["diagnostics"]["pair_label_distribution"] = {
            str(k): v for k, v in sorted(pair_label_counts.items())}
    if spec.voting:
        per_field, macro = page_level_f1(voted_predictions, truths, schema.fields)
        report["metrics"]["voted"] = metrics_to_dict(per_field, macro)
    logger.info("experiment finished in %.1fs", time.perf_counter() - started)
    return report


def final_macro_f1(report: dict) -> float:
    metrics = report["metrics"]
    for key in ("voted", "stage2", "stage1"):
        if key in metrics:
            return metrics[key]["macro_f1"]
    raise KeyError("report carries no metrics")


def run_sweep(sites: list[SiteCorpus], schema: VerticalSchema,
              k_values: list[int], permutations: list[int],
              stage: int = 2, voting: bool = True, seed: int = 0,
              node_cfg: NodeModelConfig | None = None,
              relation_cfg: RelationConfig | None = None,
              filter_top_k: int = DEFAULT_TOP_K) -> dict:
    """Mean final F1 per (k, stage) cell over the requested permutations."""
    runs = []
    cells: dict[str, dict] = {}
    for k in k_values:
        scores = []
        for perm in permutations:
            spec = ExperimentSpec(
                schema=schema, k=k, permutation=perm, stage=stage, voting=voting,
                seed=seed, filter_top_k=filter_top_k,
                node_cfg=node_cfg or NodeModelConfig(),
                relation_cfg=relation_cfg or RelationConfig())
            report = run_experiment(sites, spec)
            score = final_macro_f1(report)
            scores.append(score)
            runs.append({"k": k, "permutation": perm, "stage": stage,
                         "voting": voting, "macro_f1": score,
                         "metrics": report["metrics"]})
        cells[str(k)] = {
            "k": k,
            "stage": stage,
            "mean_macro_f1": float(np.mean(scores)),
            "per_permutation": scores,
        }
    return {"vertical": schema.vertical_name, "stage": stage, "voting": voting,
            "cells": cells, "runs": runs}
