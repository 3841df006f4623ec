"""Command-line interface.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import functools
import json
import logging
import sys
from pathlib import Path

import click

from . import config as config_mod
from . import report as report_mod
from .analysis import distance_matrix, voting_fraction_curve
from .corpus import corpus_from_source, load_vertical, save_corpus_cache
from .dom import SiteCorpus, VerticalSchema
from .errors import DataError, DomexError, InsufficientSites, NumericError
from .experiment import (
    ExperimentSpec,
    node_examples_from,
    predict_site_choices,
    prepare_seed_sites,
    run_experiment,
    run_sweep,
    train_stage2_from_prepared,
)
from .features import featurize_page
from .filtering import DEFAULT_TOP_K, collect_xpath_stats, select_variable_nodes
from .metrics import assemble_predictions, metrics_to_dict, page_level_f1
from .modelio import load_models, save_models
from .node_model import load_word_vectors, predict_nodes, train_node_model
from .relation_model import site_vote
from .synth import DEFAULT_FIELDS, generate_synthetic_corpus


def exit_codes(fn):
    """Map library errors onto the documented process exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except NumericError as exc:
            click.echo(f"numeric failure: {exc}", err=True)
            sys.exit(4)
        except DataError as exc:
            click.echo(f"data error: {exc}", err=True)
            sys.exit(3)
        except DomexError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)

    return wrapper


def _load_sites(root: str, config: dict, vertical: str | None,
                fields: str | None) -> tuple[list[SiteCorpus], VerticalSchema]:
    path = Path(root)
    if path.is_file():
        sites = corpus_from_source(path)
        return sites, sites[0].vertical
    schema = config_mod.schema_from(config, vertical, fields)
    return load_vertical(path, schema), schema


def _comma_list(value: str | None) -> list[str] | None:
    if value is None:
        return None
    return [v.strip() for v in value.split(",") if v.strip()]


root_option = click.option("--root", required=True,
                           help="Corpus root directory, or a corpus-cache file.")
config_option = click.option("--config", "config_path", default=None,
                             type=click.Path(exists=True),
                             help="YAML config (flags override it).")
vertical_option = click.option("--vertical", default=None, help="Vertical name.")
fields_option = click.option("--fields", default=None,
                             help="Comma-separated field names.")


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def cli(verbose):
    """Structured field extraction from detail pages via two-stage neural
    DOM node classification."""
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


@cli.command()
@click.option("--out", required=True, type=click.Path(), help="Corpus output root.")
@click.option("--sites", default=6, show_default=True)
@click.option("--pages", default=50, show_default=True)
@click.option("--fields", default=",".join(DEFAULT_FIELDS), show_default=True)
@click.option("--decoys/--no-decoys", default=True, show_default=True,
              help="Plant a decoy-confusable date field.")
@click.option("--n-decoys", default=6, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--vertical", default="synthcars", show_default=True)
@click.option("--shared-template", is_flag=True,
              help="All sites share one template draw.")
@exit_codes
def synth(out, sites, pages, fields, decoys, n_decoys, seed, vertical, shared_template):
    """Generate a deterministic synthetic corpus."""
    root = generate_synthetic_corpus(
        out, n_sites=sites, pages_per_site=pages,
        fields=tuple(_comma_list(fields)), decoys=decoys, n_decoys=n_decoys,
        seed=seed, vertical=vertical, shared_template=shared_template)
    click.echo(f"wrote corpus under {root}")


@cli.command()
@root_option
@config_option
@vertical_option
@fields_option
@click.option("--cache", default=None, type=click.Path(),
              help="Write a corpus cache container here.")
@exit_codes
def ingest(root, config_path, vertical, fields, cache):
    """Parse a corpus and print a summary (optionally cache it)."""
    config = config_mod.load_config(config_path)
    sites, schema = _load_sites(root, config, vertical, fields)
    total_pages = sum(len(s.pages) for s in sites)
    total_nodes = sum(len(p.nodes) for s in sites for p in s.pages)
    click.echo(f"vertical {schema.vertical_name}: {len(sites)} sites, "
               f"{total_pages} pages, {total_nodes} leaf nodes")
    for site in sites:
        mean_nodes = sum(len(p.nodes) for p in site.pages) / len(site.pages)
        flag = " (truth warnings)" if site.truth_warnings else ""
        click.echo(f"  {site.site_id}: {len(site.pages)} pages, "
                   f"{mean_nodes:.1f} nodes/page{flag}")
    if cache:
        save_corpus_cache(cache, sites)
        click.echo(f"cached to {cache}")


@cli.command("filter-stats")
@root_option
@config_option
@vertical_option
@fields_option
@click.option("--site", "only_site", default=None, help="Restrict to one site.")
@click.option("--top-k", default=None, type=int, help="Variable-node budget.")
@click.option("--dump-stats", default=None, type=click.Path(),
              help="Write per-XPath stats as JSON.")
@exit_codes
def filter_stats(root, config_path, vertical, fields, only_site, top_k, dump_stats):
    """Show variable-node filter statistics per site."""
    config = config_mod.load_config(config_path)
    sites, _ = _load_sites(root, config, vertical, fields)
    k = config_mod.top_k_from(config, top_k)
    dump = {}
    for site in sites:
        if only_site and site.site_id != only_site:
            continue
        stats = collect_xpath_stats(site)
        keep = select_variable_nodes(stats, k)
        retained = [sum(1 for n in p.nodes if n.xpath in keep) for p in site.pages]
        click.echo(f"{site.site_id}: {len(stats.counts)} xpaths, "
                   f"{len(keep)} variable, "
                   f"{sum(retained) / len(retained):.1f} retained nodes/page")
        dump[site.site_id] = {
            "counts": stats.counts,
            "support": stats.support,
            "kept": sorted(keep),
        }
    if dump_stats:
        Path(dump_stats).write_text(json.dumps(dump, indent=2, sort_keys=True),
                                    encoding="utf-8")
        click.echo(f"stats written to {dump_stats}")


@cli.command("train-node")
@root_option
@config_option
@vertical_option
@fields_option
@click.option("--seeds", required=True, help="Comma-separated seed site ids.")
@click.option("--out-ckpt", required=True, type=click.Path())
@click.option("--seed-rng", default=None, type=int, help="Training RNG seed.")
@click.option("--top-k", default=None, type=int)
@click.option("--epochs", default=None, type=int)
@click.option("--batch-size", default=None, type=int)
@click.option("--word-vectors", default=None, type=click.Path(exists=True),
              help="Pretrained word vectors (token + floats per line).")
@click.option("--dump-vocab", default=None, type=click.Path(),
              help="Also export the frozen vocabulary as JSON.")
@exit_codes
def train_node(root, config_path, vertical, fields, seeds, out_ckpt, seed_rng,
               top_k, epochs, batch_size, word_vectors, dump_vocab):
    """Train the stage-1 node classifier on seed sites."""
    config = config_mod.load_config(config_path)
    sites, schema = _load_sites(root, config, vertical, fields)
    by_id = {s.site_id: s for s in sites}
    seed_ids = _comma_list(seeds)
    missing = [s for s in seed_ids if s not in by_id]
    if missing:
        raise InsufficientSites(f"corpus lacks seed sites {missing}")
    node_cfg = config_mod.node_config_from(config, epochs=epochs, batch_size=batch_size)
    rng_seed = config_mod.seed_from(config, seed_rng)
    k = config_mod.top_k_from(config, top_k)

    prep = prepare_seed_sites(by_id, seed_ids, schema, k)
    if dump_vocab:
        Path(dump_vocab).write_text(
            json.dumps(prep.vocab.to_dict(), indent=2, sort_keys=True),
            encoding="utf-8")
    vectors = load_word_vectors(word_vectors, node_cfg.dim_word) if word_vectors else None
    model = train_node_model(node_examples_from(prep.prepared), prep.vocab,
                             schema, node_cfg, rng_seed, vectors)
    save_models(out_ckpt, model, seed_sites=seed_ids)
    click.echo(f"stage-1 checkpoint written to {out_ckpt} "
               f"(final epoch loss {model.loss_history[-1]:.4f})")


@cli.command("train-pair")
@root_option
@config_option
@click.option("--stage1-ckpt", required=True, type=click.Path(exists=True))
@click.option("--out-ckpt", required=True, type=click.Path())
@click.option("--seeds", default=None,
              help="Override the seed sites recorded in the checkpoint.")
@click.option("--m", default=None, type=int, help="Candidates per uncertain field.")
@click.option("--vote-threshold", default=None, type=int)
@click.option("--seed-rng", default=None, type=int)
@click.option("--top-k", default=None, type=int)
@click.option("--epochs", default=None, type=int)
@exit_codes
def train_pair(root, config_path, stage1_ckpt, out_ckpt, seeds, m, vote_threshold,
               seed_rng, top_k, epochs):
    """Train the stage-2 pair relation network on top of a stage-1 checkpoint."""
    config = config_mod.load_config(config_path)
    node_model, _, meta = load_models(stage1_ckpt)
    schema = node_model.schema
    sites, _ = _load_sites(root, config, schema.vertical_name, ",".join(schema.fields))
    by_id = {s.site_id: s for s in sites}
    seed_ids = _comma_list(seeds) or meta.get("seed_sites") or []
    if not seed_ids:
        raise InsufficientSites("no seed sites recorded or provided")
    relation_cfg = config_mod.relation_config_from(
        config, m=m, vote_threshold=vote_threshold, epochs=epochs)
    rng_seed = config_mod.seed_from(config, seed_rng)
    k = config_mod.top_k_from(config, top_k)

    # featurize under the checkpoint vocabulary so inputs match stage-1 training
    prep = prepare_seed_sites(by_id, seed_ids, schema, k, vocab=node_model.vocab)
    relation, _ = train_stage2_from_prepared(prep, node_model, relation_cfg, rng_seed)
    save_models(out_ckpt, node_model, relation, seed_sites=seed_ids)
    click.echo(f"two-stage checkpoint written to {out_ckpt} "
               f"(final epoch loss {relation.loss_history[-1]:.4f})")


@cli.command()
@root_option
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--sites", "sites_arg", default=None,
              help="Target sites (default: every site not in the seed list).")
@click.option("--stage", default=None, type=click.Choice(["1", "2"]),
              help="Force stage-1-only extraction even with a pair model.")
@click.option("--voting/--no-voting", default=True, show_default=True)
@click.option("--vote-fraction", default=1.0, show_default=True)
@click.option("--top-k", default=None, type=int)
@click.option("--out", "out_path", default=None, type=click.Path(),
              help="Write JSONL here instead of stdout.")
@click.option("--nodes-out", default=None, type=click.Path(),
              help="Also dump per-node stage-1 predictions as JSONL.")
@exit_codes
def predict(root, ckpt, sites_arg, stage, voting, vote_fraction, top_k, out_path,
            nodes_out):
    """Extract field values from target sites; emits JSON lines
    {page_id, field, xpath, text, stage}."""
    node_model, relation, meta = load_models(ckpt)
    schema = node_model.schema
    config: dict = {}
    sites, _ = _load_sites(root, config, schema.vertical_name, ",".join(schema.fields))
    by_id = {s.site_id: s for s in sites}
    seed_ids = set(meta.get("seed_sites") or [])
    target_ids = _comma_list(sites_arg) or [s for s in sorted(by_id) if s not in seed_ids]
    missing = [s for s in target_ids if s not in by_id]
    if missing:
        raise InsufficientSites(f"corpus lacks sites {missing}")
    if stage == "1":
        relation = None
    k = top_k if top_k is not None else DEFAULT_TOP_K

    records = []
    node_records = []
    for sid in target_ids:
        pages, s1, s2 = predict_site_choices(node_model, relation, by_id[sid], k)
        final = s2 if s2 is not None else s1
        stage_name = "2" if s2 is not None else "1"
        if voting:
            final = site_vote(final, pages, vote_fraction)
            stage_name = "voted"
        for choice, page in zip(final, pages):
            for field_name in schema.fields:
                ordinal = choice.get(field_name)
                if ordinal is None:
                    continue
                node = page.nodes[ordinal]
                records.append({"page_id": page.page_id, "site_id": sid,
                                "field": field_name, "xpath": node.xpath,
                                "text": node.text, "stage": stage_name})
        if nodes_out:
            preds_per_page = predict_nodes(
                node_model, [(p.nodes, featurize_page(p, node_model.vocab))
                             for p in pages])
            for page, preds in zip(pages, preds_per_page):
                for p in preds:
                    node_records.append({
                        "page_id": page.page_id, "site_id": sid, "xpath": p.xpath,
                        "label": p.field_label(schema),
                        "probs": [round(float(x), 6) for x in p.probs]})

    lines = "\n".join(json.dumps(r, sort_keys=True) for r in records)
    if out_path:
        Path(out_path).write_text(lines + "\n", encoding="utf-8")
        click.echo(f"{len(records)} extractions written to {out_path}")
    else:
        click.echo(lines)
    if nodes_out:
        Path(nodes_out).write_text(
            "\n".join(json.dumps(r, sort_keys=True) for r in node_records) + "\n",
            encoding="utf-8")


@cli.command()
@root_option
@config_option
@vertical_option
@fields_option
@click.option("--pred", "pred_path", required=True, type=click.Path(exists=True),
              help="JSONL predictions from `domex predict`.")
@click.option("--out", "out_path", default=None, type=click.Path())
@exit_codes
def evaluate(root, config_path, vertical, fields, pred_path, out_path):
    """Score a predictions file against corpus ground truth."""
    config = config_mod.load_config(config_path)
    sites, schema = _load_sites(root, config, vertical, fields)
    records = [json.loads(line) for line in
               Path(pred_path).read_text(encoding="utf-8").splitlines() if line.strip()]
    if not all("site_id" in r for r in records):
        raise DataError("prediction records must carry site_id and page_id")
    pages = [p for s in sites for p in s.pages]
    covered_sites = {r["site_id"] for r in records}
    pages = [p for p in pages if p.site_id in covered_sites]
    page_key = [f"{p.site_id}/{p.page_id}" for p in pages]
    keyed = [{**r, "page_id": f"{r['site_id']}/{r['page_id']}"} for r in records]
    predictions = assemble_predictions(keyed, page_key, schema.fields)
    truths = [p.truth for p in pages]
    per_field, macro = page_level_f1(predictions, truths, schema.fields)
    payload = metrics_to_dict(per_field, macro)
    if out_path:
        report_mod.write_json(out_path, payload)
        click.echo(f"metrics written to {out_path}")
    click.echo(f"macro F1: {100 * macro:.2f}")
    for m in per_field:
        click.echo(f"  {m.field_name}: F1 {100 * m.page_f1:.2f} "
                   f"(P {100 * m.page_precision:.2f} R {100 * m.page_recall:.2f})")


@cli.command()
@root_option
@config_option
@vertical_option
@fields_option
@click.option("--k", default=3, show_default=True, help="Number of seed sites.")
@click.option("--perm", default=0, show_default=True, help="Cyclic permutation index.")
@click.option("--stage", default=2, type=click.IntRange(1, 2), show_default=True)
@click.option("--voting/--no-voting", default=True, show_default=True)
@click.option("--vote-fraction", default=1.0, show_default=True)
@click.option("--seed-rng", default=None, type=int)
@click.option("--top-k", default=None, type=int)
@click.option("--node-epochs", default=None, type=int)
@click.option("--pair-epochs", default=None, type=int)
@click.option("--out", "out_path", default=None, type=click.Path())
@exit_codes
def experiment(root, config_path, vertical, fields, k, perm, stage, voting,
               vote_fraction, seed_rng, top_k, node_epochs, pair_epochs, out_path):
    """One seed/target transfer experiment; prints the metrics table."""
    config = config_mod.load_config(config_path)
    sites, schema = _load_sites(root, config, vertical, fields)
    spec = ExperimentSpec(
        schema=schema, k=k, permutation=perm, stage=stage, voting=voting,
        vote_fraction=vote_fraction,
        seed=config_mod.seed_from(config, seed_rng),
        filter_top_k=config_mod.top_k_from(config, top_k),
        node_cfg=config_mod.node_config_from(config, epochs=node_epochs),
        relation_cfg=config_mod.relation_config_from(config, epochs=pair_epochs))
    result = run_experiment(sites, spec)
    if out_path:
        report_mod.write_json(out_path, result)
        click.echo(f"report written to {out_path}")
    click.echo(report_mod.metrics_table(result))


@cli.command()
@root_option
@config_option
@vertical_option
@fields_option
@click.option("--k", "k_values", default="3", show_default=True,
              help="Comma-separated k values.")
@click.option("--perms", default="0,1,2,3,4,5,6,7,8,9", show_default=True,
              help="Comma-separated permutation indices.")
@click.option("--stage", default=2, type=click.IntRange(1, 2), show_default=True)
@click.option("--voting/--no-voting", default=True, show_default=True)
@click.option("--seed-rng", default=None, type=int)
@click.option("--node-epochs", default=None, type=int)
@click.option("--pair-epochs", default=None, type=int)
@click.option("--out-dir", default=None, type=click.Path())
@exit_codes
def sweep(root, config_path, vertical, fields, k_values, perms, stage, voting,
          seed_rng, node_epochs, pair_epochs, out_dir):
    """Run a (k x permutation) grid and aggregate mean F1 per cell."""
    config = config_mod.load_config(config_path)
    sites, schema = _load_sites(root, config, vertical, fields)
    result = run_sweep(
        sites, schema,
        k_values=[int(v) for v in _comma_list(k_values)],
        permutations=[int(v) for v in _comma_list(perms)],
        stage=stage, voting=voting,
        seed=config_mod.seed_from(config, seed_rng),
        node_cfg=config_mod.node_config_from(config, epochs=node_epochs),
        relation_cfg=config_mod.relation_config_from(config, epochs=pair_epochs))
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        report_mod.write_json(out / "sweep.json", result)
        report_mod.sweep_to_csv(result, out / "sweep.csv")
        click.echo(f"sweep artifacts written under {out}")
    click.echo(report_mod.sweep_table(result))


@cli.command()
@root_option
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--sites", "sites_arg", default=None,
              help="Target sites (default: all non-seed sites).")
@click.option("--fractions", default="0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0",
              show_default=True)
@click.option("--figures/--no-figures", default=True, show_default=True,
              help="Render PNG figures next to the delimited series.")
@click.option("--top-k", default=None, type=int)
@exit_codes
def report(root, ckpt, out_dir, sites_arg, fractions, figures, top_k):
    """Analysis bundle: voting-fraction curve, per-site field distance
    matrices, and per-field F1, as delimited data plus figures."""
    from .filtering import DEFAULT_TOP_K

    node_model, relation, meta = load_models(ckpt)
    schema = node_model.schema
    sites, _ = _load_sites(root, {}, schema.vertical_name, ",".join(schema.fields))
    by_id = {s.site_id: s for s in sites}
    seed_ids = set(meta.get("seed_sites") or [])
    target_ids = _comma_list(sites_arg) or [s for s in sorted(by_id) if s not in seed_ids]
    k = top_k if top_k is not None else DEFAULT_TOP_K
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    site_results = []
    all_predictions = {"stage1": [], "stage2": [], "voted": []}
    all_truths = []
    for sid in target_ids:
        pages, s1, s2 = predict_site_choices(node_model, relation, by_id[sid], k)
        final = s2 if s2 is not None else s1
        site_results.append((final, pages))
        voted = site_vote(final, pages, 1.0)
        for variant, choices in (("stage1", s1), ("stage2", s2), ("voted", voted)):
            if choices is None:
                continue
            for choice, page in zip(choices, pages):
                row = {}
                for field_name, ordinal in choice.items():
                    row[field_name] = None if ordinal is None else (
                        page.nodes[ordinal].xpath, page.nodes[ordinal].text)
                all_predictions[variant].append(row)
        all_truths.extend(p.truth for p in pages)

    metrics = {}
    for variant, predictions in all_predictions.items():
        if predictions:
            per_field, macro = page_level_f1(predictions, all_truths, schema.fields)
            metrics[variant] = metrics_to_dict(per_field, macro)
    pseudo_report = {"spec": {"fields": list(schema.fields)}, "metrics": metrics}
    report_mod.write_json(out / "metrics.json", pseudo_report)
    report_mod.write_field_f1(pseudo_report, out, figures)

    points = voting_fraction_curve(
        site_results, schema, [float(v) for v in _comma_list(fractions)])
    report_mod.write_voting_curve(points, out, figures)

    for site in sites:
        matrix = distance_matrix(site, k)
        report_mod.write_distance_matrix(matrix, list(schema.fields), site.site_id,
                                         out, figures)
    click.echo(f"report bundle written under {out}")


def main():
    cli(prog_name="domex")


if __name__ == "__main__":
    main()
