"""Variable-node filtering: distinct-text stats, top-k selection, application."""

from __future__ import annotations

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from domex.corpus import load_vertical, match_truth_nodes
from domex.dom import DomNode, Page, SiteCorpus, VerticalSchema
from domex.filtering import apply_filter, collect_xpath_stats, filter_site, \
    select_variable_nodes
from domex.synth import DEFAULT_FIELDS, generate_synthetic_corpus

SCHEMA = VerticalSchema("v", ("f",))


def _site(pages_texts: list[dict[str, str]]) -> SiteCorpus:
    """Build a site from per-page {xpath: text} maps."""
    pages = []
    for i, mapping in enumerate(pages_texts):
        nodes = [DomNode(x, t, "p", j) for j, (x, t) in enumerate(sorted(mapping.items()))]
        pages.append(Page(page_id=f"{i:04d}", site_id="s", nodes=nodes))
    return SiteCorpus(site_id="s", vertical=SCHEMA, pages=pages)


def test_constant_node_counts_one():
    site = _site([{"/a[1]": "x"}, {"/a[1]": "x"}, {"/a[1]": "x"}])
    assert collect_xpath_stats(site).counts["/a[1]"] == 1


def test_two_distinct_texts_counts_two():
    site = _site([{"/b[1]": "p"}, {"/b[1]": "q"}, {"/b[1]": "p"}])
    stats = collect_xpath_stats(site)
    assert stats.counts["/b[1]"] == 2
    assert stats.support["/b[1]"] == 3


def test_counts_match_brute_force_oracle():
    rng = np.random.default_rng(0)
    xpaths = [f"/x[{i}]" for i in range(500)]
    pages = []
    for _ in range(8):
        pages.append({x: str(rng.integers(0, 4)) for x in xpaths})
    site = _site(pages)
    stats = collect_xpath_stats(site)
    for x in xpaths:
        expected = len({p[x] for p in pages})
        assert stats.counts[x] == expected


def test_all_constant_selects_nothing():
    site = _site([{"/a[1]": "x", "/b[1]": "y"}] * 3)
    stats = collect_xpath_stats(site)
    assert select_variable_nodes(stats) == set()


def test_threshold_keeps_counts_at_least_two():
    site = _site([
        {"/a[1]": "1", "/b[1]": "p", "/c[1]": "k"},
        {"/a[1]": "2", "/b[1]": "q", "/c[1]": "k"},
        {"/a[1]": "3", "/b[1]": "p", "/c[1]": "k"},
        {"/a[1]": "4", "/b[1]": "q", "/c[1]": "k"},
        {"/a[1]": "5", "/b[1]": "p", "/c[1]": "k"},
    ])
    stats = collect_xpath_stats(site)
    assert stats.counts == {"/a[1]": 5, "/b[1]": 2, "/c[1]": 1}
    assert select_variable_nodes(stats, 500) == {"/a[1]", "/b[1]"}


def test_top_k_truncation_matches_full_sort_oracle():
    rng = np.random.default_rng(1)
    pages = []
    xpaths = [f"/n[{i}]" for i in range(600)]
    for _ in range(12):
        pages.append({x: str(rng.integers(0, 12)) for x in xpaths})
    site = _site(pages)
    stats = collect_xpath_stats(site)
    got = select_variable_nodes(stats, k=500)
    ranked = sorted(
        (x for x, c in stats.counts.items() if c >= 2),
        key=lambda x: (-stats.counts[x], -stats.support[x], x))
    assert got == set(ranked[:500])
    assert len(got) == 500


def test_apply_filter_identity_and_empty():
    site = _site([{"/a[1]": "x", "/b[1]": "y"}])
    page = site.pages[0]
    kept = apply_filter(page, {"/a[1]", "/b[1]"})
    assert [(n.xpath, n.ordinal) for n in kept.nodes] == [("/a[1]", 0), ("/b[1]", 1)]
    assert apply_filter(page, set()).nodes == []


def test_apply_filter_reassigns_ordinals_in_document_order():
    nodes = [DomNode(f"/x[{i}]", f"t{i}", "p", i) for i in range(5)]
    page = Page("p", "s", nodes)
    kept = apply_filter(page, {"/x[1]", "/x[3]", "/x[4]"})
    assert [(n.xpath, n.ordinal) for n in kept.nodes] == [
        ("/x[1]", 0), ("/x[3]", 1), ("/x[4]", 2)]
    assert kept.raw_nodes == nodes


def test_selection_invariant_to_page_order():
    rng = np.random.default_rng(2)
    pages = [{f"/n[{i}]": str(rng.integers(0, 3)) for i in range(30)} for _ in range(6)]
    forward = collect_xpath_stats(_site(pages))
    backward = collect_xpath_stats(_site(pages[::-1]))
    assert select_variable_nodes(forward, 10) == select_variable_nodes(backward, 10)


@settings(max_examples=60, deadline=None, derandomize=True)
@given(st.lists(st.dictionaries(st.sampled_from([f"/n[{i}]" for i in range(12)]),
                                st.integers(0, 3).map(str), min_size=1),
                min_size=1, max_size=6),
       st.integers(1, 8))
def test_selection_size_and_threshold_properties(pages, k):
    site = _site(pages)
    stats = collect_xpath_stats(site)
    selected = select_variable_nodes(stats, k)
    assert len(selected) <= k
    assert all(stats.counts[x] >= 2 for x in selected)


def test_filter_never_drops_truth_nodes_on_synthetic_corpus(tmp_path):
    # fixed templates: every field value varies across pages at its own xpath
    schema = VerticalSchema("synthcars", DEFAULT_FIELDS)
    root = generate_synthetic_corpus(tmp_path, n_sites=3, pages_per_site=8,
                                     decoys=False, seed=21)
    for site in load_vertical(root, schema):
        filtered, _ = filter_site(site)
        for raw_page, kept_page in zip(site.pages, filtered.pages):
            raw = match_truth_nodes(raw_page, schema)
            kept = match_truth_nodes(kept_page, schema)
            for field_name in schema.fields:
                if raw[field_name]:
                    assert kept[field_name], (site.site_id, raw_page.page_id, field_name)


def test_mean_retained_nodes_close_to_recount_oracle(tmp_path):
    schema = VerticalSchema("synthcars", DEFAULT_FIELDS)
    root = generate_synthetic_corpus(tmp_path, n_sites=1, pages_per_site=12, seed=8)
    site = load_vertical(root, schema)[0]
    filtered, stats = filter_site(site)
    mean_retained = sum(len(p.nodes) for p in filtered.pages) / len(filtered.pages)
    # oracle: recount variable xpaths (>= 2 distinct texts) per page directly
    variable = {x for x, c in stats.counts.items() if c >= 2}
    oracle = sum(
        sum(1 for n in p.nodes if n.xpath in variable) for p in site.pages
    ) / len(site.pages)
    assert oracle > 0
    assert abs(mean_retained - oracle) <= 0.2 * oracle
