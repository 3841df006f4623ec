"""Boilerplate removal: keep only "variable" leaf nodes.

Leaf nodes at an XPath whose text is constant across a site's pages are
navigation, headers, labels, and other template furniture; nodes whose text
takes at least two distinct values are candidate value carriers.  Stats are
computed per site from unlabeled pages, so the same filter applies to seed
and target sites alike.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .dom import Page, SiteCorpus, normalize_text

DEFAULT_TOP_K = 500


@dataclass
class XPathStats:
    """Distinct-text counts and page support per XPath across one site."""

    site_id: str
    counts: dict[str, int] = field(default_factory=dict)
    support: dict[str, int] = field(default_factory=dict)


def collect_xpath_stats(site: SiteCorpus) -> XPathStats:
    """Number of distinct normalized texts observed at each XPath."""
    texts: dict[str, set[str]] = {}
    support: dict[str, int] = {}
    for page in site.pages:
        for node in page.nodes:
            texts.setdefault(node.xpath, set()).add(normalize_text(node.text))
            support[node.xpath] = support.get(node.xpath, 0) + 1
    return XPathStats(
        site_id=site.site_id,
        counts={x: len(s) for x, s in texts.items()},
        support=support,
    )


def select_variable_nodes(stats: XPathStats, k: int = DEFAULT_TOP_K) -> set[str]:
    """Top-k XPaths by distinct-text count, restricted to counts >= 2.

    Ties break by higher page support, then lexicographic XPath, so the
    result is invariant to page ordering.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    qualifying = [x for x, c in stats.counts.items() if c >= 2]
    qualifying.sort(key=lambda x: (-stats.counts[x], -stats.support.get(x, 0), x))
    return set(qualifying[:k])


def apply_filter(page: Page, keep: set[str]) -> Page:
    """Drop nodes outside ``keep``; retained nodes get fresh 0..n-1 ordinals.

    The unfiltered node list rides along on the result so downstream feature
    extraction can still see raw document order.
    """
    raw = page.raw_nodes if page.raw_nodes is not None else page.nodes
    retained = [
        node.with_ordinal(i)
        for i, node in enumerate(n for n in raw if n.xpath in keep)
    ]
    return Page(
        page_id=page.page_id,
        site_id=page.site_id,
        nodes=retained,
        truth=page.truth,
        raw_nodes=raw,
    )


def filter_site(site: SiteCorpus, k: int = DEFAULT_TOP_K) -> tuple[SiteCorpus, XPathStats]:
    """Convenience wrapper: per-site stats, then filter every page."""
    stats = collect_xpath_stats(site)
    keep = select_variable_nodes(stats, k)
    filtered = SiteCorpus(
        site_id=site.site_id,
        vertical=site.vertical,
        pages=[apply_filter(p, keep) for p in site.pages],
        truth_warnings=list(site.truth_warnings),
    )
    return filtered, stats
