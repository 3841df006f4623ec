"""Deterministic synthetic corpus generator for desk-scale verification.

Each site draws its own template (container tags, field order, label
wording); pages then vary the field values, junk text, junk counts, and
decoy content.  With the confusability knob on, a date-like field is
planted mid-page with the same local surface (tag, label, value
distribution, junk-only preceding window) as a list of decoy dates further
down the page, so purely local classification of it fails while pair-level
position/ancestry signals still identify it.  Ground-truth TSVs are
written in the corpus format.
"""

from __future__ import annotations

import html
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_FIELDS = ("model", "price", "engine", "listed_date")
DECOY_FIELD = "listed_date"

SITE_NAMES = (
    "autonation", "bidwell", "carhub", "dealery", "enginex",
    "fastauto", "gearbox", "hotrod", "ignition", "jalopy",
)

_BRANDS = (
    "zorvax", "kelmar", "trivio", "ostrel", "lumara", "quenda", "verato",
    "mixtal", "harlon", "senqua", "dovern", "pilxor", "ravetta", "coblin",
)
_SERIES = ("lx", "se", "gt", "xl", "sport", "touring", "ex", "base", "prime")
_ENGINE_LAYOUTS = ("V6", "V8", "I4", "I3", "H4", "V10")
_JUNK_WORDS = (
    "the", "a", "new", "great", "amazing", "really", "liked", "this", "was",
    "drives", "smooth", "went", "to", "store", "and", "back", "feels",
    "solid", "inside", "comfort", "is", "good", "value", "for", "our",
    "family", "trip", "took", "it", "on", "highway", "around", "town",
    "quiet", "cabin", "roomy", "seats", "husband", "loves", "color",
    "came", "with", "extras", "after", "one", "week", "still", "happy",
    "would", "recommend", "friends", "everyone", "asks", "about",
)
# wrappers avoid p-around-block nestings so lenient HTML parsing and strict
# XML parsing agree on the tree
_CLUSTER_WRAPS = ("div", "section", "article", "main")
# entry wraps exclude list items: the review list is the only place an <li>
# appears, so decoy ancestry stays list-shaped across every template draw
_ENTRY_WRAPS = ("div", "span")
# per-site value tags are drawn without replacement: a unique leaf tag per
# field keeps field slots at distinct XPaths even when the per-page order
# shuffles, which site-level XPath voting relies on
_VALUE_TAGS = ("span", "b", "em", "strong", "i", "u", "code", "small")
_MODEL_TAGS = ("h1", "h2")
_LIST_SHAPES = (("ul", "li"), ("ol", "li"))
_LABELS = {
    "model": ("Model :", "Vehicle :", "Name :"),
    "price": ("Price :", "MSRP :", "Asking :"),
    "engine": ("Engine :", "Motor :", "Powertrain :"),
    "listed_date": ("Listed :", "Posted :", "Added :"),
}


@dataclass
class _Template:
    cluster_wrap: str
    entry_wrap: str
    model_tag: str
    value_tags: dict[str, str]
    date_tag: str
    list_shape: tuple[str, str]
    easy_order: list[str]
    labels: dict[str, str]


def _draw_template(rng: np.random.Generator, fields: tuple[str, ...], decoys: bool) -> _Template:
    easy = [f for f in fields if f != DECOY_FIELD or not decoys]
    order = list(easy)
    rng.shuffle(order)
    non_model = [f for f in fields if f != "model"]
    tag_draw = rng.permutation(len(_VALUE_TAGS))[:len(non_model)]
    value_tags = {f: _VALUE_TAGS[tag_draw[i]] for i, f in enumerate(non_model)}
    if "model" in fields:
        value_tags["model"] = "h1"  # replaced by the template's model tag below
    return _Template(
        cluster_wrap=str(rng.choice(_CLUSTER_WRAPS)),
        entry_wrap=str(rng.choice(_ENTRY_WRAPS)),
        model_tag=str(rng.choice(_MODEL_TAGS)),
        value_tags=value_tags,
        date_tag=value_tags.get(DECOY_FIELD, "span"),
        list_shape=_LIST_SHAPES[int(rng.integers(len(_LIST_SHAPES)))],
        easy_order=order,
        labels={f: _LABELS[f][int(rng.integers(len(_LABELS[f])))] for f in fields
                if f in _LABELS},
    )


def _junk_sentence(rng: np.random.Generator, lo: int = 6, hi: int = 13) -> str:
    n = int(rng.integers(lo, hi))
    words = [str(rng.choice(_JUNK_WORDS)) for _ in range(n)]
    if rng.random() < 0.3:
        words.insert(int(rng.integers(len(words))), str(rng.integers(1, 999)))
    return " ".join(words)


def _date_value(rng: np.random.Generator) -> str:
    return f"{rng.integers(1998, 2016)}-{rng.integers(1, 13):02d}-{rng.integers(1, 29):02d}"


def _field_value(field_name: str, rng: np.random.Generator) -> str:
    if field_name == "model":
        return (f"{str(rng.choice(_BRANDS)).title()} "
                f"{str(rng.choice(_SERIES)).upper()} {rng.integers(100, 900)}")
    if field_name == "price":
        return f"${rng.integers(9, 80)},{rng.integers(0, 1000):03d}"
    if field_name == "engine":
        return f"{rng.integers(1, 6)}.{rng.integers(0, 10)}L {rng.choice(_ENGINE_LAYOUTS)}"
    if field_name == DECOY_FIELD:
        return _date_value(rng)
    # extra schema fields beyond the canonical four get a distinctive token
    return f"{field_name}-{rng.integers(1000, 9999)}"


def _entry(wrap: str, label: str, value_tag: str, value: str) -> str:
    return (f"<{wrap}><span>{html.escape(label)}</span>"
            f"<{value_tag}>{html.escape(value)}</{value_tag}></{wrap}>")


def _render_page(tpl: _Template, fields: tuple[str, ...], values: dict[str, str],
                 site_name: str, decoys: bool, n_decoys: int,
                 rng: np.random.Generator) -> str:
    lines = ["<html>", f"<head><title>{site_name} motors</title></head>", "<body>",
             f"<div><span>{site_name} motors</span>"
             "<span>Home | Inventory | Financing | About</span></div>",
             f"<h3>{html.escape(_junk_sentence(rng))}</h3>"]

    # with decoys on, the cluster order is re-shuffled per page so the
    # preceding-text window carries no site-memorizable neighbor signal:
    # local node features must do the work, as on real cross-site transfer
    order = list(tpl.easy_order)
    if decoys:
        rng.shuffle(order)
    cluster = [f"<{tpl.cluster_wrap}>"]
    for field_name in order:
        tag = tpl.model_tag if field_name == "model" else tpl.value_tags[field_name]
        cluster.append(_entry(tpl.entry_wrap, tpl.labels.get(field_name, f"{field_name} :"),
                              tag, values[field_name]))
    cluster.append(f"</{tpl.cluster_wrap}>")
    lines.extend(cluster)

    # junk counts vary per page, so field positions sweep a band of
    # normalized-position buckets within each site instead of pinning one
    # bucket per template; at least two junk nodes sit around the planted
    # date so every date-like node sees a pure-junk preceding window
    for _ in range(int(rng.integers(2, 4))):
        lines.append(f"<p>{html.escape(_junk_sentence(rng))}</p>")

    if decoys and DECOY_FIELD in fields:
        lines.append(_entry(tpl.entry_wrap, tpl.labels[DECOY_FIELD],
                            tpl.date_tag, values[DECOY_FIELD]))
        for _ in range(int(rng.integers(2, 4))):
            lines.append(f"<p>{html.escape(_junk_sentence(rng))}</p>")
        outer, item = tpl.list_shape
        lines.append(f"<{outer}>")
        for _ in range(n_decoys):
            decoy = _date_value(rng)
            while decoy == values[DECOY_FIELD]:
                decoy = _date_value(rng)
            snippet = _junk_sentence(rng, lo=10, hi=15)
            lines.append(f"<{item}><p>{html.escape(snippet)}</p>"
                         f"<{tpl.date_tag}>{decoy}</{tpl.date_tag}></{item}>")
        lines.append(f"</{outer}>")

    for _ in range(int(rng.integers(1, 3))):
        lines.append(f"<p>{html.escape(_junk_sentence(rng))}</p>")
    lines.append(f"<div><span>copyright {site_name} motors all rights reserved</span></div>")
    lines.extend(["</body>", "</html>"])
    return "\n".join(lines) + "\n"


def generate_synthetic_corpus(out_dir: str | Path, n_sites: int = 6,
                              pages_per_site: int = 50,
                              fields: tuple[str, ...] = DEFAULT_FIELDS,
                              decoys: bool = True, n_decoys: int = 6,
                              seed: int = 0, vertical: str = "synthcars",
                              shared_template: bool = False) -> Path:
    """Write a corpus tree (pages plus truth TSVs) and return its root.

    Byte-identical output for identical arguments; ``shared_template``
    forces every site onto the same layout draw (useful for cross-site
    distance comparisons).
    """
    if n_sites > len(SITE_NAMES):
        raise ValueError(f"at most {len(SITE_NAMES)} sites supported")
    root = Path(out_dir)
    truth_dir = root / "groundtruth" / vertical
    truth_dir.mkdir(parents=True, exist_ok=True)

    master = np.random.default_rng(seed)
    site_seeds = [int(s) for s in master.integers(0, 2**31 - 1, size=n_sites)]
    for site_index, site_name in enumerate(SITE_NAMES[:n_sites]):
        rng = np.random.default_rng(site_seeds[0] if shared_template else site_seeds[site_index])
        tpl = _draw_template(rng, fields, decoys)
        site_dir = root / vertical / site_name
        site_dir.mkdir(parents=True, exist_ok=True)

        truth: dict[str, list[tuple[str, str]]] = {f: [] for f in fields}
        used: dict[str, set[str]] = {f: set() for f in fields}
        for page_index in range(pages_per_site):
            page_id = f"{page_index:04d}"
            values: dict[str, str] = {}
            for field_name in fields:
                value = _field_value(field_name, rng)
                while value in used[field_name]:
                    value = _field_value(field_name, rng)
                used[field_name].add(value)
                values[field_name] = value
            page_html = _render_page(tpl, fields, values, site_name, decoys,
                                     n_decoys, rng)
            (site_dir / f"{page_id}.htm").write_text(page_html, encoding="utf-8")
            for field_name in fields:
                truth[field_name].append((page_id, values[field_name]))

        for field_name in fields:
            path = truth_dir / f"{vertical}-{site_name}-{field_name}.txt"
            rows = ["page_id\tcount\tvalues"]
            rows.extend(f"{pid}\t1\t{value}" for pid, value in truth[field_name])
            path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return root
