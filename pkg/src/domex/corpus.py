"""Vertical corpus loading, ground-truth attachment, and node-level labels.

Expected layout (mirrors the common public distribution of this kind of
benchmark so real data loads unmodified):

    root/<vertical>/<site>/<page_id>.htm
    root/groundtruth/<vertical>/<vertical>-<site>-<field>.txt

Site directories may also be named ``<vertical>-<site>(<page count>)``.
Ground-truth files are tab-separated with one header line, then rows
``page_id<TAB>count<TAB>value1<TAB>value2...``; the literal value
``<NULL>`` marks an absent field.
"""

from __future__ import annotations

import gzip
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

from .dom import DomNode, Page, SiteCorpus, VerticalSchema, normalize_text, parse_page
from .errors import CorpusEmpty, MissingPage, MissingTruthFile

logger = logging.getLogger(__name__)

CORPUS_MAGIC = b"DOMEX-CORPUS-1\n"
_NULL_VALUE = "<null>"
_PAGE_SUFFIXES = (".htm", ".html")


def _site_id_from_dir(dirname: str, vertical: str) -> str:
    m = re.fullmatch(re.escape(vertical) + r"-(.+)\(\d+\)", dirname)
    return m.group(1) if m else dirname


def read_truth_file(path: Path) -> dict[str, set[str]]:
    """Parse one (site, field) ground-truth file into page_id -> values."""
    out: dict[str, set[str]] = {}
    lines = path.read_text(encoding="utf-8", errors="replace").splitlines()
    for line in lines[1:]:  # skip header
        if not line.strip():
            continue
        cells = line.split("\t")
        if len(cells) < 2:
            continue
        page_id = cells[0].strip()
        values = {
            v for v in (c.strip() for c in cells[2:])
            if v and v.lower() != _NULL_VALUE
        }
        out[page_id] = values
    return out


def load_vertical(root_dir: str | Path, schema: VerticalSchema,
                  strict_truth: bool = False) -> list[SiteCorpus]:
    """Load every site of a vertical, parse its pages, and attach truth.

    Sites come back in lexicographic site_id order.  A missing truth file is
    logged and treated as all-empty unless ``strict_truth`` is set; a page
    referenced by a truth file but absent on disk raises MissingPage.
    """
    root = Path(root_dir)
    vertical_dir = root / schema.vertical_name
    if not vertical_dir.is_dir():
        raise CorpusEmpty(f"no directory {vertical_dir}")
    site_dirs = sorted(
        (d for d in vertical_dir.iterdir() if d.is_dir()),
        key=lambda d: _site_id_from_dir(d.name, schema.vertical_name),
    )
    if not site_dirs:
        raise CorpusEmpty(f"{vertical_dir} contains no site directories")

    sites: list[SiteCorpus] = []
    truth_root = root / "groundtruth" / schema.vertical_name
    for site_dir in site_dirs:
        site_id = _site_id_from_dir(site_dir.name, schema.vertical_name)
        page_files = sorted(
            p for p in site_dir.iterdir()
            if p.suffix.lower() in _PAGE_SUFFIXES
        )
        pages = [
            parse_page(p.read_bytes(), page_id=p.stem, site_id=site_id)
            for p in page_files
        ]
        if not pages:
            raise CorpusEmpty(f"site {site_id} has no pages")
        by_id = {p.page_id: p for p in pages}

        warnings: list[str] = []
        for field_name in schema.fields:
            truth_path = truth_root / f"{schema.vertical_name}-{site_id}-{field_name}.txt"
            if not truth_path.is_file():
                message = f"missing truth file for ({site_id}, {field_name})"
                if strict_truth:
                    raise MissingTruthFile(message)
                logger.warning("%s; treating field as all-empty", message)
                warnings.append(message)
                for page in pages:
                    page.truth.setdefault(field_name, set())
                continue
            per_page = read_truth_file(truth_path)
            for page_id, values in per_page.items():
                if page_id not in by_id:
                    raise MissingPage(
                        f"truth for ({site_id}, {field_name}) references missing page {page_id!r}")
                by_id[page_id].truth[field_name] = values
            for page in pages:
                page.truth.setdefault(field_name, set())

        sites.append(SiteCorpus(site_id=site_id, vertical=schema, pages=pages,
                                truth_warnings=warnings))
    return sites


@dataclass
class MatchDiagnostics:
    """Coverage of text-level truth against node-level matches."""

    unmatched_values: int = 0
    conflicts: int = 0

    def merge(self, other: "MatchDiagnostics") -> None:
        self.unmatched_values += other.unmatched_values
        self.conflicts += other.conflicts


def match_truth_nodes(page: Page, schema: VerticalSchema,
                      diagnostics: MatchDiagnostics | None = None) -> dict[str, set[int]]:
    """Node indices whose normalized text equals a ground-truth string.

    A node matching several fields is assigned to the earliest field in
    schema order (the conflict counter is incremented); truth values that
    match no node bump the unmatched counter instead of erroring.
    """
    diag = diagnostics if diagnostics is not None else MatchDiagnostics()
    norm_truth = {
        f: {normalize_text(v) for v in page.truth.get(f, set())}
        for f in schema.fields
    }
    result: dict[str, set[int]] = {f: set() for f in schema.fields}
    matched_values: dict[str, set[str]] = {f: set() for f in schema.fields}
    for node in page.nodes:
        text = normalize_text(node.text)
        hits = [f for f in schema.fields if text in norm_truth[f]]
        if not hits:
            continue
        if len(hits) > 1:
            diag.conflicts += 1
        chosen = hits[0]
        result[chosen].add(node.ordinal)
        matched_values[chosen].add(text)
    for f in schema.fields:
        diag.unmatched_values += len(norm_truth[f] - matched_values[f])
    return result


# ---------------------------------------------------------------------------
# corpus cache
# ---------------------------------------------------------------------------

def save_corpus_cache(path: str | Path, sites: list[SiteCorpus]) -> None:
    """Serialize a parsed corpus to the versioned cache container."""
    if not sites:
        raise CorpusEmpty("refusing to cache an empty corpus")
    schema = sites[0].vertical
    payload = {
        "vertical": schema.vertical_name,
        "fields": list(schema.fields),
        "sites": [
            {
                "site_id": s.site_id,
                "truth_warnings": s.truth_warnings,
                "pages": [
                    {
                        "page_id": p.page_id,
                        "nodes": [[n.xpath, n.text, n.leaf_tag] for n in p.nodes],
                        "truth": {f: sorted(v) for f, v in sorted(p.truth.items())},
                    }
                    for p in s.pages
                ],
            }
            for s in sites
        ],
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CORPUS_MAGIC)
        fh.write(gzip.compress(blob, mtime=0))


def load_corpus_cache(path: str | Path) -> list[SiteCorpus]:
    with open(path, "rb") as fh:
        magic = fh.read(len(CORPUS_MAGIC))
        if magic != CORPUS_MAGIC:
            raise CorpusEmpty(f"{path}: not a corpus cache (bad magic)")
        payload = json.loads(gzip.decompress(fh.read()).decode("utf-8"))
    schema = VerticalSchema(payload["vertical"], tuple(payload["fields"]))
    sites = []
    for s in payload["sites"]:
        pages = [
            Page(
                page_id=p["page_id"],
                site_id=s["site_id"],
                nodes=[
                    DomNode(xpath, text, tag, i)
                    for i, (xpath, text, tag) in enumerate(p["nodes"])
                ],
                truth={f: set(v) for f, v in p["truth"].items()},
            )
            for p in s["pages"]
        ]
        sites.append(SiteCorpus(site_id=s["site_id"], vertical=schema, pages=pages,
                                truth_warnings=list(s.get("truth_warnings", []))))
    return sites


def corpus_from_source(source: str | Path, schema: VerticalSchema | None = None) -> list[SiteCorpus]:
    """Load sites from either a corpus-cache file or a corpus root directory."""
    path = Path(source)
    if path.is_file():
        return load_corpus_cache(path)
    if schema is None:
        raise CorpusEmpty("loading from a directory requires a schema")
    return load_vertical(path, schema)
