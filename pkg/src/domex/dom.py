"""HTML parsing into leaf-node lists with XPaths, plus the core page types.

Parsing is lenient: malformed markup is tolerated, script/style/comment
content is excluded, and only leaf nodes carrying non-whitespace text are
kept.  An element holding both direct text and child elements contributes
its direct text as its own leaf node (emitted at the element's pre-order
position); children are traversed independently.
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass, field
from html.parser import HTMLParser

from .errors import UnreadableInput

VOID_TAGS = {
    "area", "base", "br", "col", "embed", "hr", "img", "input",
    "link", "meta", "param", "source", "track", "wbr",
}
SKIP_CONTENT_TAGS = {"script", "style"}

# a start tag in the key set implicitly closes an innermost open tag in the value set
_AUTO_CLOSE = {
    "li": {"li"},
    "option": {"option"},
    "tr": {"tr", "td", "th"},
    "td": {"td", "th"},
    "th": {"td", "th"},
    "dt": {"dt", "dd"},
    "dd": {"dt", "dd"},
    "tbody": {"tr", "td", "th"},
    "thead": {"tr", "td", "th"},
}
_P_CLOSERS = {
    "address", "article", "aside", "blockquote", "div", "dl", "fieldset",
    "footer", "form", "h1", "h2", "h3", "h4", "h5", "h6", "header", "hr",
    "main", "nav", "ol", "p", "pre", "section", "table", "ul",
}

_CHARSET_RE = re.compile(rb"""charset\s*=\s*["']?\s*([a-zA-Z0-9_\-]+)""")


def normalize_text(text: str) -> str:
    """Unicode NFC, internal whitespace runs collapsed to single spaces, trimmed."""
    return " ".join(unicodedata.normalize("NFC", text).split())


@dataclass(frozen=True)
class VerticalSchema:
    """A vertical's name and its ordered list of target field names.

    The implicit "none" label is never listed.
    """

    vertical_name: str
    fields: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "fields", tuple(self.fields))
        if not self.fields:
            raise ValueError("a schema needs at least one field")
        if len(set(self.fields)) != len(self.fields):
            raise ValueError("field names must be unique")

    @property
    def k(self) -> int:
        return len(self.fields)


@dataclass(frozen=True)
class DomNode:
    """One leaf text node: its XPath address, normalized text, leaf tag, and
    index within the page's retained-node ordering (document order)."""

    xpath: str
    text: str
    leaf_tag: str
    ordinal: int

    def with_ordinal(self, ordinal: int) -> "DomNode":
        return DomNode(self.xpath, self.text, self.leaf_tag, ordinal)


@dataclass
class Page:
    page_id: str
    site_id: str
    nodes: list[DomNode]
    truth: dict[str, set[str]] = field(default_factory=dict)
    # pre-filter node list, kept so the preceding-text window can fall back
    # to raw document order when every earlier node was filtered out
    raw_nodes: list[DomNode] | None = None

    def node_count(self) -> int:
        return len(self.nodes)


@dataclass
class SiteCorpus:
    site_id: str
    vertical: VerticalSchema
    pages: list[Page]
    truth_warnings: list[str] = field(default_factory=list)


class _Element:
    __slots__ = ("tag", "children")

    def __init__(self, tag: str):
        self.tag = tag
        self.children: list = []  # _Element and str chunks, in document order


class _TreeBuilder(HTMLParser):
    """Builds a lenient element tree; unmatched end tags are dropped."""

    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.root = _Element("#document")
        self.stack = [self.root]
        self._skip_tag: str | None = None

    def handle_starttag(self, tag, attrs):
        if self._skip_tag is not None:
            return
        if tag in SKIP_CONTENT_TAGS:
            self._skip_tag = tag
            return
        if tag in _P_CLOSERS and self.stack[-1].tag == "p":
            self.stack.pop()
        closers = _AUTO_CLOSE.get(tag)
        if closers:
            while len(self.stack) > 1 and self.stack[-1].tag in closers:
                self.stack.pop()
        elem = _Element(tag)
        self.stack[-1].children.append(elem)
        if tag not in VOID_TAGS:
            self.stack.append(elem)

    def handle_endtag(self, tag):
        if self._skip_tag is not None:
            if tag == self._skip_tag:
                self._skip_tag = None
            return
        if tag in VOID_TAGS:
            return
        for depth in range(len(self.stack) - 1, 0, -1):
            if self.stack[depth].tag == tag:
                del self.stack[depth:]
                return
        # stray end tag: ignore

    def handle_data(self, data):
        if self._skip_tag is None and data:
            self.stack[-1].children.append(data)

    def handle_comment(self, data):
        pass

    def handle_decl(self, decl):
        pass


def _decode(html: bytes) -> str:
    candidates: list[str] = []
    match = _CHARSET_RE.search(html[:2048])
    if match:
        candidates.append(match.group(1).decode("ascii", "ignore"))
    candidates.extend(["utf-8", "latin-1"])
    for enc in candidates:
        try:
            return html.decode(enc)
        except (LookupError, UnicodeDecodeError):
            continue
    raise UnreadableInput("no supported encoding could decode the input")


def _document_root(top_level: list) -> _Element:
    elems = [c for c in top_level if isinstance(c, _Element)]
    if len(elems) == 1 and elems[0].tag == "html":
        return elems[0]
    html = _Element("html")
    if any(e.tag in ("head", "body") for e in elems):
        html.children = list(top_level)
    else:
        body = _Element("body")
        body.children = list(top_level)
        html.children = [body]
    return html


def _collect_leaves(root: _Element) -> list[tuple[str, str, str]]:
    out: list[tuple[str, str, str]] = []
    stack: list[tuple[_Element, str]] = [(root, f"/{root.tag}[1]")]
    while stack:
        elem, xpath = stack.pop()
        direct = normalize_text("".join(c for c in elem.children if isinstance(c, str)))
        if direct:
            out.append((xpath, direct, elem.tag))
        tag_counts: dict[str, int] = {}
        child_entries = []
        for child in elem.children:
            if isinstance(child, _Element):
                tag_counts[child.tag] = tag_counts.get(child.tag, 0) + 1
                child_entries.append((child, f"{xpath}/{child.tag}[{tag_counts[child.tag]}]"))
        stack.extend(reversed(child_entries))  # keep document order with a LIFO stack
    return out


def parse_page(html: bytes | str, page_id: str, site_id: str) -> Page:
    """Parse one HTML document into a Page of text-bearing leaf nodes.

    XPaths carry 1-based sibling indices per tag (/html[1]/body[1]/div[2]);
    ordinals follow document order.  Raises UnreadableInput when the bytes
    cannot be decoded.
    """
    text = _decode(html) if isinstance(html, (bytes, bytearray)) else html
    builder = _TreeBuilder()
    builder.feed(text)
    builder.close()
    root = _document_root(builder.root.children)
    nodes = [
        DomNode(xpath, node_text, tag, ordinal)
        for ordinal, (xpath, node_text, tag) in enumerate(_collect_leaves(root))
    ]
    return Page(page_id=page_id, site_id=site_id, nodes=nodes)
