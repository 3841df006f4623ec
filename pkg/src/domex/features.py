"""Node featurization: token/char sequences, preceding-token window, and the
two discrete feature bags (leaf tag, string-type checkers).

Vocabularies are built once from seed-site data and frozen; everything
unseen maps to the OOV id 0 (id 1 is reserved for padding).
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass

from .dom import DomNode, Page, SiteCorpus
from .errors import EmptyCorpus

OOV_ID = 0
PAD_ID = 1

PREV_WINDOW = 10
MAX_NODE_TOKENS = 32
MAX_TOKEN_CHARS = 24
TOP_TAGS = 30
OTHER_TAG = "OTHER_TAG"

# letters run | digit run | any other non-space char (incl. underscore)
_TOKEN_RE = re.compile(r"[^\W\d_]+|\d+|[^\w\s]|_", re.UNICODE)

# string-type checkers; each detector is a documented regular pattern
_NUMBER_RE = re.compile(r"\d")
_DATE_RE = re.compile(
    r"\d{4}-\d{1,2}-\d{1,2}"            # 2000-06-01
    r"|\d{1,2}/\d{1,2}/\d{2,4}"         # 6/1/2000
    r"|\b(?:jan|feb|mar|apr|may|jun|jul|aug|sep|oct|nov|dec)[a-z]*\.?\s+\d{1,2}(?:\s*,\s*\d{4})?",
    re.IGNORECASE,
)
_ZIPCODE_RE = re.compile(r"\b\d{5}(?:-\d{4})?\b")
_URL_RE = re.compile(r"(?:https?://|www\.)\S+", re.IGNORECASE)
_CURRENCY_RE = re.compile(r"[$£¥€]")
_PERCENT_RE = re.compile(r"%")

SHORT_TEXT_WORDS = 3  # IS_SHORT counts whitespace-separated words

TYPE_FEATURES = (
    "HAS_NUMBER",
    "HAS_DATE",
    "HAS_ZIPCODE",
    "HAS_URL",
    "HAS_CURRENCY",
    "HAS_PERCENT",
    "ALL_CAPS",
    "IS_SHORT",
)


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, then split punctuation and digit runs
    into separate tokens."""
    return _TOKEN_RE.findall(text.lower())


def string_type_features(text: str) -> set[str]:
    """Names of the string-type checkers that fire on the text."""
    out: set[str] = set()
    if _NUMBER_RE.search(text):
        out.add("HAS_NUMBER")
    if _DATE_RE.search(text):
        out.add("HAS_DATE")
    if _ZIPCODE_RE.search(text):
        out.add("HAS_ZIPCODE")
    if _URL_RE.search(text):
        out.add("HAS_URL")
    if _CURRENCY_RE.search(text):
        out.add("HAS_CURRENCY")
    if _PERCENT_RE.search(text):
        out.add("HAS_PERCENT")
    letters = [c for c in text if c.isalpha()]
    if letters and all(c.isupper() for c in letters):
        out.add("ALL_CAPS")
    if len(text.split()) <= SHORT_TEXT_WORDS:
        out.add("IS_SHORT")
    return out


def preceding_tokens(page: Page, node_ordinal: int, w: int = PREV_WINDOW) -> list[str]:
    """The last ``w`` tokens of the concatenated texts of retained nodes
    before ``node_ordinal`` (document order; shorter at page start).

    When no retained node precedes the target but the page was filtered, the
    window falls back to raw pre-filter document order, so preceding label
    text survives even if the filter dropped it.
    """
    if not 0 <= node_ordinal < len(page.nodes):
        raise IndexError(f"ordinal {node_ordinal} outside page of {len(page.nodes)} nodes")
    if node_ordinal > 0:
        tokens: list[str] = []
        for node in page.nodes[:node_ordinal]:
            tokens.extend(tokenize(node.text))
        return tokens[-w:]
    if page.raw_nodes is None:
        return []
    target = page.nodes[node_ordinal].xpath
    tokens = []
    for node in page.raw_nodes:
        if node.xpath == target:
            break
        tokens.extend(tokenize(node.text))
    return tokens[-w:]


@dataclass(frozen=True)
class Vocab:
    """Frozen lookup tables built from seed-site data only."""

    word_to_id: dict[str, int]
    char_to_id: dict[str, int]
    discrete_tag_to_id: dict[str, int]
    discrete_type_to_id: dict[str, int]

    @property
    def word_size(self) -> int:
        return len(self.word_to_id) + 2  # OOV + pad

    @property
    def char_size(self) -> int:
        return len(self.char_to_id) + 2

    @property
    def tag_size(self) -> int:
        return len(self.discrete_tag_to_id)

    @property
    def type_size(self) -> int:
        return len(self.discrete_type_to_id)

    def word_id(self, token: str) -> int:
        return self.word_to_id.get(token, OOV_ID)

    def char_ids(self, token: str, cap: int = MAX_TOKEN_CHARS) -> list[int]:
        return [self.char_to_id.get(c, OOV_ID) for c in token[:cap]]

    def tag_feature_id(self, tag_name: str) -> int:
        return self.discrete_tag_to_id.get(tag_name, self.discrete_tag_to_id[OTHER_TAG])

    def to_dict(self) -> dict:
        return {
            "word_to_id": self.word_to_id,
            "char_to_id": self.char_to_id,
            "discrete_tag_to_id": self.discrete_tag_to_id,
            "discrete_type_to_id": self.discrete_type_to_id,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Vocab":
        return cls(
            word_to_id=dict(data["word_to_id"]),
            char_to_id=dict(data["char_to_id"]),
            discrete_tag_to_id=dict(data["discrete_tag_to_id"]),
            discrete_type_to_id=dict(data["discrete_type_to_id"]),
        )


def leaf_tag_feature(node: DomNode, vocab: Vocab) -> str:
    """The node's leaf tag if frequent in the seed corpus, else OTHER_TAG."""
    return node.leaf_tag if node.leaf_tag in vocab.discrete_tag_to_id else OTHER_TAG


def build_vocabs(seed_sites: list[SiteCorpus], min_count: int = 2) -> Vocab:
    """Count tokens, characters, and leaf tags across the seed sites.

    Words below ``min_count`` stay out of the table and map to OOV; the tag
    table keeps the 30 most frequent leaf tags (ties broken alphabetically)
    plus the OTHER_TAG bucket.
    """
    if not seed_sites or not any(s.pages for s in seed_sites):
        raise EmptyCorpus("vocabulary construction needs at least one non-empty seed site")
    word_counts: Counter[str] = Counter()
    char_counts: Counter[str] = Counter()
    tag_counts: Counter[str] = Counter()
    for site in seed_sites:
        for page in site.pages:
            for node in page.nodes:
                tokens = tokenize(node.text)
                word_counts.update(tokens)
                for token in tokens:
                    char_counts.update(token)
                tag_counts[node.leaf_tag] += 1

    words = sorted(w for w, c in word_counts.items() if c >= min_count)
    chars = sorted(char_counts)
    top_tags = sorted(tag_counts, key=lambda t: (-tag_counts[t], t))[:TOP_TAGS]

    word_to_id = {w: i + 2 for i, w in enumerate(words)}
    char_to_id = {c: i + 2 for i, c in enumerate(chars)}
    tag_to_id = {t: i for i, t in enumerate(sorted(top_tags))}
    tag_to_id[OTHER_TAG] = len(tag_to_id)
    type_to_id = {name: i for i, name in enumerate(TYPE_FEATURES)}
    return Vocab(word_to_id, char_to_id, tag_to_id, type_to_id)


@dataclass
class NodeFeatureBundle:
    """The three feature views for one retained node."""

    node_tokens: list[tuple[int, list[int]]]
    prev_tokens: list[tuple[int, list[int]]]
    tag_features: set[int]
    type_features: set[int]


def _encode_tokens(tokens: list[str], vocab: Vocab, cap: int) -> list[tuple[int, list[int]]]:
    return [(vocab.word_id(t), vocab.char_ids(t)) for t in tokens[:cap]]


def featurize_node(page: Page, node_ordinal: int, vocab: Vocab) -> NodeFeatureBundle:
    """Pure featurization of one node under a frozen vocabulary."""
    node = page.nodes[node_ordinal]
    node_tokens = _encode_tokens(tokenize(node.text), vocab, MAX_NODE_TOKENS)
    prev = _encode_tokens(preceding_tokens(page, node_ordinal), vocab, PREV_WINDOW)
    return NodeFeatureBundle(
        node_tokens=node_tokens,
        prev_tokens=prev,
        tag_features={vocab.tag_feature_id(leaf_tag_feature(node, vocab))},
        type_features={vocab.discrete_type_to_id[name]
                       for name in string_type_features(node.text)},
    )


def featurize_page(page: Page, vocab: Vocab) -> list[NodeFeatureBundle]:
    return [featurize_node(page, i, vocab) for i in range(len(page.nodes))]
