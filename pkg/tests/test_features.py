"""Tokenization, preceding windows, discrete features, and vocabularies."""

from __future__ import annotations

from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from domex.dom import DomNode, Page, SiteCorpus, VerticalSchema
from domex.errors import EmptyCorpus
from domex.features import (
    MAX_NODE_TOKENS,
    MAX_TOKEN_CHARS,
    OOV_ID,
    OTHER_TAG,
    TOP_TAGS,
    build_vocabs,
    featurize_node,
    featurize_page,
    leaf_tag_feature,
    preceding_tokens,
    string_type_features,
    tokenize,
)

SCHEMA = VerticalSchema("v", ("f",))


def _page(texts: list[str], tags: list[str] | None = None, raw_texts=None) -> Page:
    tags = tags or ["p"] * len(texts)
    nodes = [DomNode(f"/x[{i + 1}]", t, tag, i)
             for i, (t, tag) in enumerate(zip(texts, tags))]
    page = Page("p", "s", nodes)
    if raw_texts is not None:
        page.raw_nodes = [DomNode(f"/r[{i + 1}]", t, "p", i)
                          for i, t in enumerate(raw_texts)]
        # retained nodes must exist in the raw list under the same xpath
        offset = len(page.raw_nodes)
        page.raw_nodes += [DomNode(n.xpath, n.text, n.leaf_tag, offset + i)
                           for i, n in enumerate(nodes)]
    return page


def _site(texts_per_page: list[list[str]], tags=None) -> SiteCorpus:
    pages = [
        Page(f"{i:04d}", "s",
             [DomNode(f"/x[{j + 1}]", t, (tags or {}).get(t, "p"), j)
              for j, t in enumerate(texts)])
        for i, texts in enumerate(texts_per_page)
    ]
    return SiteCorpus("s", SCHEMA, pages)


# -- tokenize ----------------------------------------------------------------

def test_tokenize_keeps_word_and_digit_runs():
    assert tokenize("city 33 hwy 27") == ["city", "33", "hwy", "27"]


def test_tokenize_splits_punctuation():
    assert tokenize("MSRP:") == ["msrp", ":"]
    assert tokenize("$9,970") == ["$", "9", ",", "970"]
    assert tokenize("2000-06-01") == ["2000", "-", "06", "-", "01"]


def test_tokenize_empty():
    assert tokenize("") == []


def test_tokenize_never_empty_for_nonspace_text():
    for text in ["_", "a", "7", "-", "élève", "中文"]:
        assert tokenize(text), text


# -- preceding tokens --------------------------------------------------------

def test_first_node_has_empty_window():
    page = _page(["alpha", "beta"])
    assert preceding_tokens(page, 0) == []


def test_window_carries_label_tokens():
    page = _page(["MSRP :", "$9,970"])
    assert preceding_tokens(page, 1) == ["msrp", ":"]


def test_window_equals_concatenate_then_slice_oracle():
    texts = ["a b c d", "e f g h", "i j k l"]
    page = _page(texts + ["target"])
    got = preceding_tokens(page, 3, w=10)
    oracle = [tok for t in texts for tok in tokenize(t)][-10:]
    assert got == oracle
    assert len(got) == 10


def test_window_falls_back_to_raw_order_when_empty():
    page = _page(["kept"], raw_texts=["Label :", "dropped too"])
    assert preceding_tokens(page, 0) == ["label", ":", "dropped", "too"]


def test_window_is_suffix_of_prefix_concatenation():
    texts = ["one two", "three", "four five six", "seven"]
    page = _page(texts)
    for i in range(len(texts)):
        window = preceding_tokens(page, i)
        full = [tok for t in texts[:i] for tok in tokenize(t)]
        assert window == full[-10:]


# -- string type checkers ----------------------------------------------------

def test_price_features():
    assert string_type_features("$9,970") == {"HAS_NUMBER", "HAS_CURRENCY", "IS_SHORT"}


def test_date_features():
    got = string_type_features("2000-06-01")
    assert {"HAS_DATE", "HAS_NUMBER"} <= got


def test_plain_text_is_short_only():
    assert string_type_features("hello world") == {"IS_SHORT"}


@pytest.mark.parametrize("text,name", [
    ("visit www.example.com/page now please ok", "HAS_URL"),
    ("Located at 90210-1234 area", "HAS_ZIPCODE"),
    ("up 15% versus last year overall", "HAS_PERCENT"),
    ("ACME CORP LLC", "ALL_CAPS"),
    ("June 12, 2004", "HAS_DATE"),
])
def test_individual_detectors(text, name):
    assert name in string_type_features(text)


# -- leaf tag feature --------------------------------------------------------

def _vocab_from_tag_counts(tag_counts: dict[str, int]):
    texts_per_page = []
    page = []
    nodes = []
    for tag, count in tag_counts.items():
        for i in range(count):
            nodes.append((f"{ tag }text {i}", tag))
    pages = [
        Page("0000", "s", [DomNode(f"/x[{j + 1}]", t, tag, j)
                           for j, (t, tag) in enumerate(nodes)])
    ]
    return build_vocabs([SiteCorpus("s", SCHEMA, pages)], min_count=1)


def test_common_tag_maps_to_itself():
    vocab = _vocab_from_tag_counts({"h1": 3, "span": 2})
    node = DomNode("/x[1]", "t", "h1", 0)
    assert leaf_tag_feature(node, vocab) == "h1"


def test_rare_tag_maps_to_other():
    vocab = _vocab_from_tag_counts({"h1": 3})
    node = DomNode("/x[1]", "t", "marquee", 0)
    assert leaf_tag_feature(node, vocab) == OTHER_TAG


def test_tag_frequency_boundary_at_top_30():
    # 31 tags with strictly decreasing frequency: rank 30 kept, rank 31 bucketed
    counts = {f"t{i:02d}": 40 - i for i in range(31)}
    vocab = _vocab_from_tag_counts(counts)
    oracle = sorted(counts, key=lambda t: (-counts[t], t))
    assert leaf_tag_feature(DomNode("/x[1]", "", oracle[TOP_TAGS - 1], 0), vocab) \
        == oracle[TOP_TAGS - 1]
    assert leaf_tag_feature(DomNode("/x[1]", "", oracle[TOP_TAGS], 0), vocab) == OTHER_TAG


# -- vocabulary --------------------------------------------------------------

def test_min_count_threshold_sends_rare_to_oov():
    site = _site([["common common rare"]])
    vocab = build_vocabs([site], min_count=2)
    assert vocab.word_id("common") != OOV_ID
    assert vocab.word_id("rare") == OOV_ID


def test_vocab_deterministic():
    site = _site([["a b c", "b c d"], ["c d e"]])
    assert build_vocabs([site]) == build_vocabs([site])


def test_vocab_sizes_match_counting_oracle():
    texts = [["alpha beta alpha", "gamma!"], ["beta gamma delta", "42 alpha"]]
    site = _site(texts)
    vocab = build_vocabs([site], min_count=2)
    counts = Counter(tok for page in texts for t in page for tok in tokenize(t))
    expected_words = {w for w, c in counts.items() if c >= 2}
    assert set(vocab.word_to_id) == expected_words
    expected_chars = {c for w in counts for c in w}
    assert set(vocab.char_to_id) == expected_chars


def test_empty_corpus_raises():
    with pytest.raises(EmptyCorpus):
        build_vocabs([])


# -- featurization -----------------------------------------------------------

def test_featurize_is_pure():
    site = _site([["alpha beta", "$42", "gamma"]])
    vocab = build_vocabs([site], min_count=1)
    page = site.pages[0]
    a = featurize_node(page, 1, vocab)
    b = featurize_node(page, 1, vocab)
    assert a == b


def test_featurize_caps_lengths():
    long_text = " ".join(f"tok{i}" for i in range(50))
    long_token = "x" * 60
    site = _site([[long_text, long_token]])
    vocab = build_vocabs([site], min_count=1)
    bundle = featurize_node(site.pages[0], 0, vocab)
    assert len(bundle.node_tokens) == MAX_NODE_TOKENS
    bundle2 = featurize_node(site.pages[0], 1, vocab)
    assert len(bundle2.node_tokens[0][1]) == MAX_TOKEN_CHARS


@settings(max_examples=50, deadline=None, derandomize=True)
@given(st.lists(st.text(min_size=1, max_size=12).filter(lambda s: s.strip()),
                min_size=1, max_size=6))
def test_feature_ids_always_in_table_bounds(texts):
    train_site = _site([["seen words here", "$10", "more text"]])
    vocab = build_vocabs([train_site], min_count=1)
    page = _page([t for t in texts])
    for i in range(len(page.nodes)):
        bundle = featurize_node(page, i, vocab)
        assert bundle.node_tokens
        for word_id, char_ids in bundle.node_tokens + bundle.prev_tokens:
            assert 0 <= word_id < vocab.word_size
            assert all(0 <= c < vocab.char_size for c in char_ids)
        assert all(0 <= t < vocab.tag_size for t in bundle.tag_features)
        assert all(0 <= t < vocab.type_size for t in bundle.type_features)


def test_featurize_page_covers_every_node():
    site = _site([["a", "b", "c"]])
    vocab = build_vocabs([site], min_count=1)
    assert len(featurize_page(site.pages[0], vocab)) == 3
