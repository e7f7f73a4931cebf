"""Vocabulary layout, facet extraction and fixed-length tokenization."""

from __future__ import annotations

import json

import numpy as np
import pytest

from topicforge import tokenizer
from topicforge.tokenizer import (PAD_ID, UNK_ID, TokenSequence, Vocabulary,
                                  build_vocabulary, extract_facets,
                                  facet_token, tokenize_query)

LEXICON = {"color": {"red", "blue", "navy blue"}, "size": {"large"}}


def test_vocabulary_layout():
    vocab = build_vocabulary(["red shoes", "blue shoes", "blue mat"], LEXICON)
    assert vocab.id_for("<pad>") == PAD_ID
    assert vocab.id_for("<unk>") == UNK_ID
    lo, hi = vocab.facet_id_range
    facet_ids = {vocab.id_for(facet_token("color", v)) for v in LEXICON["color"]}
    facet_ids.add(vocab.id_for(facet_token("size", "large")))
    assert facet_ids == set(range(lo, hi))
    # word tokens follow the facet block, sorted
    words = ["blue", "mat", "red", "shoes"]
    assert [vocab.id_for(w) for w in words] == list(range(hi, hi + len(words)))
    assert vocab.id_for("never seen") == UNK_ID


def test_vocabulary_min_count():
    vocab = build_vocabulary(["rare common", "common"], min_count=2)
    assert vocab.id_for("common") != UNK_ID
    assert vocab.id_for("rare") == UNK_ID


def test_vocabulary_save_load_round_trip(tmp_path):
    vocab = build_vocabulary(["red shoes"], LEXICON)
    path = tmp_path / "vocab.jsonl"
    vocab.save(path)
    loaded = Vocabulary.load(path)
    assert loaded == vocab


def test_extract_facets_longest_leftmost_smallest():
    # longest match beats a shorter one anywhere in the query
    assert extract_facets("navy blue shoes", LEXICON) == {"color": "navy blue"}
    # leftmost occurrence wins among equal lengths
    assert extract_facets("blue and red shoes", LEXICON) == {"color": "blue"}
    assert extract_facets("red and blue shoes", LEXICON) == {"color": "red"}
    # several facets extract independently
    assert extract_facets("large red shoes", LEXICON) == {
        "color": "red", "size": "large"}
    assert extract_facets("plain shoes", LEXICON) == {}
    # substring inside a token is not a match
    assert extract_facets("redwood table", LEXICON) == {}


def test_tokenize_query_layout_and_padding():
    vocab = build_vocabulary(["red shoes"], LEXICON)
    seq = tokenize_query("red shoes", {"color": "red"}, vocab, seq_len=6)
    red, shoes = vocab.id_for("red"), vocab.id_for("shoes")
    fac = vocab.id_for(facet_token("color", "red"))
    assert seq.ids.tolist() == [red, shoes, fac, PAD_ID, PAD_ID, PAD_ID]
    assert seq.attention_mask.tolist() == [1.0, 1.0, 1.0, 0.0, 0.0, 0.0]
    assert seq.ids.dtype == np.int64


def test_tokenize_query_truncation():
    vocab = build_vocabulary(["a b c d e"], None)
    seq = tokenize_query("a b c d e", {}, vocab, seq_len=3)
    assert seq.ids.tolist() == [vocab.id_for("a"), vocab.id_for("b"),
                                vocab.id_for("c")]
    assert seq.attention_mask.sum() == 3
    with pytest.raises(ValueError):
        tokenize_query("a", {}, vocab, seq_len=1)


def test_facet_value_changes_tokenization():
    vocab = build_vocabulary(["red mat", "blue mat"], LEXICON)
    red = tokenize_query("red mat", extract_facets("red mat", LEXICON),
                         vocab, seq_len=5)
    blue = tokenize_query("blue mat", extract_facets("blue mat", LEXICON),
                          vocab, seq_len=5)
    assert red.ids.tolist() != blue.ids.tolist()


def test_load_facet_lexicon(tmp_path):
    path = tmp_path / "lex.jsonl"
    rows = [{"facet_name": "Color", "values": ["Red", "Navy Blue", ""]},
            {"facet_name": "color", "values": ["green"]}]
    path.write_text("\n".join(json.dumps(r) for r in rows), encoding="utf-8")
    lex = tokenizer.load_facet_lexicon(path)
    assert lex == {"color": {"red", "navy blue", "green"}}


def test_token_sequence_shape_check():
    with pytest.raises(ValueError):
        TokenSequence(np.zeros(3, dtype=np.int64), np.zeros(4))
