"""Click log / catalog parsing, normalization and blocklist filtering."""

from __future__ import annotations

import json

import pytest

from topicforge import ingest


def test_normalize_query():
    assert ingest.normalize_query("  Running   SHOES! ") == "running shoes"
    assert ingest.normalize_query("iPhone_13 case") == "iphone 13 case"
    assert ingest.normalize_query("blue-green mat") == "blue-green mat"
    assert ingest.normalize_query("???") == ""


def test_parse_click_log_csv(tmp_path):
    log = tmp_path / "log.csv"
    log.write_text(
        "query,page_id,page_type,clicks,impressions\n"
        "Running Shoes,p1,shelf,10,30\n"
        "running shoes,p1,shelf,5,15\n"
        ",p2,item,1,2\n"
        "socks,p3,bogus,1,2\n"
        "socks,p4,item,nine,20\n"
        "socks,p5,item,-1,2\n"
        "socks,p6,item,9,2\n"
        "socks,p7,item,2,6\n",
        encoding="utf-8")
    records, report = ingest.parse_click_log(log)
    assert [r.query for r in records] == ["running shoes", "running shoes", "socks"]
    assert report.rows_total == 8
    assert report.rows_ok == 3
    messages = [m for _, m in report.errors]
    assert "empty query after normalization" in messages
    assert any("unknown page_type" in m for m in messages)
    assert "clicks/impressions not integers" in messages
    assert "negative counts" in messages
    assert "clicks exceed impressions" in messages


def test_parse_click_log_bad_header(tmp_path):
    log = tmp_path / "log.csv"
    log.write_text("query,page,clicks\nq,p,1\n", encoding="utf-8")
    with pytest.raises(ingest.IngestError, match="header"):
        ingest.parse_click_log(log)


def test_parse_click_log_jsonl(tmp_path):
    log = tmp_path / "log.jsonl"
    rows = [
        {"query": "red mat", "page_id": "p1", "page_type": "item",
         "clicks": 3, "impressions": 9},
        "not json at all",
        {"query": "blue mat", "page_id": "p2", "page_type": "facet",
         "clicks": 1, "impressions": 1},
    ]
    log.write_text("\n".join(
        r if isinstance(r, str) else json.dumps(r) for r in rows),
        encoding="utf-8")
    records, report = ingest.parse_click_log(log)
    assert len(records) == 2
    assert report.error_count == 1


def test_parse_page_catalog(tmp_path):
    cat = tmp_path / "pages.jsonl"
    rows = [
        {"page_id": "s1", "page_type": "shelf", "title": "Yoga Mats",
         "product_type": "yoga mat"},
        {"page_id": "f1", "page_type": "facet", "title": "blue yoga mat",
         "product_type": "yoga mat",
         "facets": [{"name": "Color", "value": "Blue"}]},
        {"page_id": "f2", "page_type": "facet", "title": "broken facet",
         "product_type": "yoga mat"},
        {"page_id": "s1", "page_type": "shelf", "title": "dup id",
         "product_type": "yoga mat"},
    ]
    cat.write_text("\n".join(json.dumps(r) for r in rows), encoding="utf-8")
    pages, report = ingest.parse_page_catalog(cat)
    assert [p.page_id for p in pages] == ["s1", "f1"]
    assert pages[0].title == "yoga mats"
    assert pages[1].facets == frozenset([("color", "blue")])
    messages = [m for _, m in report.errors]
    assert "facet page without facet pairs" in messages
    assert any("duplicate page_id" in m for m in messages)


def test_blocklist_and_filtering(tmp_path):
    bl = tmp_path / "block.txt"
    bl.write_text("# junk sellers\nreplica\nFAKE Brand\n\n", encoding="utf-8")
    terms = ingest.load_blocklist(bl)
    assert terms == {"replica", "fake brand"}

    candidates = [
        ingest.CandidateQuery("replica watch", "file"),
        ingest.CandidateQuery("replicas watch", "file"),  # substring, kept
        ingest.CandidateQuery("fake brand shoes", "file"),
        ingest.CandidateQuery("brand fake shoes", "file"),  # split run, kept
        ingest.CandidateQuery("plain shoes", "file"),
    ]
    kept, removed = ingest.filter_negative_queries(candidates, terms)
    assert [c.query for c in removed] == ["replica watch", "fake brand shoes"]
    assert [c.query for c in kept] == ["replicas watch", "brand fake shoes",
                                       "plain shoes"]


def test_candidates_from_click_log_and_merge():
    records = [
        ingest.ClickRecord("b query", "p1", "item", 4, 10),
        ingest.ClickRecord("a query", "p2", "item", 3, 10),
        ingest.ClickRecord("b query", "p3", "shelf", 2, 10),
    ]
    from_log = ingest.candidates_from_click_log(records)
    assert [(c.query, c.clicks_total) for c in from_log] == [
        ("a query", 3), ("b query", 6)]

    extra = [ingest.CandidateQuery("b query", "file", 1),
             ingest.CandidateQuery("c query", "file", 9)]
    merged = ingest.merge_candidates(from_log, extra)
    assert [(c.query, c.source, c.clicks_total) for c in merged] == [
        ("a query", "search_log", 3),
        ("b query", "search_log", 7),
        ("c query", "file", 9)]


def test_load_candidate_file_mixed_format(tmp_path):
    path = tmp_path / "cands.jsonl"
    path.write_text(
        '{"query": "Topic One", "clicks_total": 5}\n'
        "plain text query\n\n", encoding="utf-8")
    cands = ingest.load_candidate_file(path, source="file")
    assert [(c.query, c.clicks_total) for c in cands] == [
        ("topic one", 5), ("plain text query", 0)]
