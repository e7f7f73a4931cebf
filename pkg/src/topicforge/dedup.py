"""Deduplication of candidate topics against existing shelf and facet pages.

Shelf pages are few, so their title embeddings are precomputed and every
query is compared against all of them exactly. Facet pages are too many for
that; candidates are narrowed to the pages under the query's classified
shelf product type that share at least one extracted facet pair, and their
embeddings are computed on demand through a bounded least-recently-used
cache. A query counts as a duplicate when its best cosine similarity over
(all shelves, narrowed facet pages) reaches the threshold.

The narrowing step can miss a duplicate whose facet values are not in the
lexicon; run statistics report how often the facet path was skipped so that
risk is visible rather than silent.

Indexes are immutable after build. Per-query decisions are independent; the
facet cache serializes access with a lock so concurrent callers are safe.
"""

from __future__ import annotations

import csv
import logging
import threading
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .ingest import PageRecord, normalize_query
from .tokenizer import extract_facets

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.86  # midpoint of the 0.85-0.88 similarity band
DEFAULT_CACHE_CAPACITY = 10_000


@dataclass(frozen=True)
class DedupDecision:
    query: str
    verdict: str  # "kept" | "duplicate"
    best_match: str | None
    best_similarity: float
    path: str  # "shelf" | "facet"

    def to_csv_row(self) -> list[str]:
        return [self.query, self.verdict, self.best_match or "",
                f"{self.best_similarity:.6f}", self.path]


class ShelfIndex:
    """Precomputed unit-norm title embeddings for every shelf page."""

    def __init__(self, page_ids: list[str], vectors: np.ndarray,
                 product_types: dict[str, str]):
        self.page_ids = page_ids
        self.vectors = vectors
        self.product_types = product_types

    def __len__(self) -> int:
        return len(self.page_ids)


def build_shelf_index(catalog: Sequence[PageRecord],
                      embed_fn: Callable[[str], np.ndarray]) -> ShelfIndex:
    shelves = sorted((p for p in catalog if p.page_type == "shelf"),
                     key=lambda p: p.page_id)
    if not shelves:
        logger.warning("catalog contains no shelf pages; shelf index is empty")
        return ShelfIndex([], np.zeros((0, 1)), {})
    vectors = np.stack([embed_fn(p.title) for p in shelves])
    vectors = vectors / np.linalg.norm(vectors, axis=1, keepdims=True)
    return ShelfIndex([p.page_id for p in shelves], vectors,
                      {p.page_id: p.product_type for p in shelves})


def dedup_against_shelves(query_vec: np.ndarray,
                          index: ShelfIndex) -> tuple[str | None, float]:
    """Exhaustive best shelf match: exact max over every shelf vector."""
    if len(index) == 0:
        return None, float("-inf")
    sims = index.vectors @ (query_vec / np.linalg.norm(query_vec))
    best = int(np.argmax(sims))
    return index.page_ids[best], float(sims[best])


class FacetIndex:
    """Facet pages keyed by (product_type, facet_name, facet_value).

    Embeddings are computed lazily via ``embed_fn`` and held in an LRU
    cache of ``cache_capacity`` entries.
    """

    def __init__(self, catalog: Sequence[PageRecord],
                 embed_fn: Callable[[str], np.ndarray],
                 cache_capacity: int = DEFAULT_CACHE_CAPACITY):
        if cache_capacity < 1:
            raise ValueError("cache_capacity must be >= 1")
        self._embed_fn = embed_fn
        self._capacity = cache_capacity
        self._cache: OrderedDict[str, np.ndarray] = OrderedDict()
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0
        self.titles: dict[str, str] = {}
        self.by_facet: dict[tuple[str, str, str], list[str]] = {}
        for page in catalog:
            if page.page_type != "facet":
                continue
            self.titles[page.page_id] = page.title
            for name, value in sorted(page.facets):
                key = (page.product_type, name, value)
                self.by_facet.setdefault(key, []).append(page.page_id)
        for ids in self.by_facet.values():
            ids.sort()

    def __len__(self) -> int:
        return len(self.titles)

    def pages_for(self, product_type: str,
                  facets: Mapping[str, str]) -> list[str]:
        """Facet pages under the product type sharing >= 1 facet pair."""
        found: set[str] = set()
        for name, value in facets.items():
            found.update(self.by_facet.get((product_type, name, value), ()))
        return sorted(found)

    def vector(self, page_id: str) -> np.ndarray:
        with self._lock:
            vec = self._cache.get(page_id)
            if vec is not None:
                self.hits += 1
                self._cache.move_to_end(page_id)
                return vec
            self.misses += 1
        computed = self._embed_fn(self.titles[page_id])
        computed = computed / np.linalg.norm(computed)
        with self._lock:
            self._cache[page_id] = computed
            self._cache.move_to_end(page_id)
            while len(self._cache) > self._capacity:
                self._cache.popitem(last=False)
        return computed

    def cache_info(self) -> dict[str, int]:
        with self._lock:
            return {"hits": self.hits, "misses": self.misses,
                    "size": len(self._cache), "capacity": self._capacity}


def narrow_facet_candidates(
    query: str,
    facet_index: FacetIndex,
    product_type: str,
    facet_lexicon: Mapping[str, set[str]] | None,
) -> list[str]:
    """Facet pages worth comparing: same product type, >= 1 shared facet.

    Queries with no extractable facets narrow to nothing (the facet path
    is skipped for them).
    """
    if not facet_lexicon:
        return []
    facets = extract_facets(normalize_query(query), facet_lexicon)
    if not facets:
        return []
    return facet_index.pages_for(product_type, facets)


class Deduper:
    """Binds indexes, embedder and threshold into per-query decisions."""

    def __init__(
        self,
        shelf_index: ShelfIndex,
        facet_index: FacetIndex | None,
        embed_fn: Callable[[str], np.ndarray],
        threshold: float = DEFAULT_THRESHOLD,
        facet_lexicon: Mapping[str, set[str]] | None = None,
    ):
        if not 0.0 <= threshold <= 1.0:
            raise ValueError("threshold must be in [0, 1]")
        self.shelf_index = shelf_index
        self.facet_index = facet_index
        self.embed_fn = embed_fn
        self.threshold = threshold
        self.facet_lexicon = facet_lexicon
        self.facet_path_skipped = 0

    def decide(self, query: str) -> DedupDecision:
        query_vec = self.embed_fn(query)
        query_vec = query_vec / np.linalg.norm(query_vec)
        best_page, best_sim = dedup_against_shelves(query_vec, self.shelf_index)
        path = "shelf"

        candidates: list[str] = []
        if self.facet_index is not None and best_page is not None:
            product_type = self.shelf_index.product_types[best_page]
            candidates = narrow_facet_candidates(
                query, self.facet_index, product_type, self.facet_lexicon)
        if not candidates:
            self.facet_path_skipped += 1
        for page_id in candidates:
            sim = float(self.facet_index.vector(page_id) @ query_vec)
            if sim > best_sim:
                best_page, best_sim, path = page_id, sim, "facet"

        verdict = "duplicate" if best_sim >= self.threshold else "kept"
        return DedupDecision(query, verdict, best_page, best_sim, path)


def dedup(
    query: str,
    shelf_index: ShelfIndex,
    facet_index: FacetIndex | None,
    embed_fn: Callable[[str], np.ndarray],
    threshold: float = DEFAULT_THRESHOLD,
    facet_lexicon: Mapping[str, set[str]] | None = None,
) -> DedupDecision:
    """One-query convenience wrapper around :class:`Deduper`."""
    return Deduper(shelf_index, facet_index, embed_fn,
                   threshold, facet_lexicon).decide(query)


def dedup_all(
    queries: Sequence[str],
    deduper: Deduper,
) -> tuple[list[DedupDecision], dict]:
    """Decide every query; returns decisions plus run statistics.

    ``facet_path_skipped`` counts queries whose narrowing produced no
    candidates (no extractable facets or no matching pages) — the share of
    traffic exposed to the known lexicon-coverage blind spot.
    """
    deduper.facet_path_skipped = 0
    decisions = [deduper.decide(q) for q in queries]
    stats = {
        "total": len(decisions),
        "kept": sum(d.verdict == "kept" for d in decisions),
        "duplicate": sum(d.verdict == "duplicate" for d in decisions),
        "facet_path_skipped": deduper.facet_path_skipped,
    }
    if deduper.facet_index is not None:
        stats["facet_cache"] = deduper.facet_index.cache_info()
    return decisions, stats


def write_dedup_report(decisions: Sequence[DedupDecision],
                       path: str | Path) -> None:
    """CSV report: query,verdict,best_match,best_similarity,path."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query", "verdict", "best_match",
                         "best_similarity", "path"])
        for decision in decisions:
            writer.writerow(decision.to_csv_row())
