"""Co-click aggregation, the interactive similarity metric, and training pairs.

Two queries are "co-clicked" on a page when both have at least one click on
it. For a query pair the co-click count of each side is that side's clicks
summed over the shared pages, and the interactive metric is the geometric
mean of the two co-click fractions:

    interactive(q1, q2) = sqrt( (co_1 * co_2) / (total_1 * total_2) )

which lands in (0, 1] for co-clicked pairs and is 0 when nothing is shared.
Training sets pair every co-clicked pair (its metric as the label) with
uniformly sampled never-co-clicked pairs labeled -1.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .ingest import ClickRecord

logger = logging.getLogger(__name__)


class UndefinedMetricError(ValueError):
    """Raised when a query has zero total clicks, making the metric undefined."""


@dataclass(frozen=True)
class QueryPairSample:
    query_a: str
    query_b: str
    interactive: float

    def to_dict(self) -> dict:
        return {"query_a": self.query_a, "query_b": self.query_b,
                "interactive": self.interactive}


@dataclass
class CoClickStats:
    """Aggregated click totals and per-pair co-click counts.

    ``pairs`` stores each unordered pair once under its sorted key; the
    stored counts are aligned with the key order.
    """

    totals: dict[str, int] = field(default_factory=dict)
    pairs: dict[tuple[str, str], tuple[int, int]] = field(default_factory=dict)

    def queries(self) -> list[str]:
        return sorted(self.totals)


def _pair_key(q1: str, q2: str) -> tuple[str, str]:
    return (q1, q2) if q1 <= q2 else (q2, q1)


def aggregate_clicks(records: Sequence[ClickRecord]) -> CoClickStats:
    """Build CoClickStats from click records.

    Repeated (query, page) rows are summed. Totals count clicks over all
    pages; co-click entries exist exactly for pairs sharing at least one
    page that both sides clicked.
    """
    by_query: dict[str, dict[str, int]] = {}
    for rec in records:
        pages = by_query.setdefault(rec.query, {})
        pages[rec.page_id] = pages.get(rec.page_id, 0) + rec.clicks

    stats = CoClickStats()
    for query, pages in by_query.items():
        stats.totals[query] = sum(pages.values())

    # invert to page -> clicking queries, ignoring zero-click rows
    by_page: dict[str, list[str]] = {}
    for query, pages in by_query.items():
        for page_id, clicks in pages.items():
            if clicks > 0:
                by_page.setdefault(page_id, []).append(query)

    for page_id, queries in by_page.items():
        queries.sort()
        for i in range(len(queries)):
            for j in range(i + 1, len(queries)):
                qa, qb = queries[i], queries[j]
                co_a, co_b = stats.pairs.get((qa, qb), (0, 0))
                stats.pairs[(qa, qb)] = (co_a + by_query[qa][page_id],
                                         co_b + by_query[qb][page_id])
    return stats


def interactive_metric(stats: CoClickStats, q1: str, q2: str) -> float:
    """Interactive metric between two queries; 0.0 when nothing is co-clicked."""
    t1 = stats.totals.get(q1, 0)
    t2 = stats.totals.get(q2, 0)
    if t1 <= 0 or t2 <= 0:
        raise UndefinedMetricError(
            f"metric undefined: zero total clicks for {q1 if t1 <= 0 else q2!r}")
    counts = stats.pairs.get(_pair_key(q1, q2))
    if counts is None:
        return 0.0
    co_a, co_b = counts
    return math.sqrt((co_a * co_b) / (t1 * t2))


def positive_pairs(stats: CoClickStats) -> list[QueryPairSample]:
    """Every co-clicked pair with its interactive metric, in sorted key order."""
    out = []
    for (qa, qb) in sorted(stats.pairs):
        out.append(QueryPairSample(qa, qb, interactive_metric(stats, qa, qb)))
    return out


def build_training_set(
    stats: CoClickStats,
    negative_ratio: float | str = "auto",
    seed: int = 0,
    min_interactive: float = 0.0,
) -> list[QueryPairSample]:
    """Positives (co-clicked pairs) plus uniformly sampled -1 negatives.

    ``negative_ratio`` is the target positives:negatives ratio; "auto" uses
    the mean positive interactive metric, and 0 disables negative sampling.
    Negatives are drawn uniformly, without replacement, from pairs of
    clicked queries that share no page. Deterministic under ``seed``.
    ``min_interactive`` > 0 drops positives below that floor.
    """
    positives = positive_pairs(stats)
    if min_interactive > 0:
        positives = [s for s in positives if s.interactive >= min_interactive]
    if negative_ratio == 0 or not positives:
        return positives

    if negative_ratio == "auto":
        mean_pos = sum(s.interactive for s in positives) / len(positives)
        n_neg = round(len(positives) / mean_pos)
    else:
        ratio = float(negative_ratio)
        if ratio < 0:
            raise ValueError(f"negative_ratio must be >= 0, got {ratio}")
        n_neg = round(len(positives) / ratio)

    clicked = [q for q in stats.queries() if stats.totals[q] > 0]
    candidates = []
    for i in range(len(clicked)):
        for j in range(i + 1, len(clicked)):
            key = (clicked[i], clicked[j])
            if key not in stats.pairs:
                candidates.append(key)
    if not candidates:
        logger.warning("co-click graph too dense: no negative pairs available")
        return positives
    if n_neg > len(candidates):
        logger.warning("only %d negative pairs available (wanted %d)",
                       len(candidates), n_neg)
        n_neg = len(candidates)

    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(candidates), size=n_neg, replace=False)
    negatives = [QueryPairSample(*candidates[int(i)], -1.0) for i in chosen]
    return positives + negatives


def training_set_to_jsonl(samples: Sequence[QueryPairSample], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_dict(), sort_keys=True) + "\n")


def training_set_from_jsonl(path: str | Path) -> list[QueryPairSample]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            d = json.loads(line)
            out.append(QueryPairSample(d["query_a"], d["query_b"],
                                       float(d["interactive"])))
    return out
