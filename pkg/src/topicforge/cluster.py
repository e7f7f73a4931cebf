"""Two-stage topic clustering: product-type classification, then per-type
agglomerative clustering under cosine linkage.

Classifying every query to its nearest product type first confines the
quadratic clustering work to within-type groups, which cuts pairwise
distance evaluations by an order of magnitude on evenly split inputs. The
counter on :class:`ClusterResult` records exactly how many embedding-space
distances were computed (classification cosines plus each group's initial
condensed matrix); linkage updates reuse those via the Lance-Williams
recurrence and are not counted.

Determinism: queries are processed in sorted order, merge ties break on the
smallest member, so input order never changes the partition.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

LINKAGES = ("average", "single", "complete")


@dataclass
class ProductTypeIndex:
    """Unit-norm embedding per product-type label, rows sorted by label."""

    labels: list[str]
    vectors: np.ndarray

    @classmethod
    def build(cls, names: Iterable[str],
              embed_fn: Callable[[str], np.ndarray]) -> "ProductTypeIndex":
        labels = sorted(set(names))
        if not labels:
            raise ValueError("product type index needs at least one label")
        vecs = np.stack([embed_fn(label) for label in labels])
        vecs = vecs / np.linalg.norm(vecs, axis=1, keepdims=True)
        return cls(labels, vecs)

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class ClusterResult:
    """Partition of queries plus the evidence trail that produced it.

    assignments: query -> (product_type, cluster_id)
    representatives: cluster_id -> representative query
    merge_log: (cluster_a, cluster_b, linkage_distance) per merge, where a
        cluster is named by its lexicographically smallest member
    distance_evaluations: embedding-space distance computations performed
    """

    assignments: dict[str, tuple[str, str]] = field(default_factory=dict)
    representatives: dict[str, str] = field(default_factory=dict)
    merge_log: list[tuple[str, str, float]] = field(default_factory=list)
    distance_evaluations: int = 0

    def clusters(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {}
        for query, (_, cid) in sorted(self.assignments.items()):
            out.setdefault(cid, []).append(query)
        return out


def classify_product_type(query_vec: np.ndarray, index: ProductTypeIndex) -> str:
    """Label whose embedding has the highest cosine with the query vector.

    Ties resolve to the lexicographically smallest label (rows are sorted
    and argmax takes the first maximum).
    """
    sims = index.vectors @ (query_vec / np.linalg.norm(query_vec))
    return index.labels[int(np.argmax(sims))]


def agglomerate(
    vectors: Mapping[str, np.ndarray],
    threshold: float,
    linkage: str = "average",
    clicks: Mapping[str, int] | None = None,
    product_type: str = "",
) -> ClusterResult:
    """Bottom-up merging under cosine distance until no linkage <= threshold.

    Each step merges the closest active pair (ties: lexicographically
    smallest members). Cluster-to-cluster distances follow the
    Lance-Williams recurrence for the chosen linkage, so only the initial
    n(n-1)/2 pairwise distances touch the vectors. The representative of a
    final cluster is its highest-click member, ties lexicographic.
    """
    if not 0.0 < threshold < 2.0:
        raise ValueError("threshold must be in (0, 2)")
    if linkage not in LINKAGES:
        raise ValueError(f"unknown linkage {linkage!r}")
    if not vectors:
        raise ValueError("need at least one query")
    clicks = clicks or {}

    order = sorted(vectors)
    n = len(order)
    mat = np.stack([np.asarray(vectors[q], dtype=np.float64) for q in order])
    mat = mat / np.linalg.norm(mat, axis=1, keepdims=True)
    dist = 1.0 - mat @ mat.T
    np.fill_diagonal(dist, np.inf)
    result = ClusterResult(distance_evaluations=n * (n - 1) // 2)

    # cluster at slot i always holds original index i as its smallest member,
    # so row-major argmin realizes the (distance, member_a, member_b) tie-break
    active = np.ones(n, dtype=bool)
    sizes = np.ones(n)
    members: dict[int, list[int]] = {i: [i] for i in range(n)}
    while active.sum() > 1:
        flat = int(np.argmin(dist))
        i, j = divmod(flat, n)
        if i > j:
            i, j = j, i
        dmin = dist[i, j]
        if not dmin <= threshold:
            break
        result.merge_log.append((order[i], order[j], float(dmin)))
        others = active.copy()
        others[i] = others[j] = False
        if linkage == "average":
            merged = (sizes[i] * dist[i, others] + sizes[j] * dist[j, others]) / (
                sizes[i] + sizes[j])
        elif linkage == "single":
            merged = np.minimum(dist[i, others], dist[j, others])
        else:
            merged = np.maximum(dist[i, others], dist[j, others])
        dist[i, others] = merged
        dist[others, i] = merged
        dist[j, :] = np.inf
        dist[:, j] = np.inf
        sizes[i] += sizes[j]
        members[i].extend(members.pop(j))
        active[j] = False

    for seq, slot in enumerate(np.flatnonzero(active)):
        cid = f"{product_type}#{seq}" if product_type else f"c{seq}"
        group = [order[m] for m in members[int(slot)]]
        rep = min(group, key=lambda q: (-clicks.get(q, 0), q))
        result.representatives[cid] = rep
        for q in group:
            result.assignments[q] = (product_type, cid)
    return result


def cluster_topics(
    queries: Sequence,
    encoder: Callable[[str], np.ndarray],
    index: ProductTypeIndex,
    threshold: float,
    linkage: str = "average",
) -> ClusterResult:
    """Classify queries to product types, then agglomerate within each type.

    ``queries`` may be plain strings or objects with ``query`` and
    ``clicks_total`` attributes (click counts drive representative choice).
    """
    texts: list[str] = []
    clicks: dict[str, int] = {}
    for q in queries:
        text = q if isinstance(q, str) else q.query
        if text not in clicks:
            texts.append(text)
        clicks[text] = max(clicks.get(text, 0),
                           0 if isinstance(q, str) else q.clicks_total)
    result = ClusterResult()
    if not texts:
        return result

    by_type: dict[str, dict[str, np.ndarray]] = {}
    for text in sorted(texts):
        vec = encoder(text)
        ptype = classify_product_type(vec, index)
        by_type.setdefault(ptype, {})[text] = vec
    result.distance_evaluations += len(texts) * len(index)

    for ptype in sorted(by_type):
        fragment = agglomerate(by_type[ptype], threshold, linkage,
                               clicks=clicks, product_type=ptype)
        result.assignments.update(fragment.assignments)
        result.representatives.update(fragment.representatives)
        result.merge_log.extend(fragment.merge_log)
        result.distance_evaluations += fragment.distance_evaluations
    logger.info("clustered %d queries into %d clusters over %d product types "
                "(%d distance evaluations)", len(texts),
                len(result.representatives), len(by_type),
                result.distance_evaluations)
    return result


def write_cluster_report(result: ClusterResult, path: str | Path) -> None:
    """CSV report: query,product_type,cluster_id,is_representative."""
    rep_set = set(result.representatives.items())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query", "product_type", "cluster_id", "is_representative"])
        for query in sorted(result.assignments):
            ptype, cid = result.assignments[query]
            writer.writerow([query, ptype, cid,
                             "1" if (cid, query) in rep_set else "0"])
