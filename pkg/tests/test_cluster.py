"""Agglomerative clustering against a naive O(n^3) oracle, plus product-type
classification and report output."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pytest

from oracles import hash_embed_fn, naive_agglomerate
from topicforge.cluster import (ClusterResult, ProductTypeIndex, agglomerate,
                                classify_product_type, cluster_topics,
                                write_cluster_report)


@dataclass
class Cand:
    query: str
    clicks_total: int


def blob_vectors(rng, n_blobs, per_blob, dim=8, noise=0.2):
    centers = rng.standard_normal((n_blobs, dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    out = {}
    for c in range(n_blobs):
        for k in range(per_blob):
            v = centers[c] + noise * rng.standard_normal(dim)
            out[f"q{c:02d}-{k:02d}"] = v / np.linalg.norm(v)
    return out


def partition(result: ClusterResult) -> set[frozenset[str]]:
    return {frozenset(group) for group in result.clusters().values()}


@pytest.mark.parametrize("linkage", ["average", "single", "complete"])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_partition_matches_naive_oracle(linkage, seed):
    rng = np.random.default_rng(seed)
    vectors = blob_vectors(rng, 4, 8)
    for threshold in (0.05, 0.3, 0.8):
        got = partition(agglomerate(vectors, threshold, linkage))
        want = naive_agglomerate(vectors, threshold, linkage)
        assert got == want


@pytest.mark.parametrize("linkage", ["average", "single", "complete"])
def test_unstructured_vectors_match_oracle(linkage):
    # no planted blobs, heavy merging: exercises a long nontrivial merge order
    rng = np.random.default_rng(9)
    raw = rng.standard_normal((30, 6))
    vectors = {f"r{i:02d}": v for i, v in enumerate(raw)}
    got = partition(agglomerate(vectors, 1.1, linkage))
    assert got == naive_agglomerate(vectors, 1.1, linkage)


def test_identical_vectors_merge_in_name_order():
    v = np.array([0.6, 0.8, 0.0])
    vectors = {"a0": v.copy(), "a1": v.copy(), "a2": v.copy(),
               "far": np.array([-0.8, 0.6, 0.0])}
    result = agglomerate(vectors, 0.5, "average")
    assert [(a, b) for a, b, _ in result.merge_log] == [("a0", "a1"),
                                                        ("a0", "a2")]
    for _, _, d in result.merge_log:
        assert abs(d) < 1e-12
    assert result.clusters() == {"c0": ["a0", "a1", "a2"], "c1": ["far"]}


def test_tiny_threshold_keeps_singletons():
    rng = np.random.default_rng(3)
    vectors = blob_vectors(rng, 3, 4)
    result = agglomerate(vectors, 1e-9, "average")
    assert len(result.representatives) == len(vectors)
    assert result.merge_log == []


def test_insertion_order_is_irrelevant():
    rng = np.random.default_rng(5)
    vectors = blob_vectors(rng, 3, 6)
    shuffled = {k: vectors[k] for k in reversed(sorted(vectors))}
    a = agglomerate(vectors, 0.4, "average")
    b = agglomerate(shuffled, 0.4, "average")
    assert partition(a) == partition(b)
    assert a.merge_log == b.merge_log


def test_distance_evaluation_count():
    rng = np.random.default_rng(0)
    vectors = blob_vectors(rng, 4, 8)
    n = len(vectors)
    for threshold in (1e-9, 0.5, 1.5):
        result = agglomerate(vectors, threshold, "average")
        assert result.distance_evaluations == n * (n - 1) // 2


def test_representative_prefers_clicks_then_name():
    v = np.array([1.0, 0.0])
    vectors = {"a0": v, "a1": v, "a2": v}
    result = agglomerate(vectors, 0.5, "average", clicks={"a2": 9, "a1": 3})
    assert result.representatives == {"c0": "a2"}
    result = agglomerate(vectors, 0.5, "average", clicks={})
    assert result.representatives == {"c0": "a0"}


def test_agglomerate_validation():
    v = {"a": np.array([1.0, 0.0])}
    with pytest.raises(ValueError, match="threshold"):
        agglomerate(v, 0.0)
    with pytest.raises(ValueError, match="threshold"):
        agglomerate(v, 2.0)
    with pytest.raises(ValueError, match="linkage"):
        agglomerate(v, 0.5, "centroid")
    with pytest.raises(ValueError, match="at least one"):
        agglomerate({}, 0.5)


def test_product_type_index_and_classification():
    embed = hash_embed_fn(dim=8)
    index = ProductTypeIndex.build(["boots", "anorak", "boots"], embed)
    assert index.labels == ["anorak", "boots"]
    assert np.allclose(np.linalg.norm(index.vectors, axis=1), 1.0)
    assert classify_product_type(embed("boots") * 3.0, index) == "boots"
    assert classify_product_type(embed("anorak"), index) == "anorak"
    with pytest.raises(ValueError):
        ProductTypeIndex.build([], embed)


def test_classification_tie_takes_smallest_label():
    same = np.array([1.0, 0.0, 0.0])
    index = ProductTypeIndex.build(["zzz", "mmm"], lambda text: same)
    assert classify_product_type(same, index) == "mmm"


def test_cluster_topics_partitions_by_type():
    # orthogonal planted directions so classification is unambiguous
    def embed(text):
        v = np.zeros(6)
        axis = 0 if "shoe" in text else 3
        v[axis] = 1.0
        v[axis + 1] = 0.1 * (len(text) % 7)
        return v / np.linalg.norm(v)

    index = ProductTypeIndex.build(["shoe", "tent"], embed)
    queries = [Cand("red shoe", 5), Cand("blue shoe", 2), Cand("red shoe", 9),
               "green tent", Cand("blue tent", 1)]
    result = cluster_topics(queries, embed, index, threshold=1.0)
    types = {q: pt for q, (pt, _) in result.assignments.items()}
    assert types == {"red shoe": "shoe", "blue shoe": "shoe",
                     "green tent": "tent", "blue tent": "tent"}
    assert all(cid.split("#")[0] in ("shoe", "tent")
               for _, cid in result.assignments.values())
    # 4 unique queries x 2 type comparisons + C(2,2) pairwise per type
    assert result.distance_evaluations == 4 * 2 + 1 + 1
    # duplicate "red shoe" keeps the max click count for rep choice
    shoe_cluster = [cid for q, (pt, cid) in result.assignments.items()
                    if pt == "shoe"]
    assert result.representatives[shoe_cluster[0]] == "red shoe"


def test_cluster_topics_empty_input():
    index = ProductTypeIndex.build(["x"], hash_embed_fn(4))
    result = cluster_topics([], hash_embed_fn(4), index, 0.5)
    assert result.assignments == {}
    assert result.distance_evaluations == 0


def test_cluster_report_csv(tmp_path):
    v = np.array([1.0, 0.0])
    result = agglomerate({"a0": v, "a1": v}, 0.5, "average",
                         clicks={"a1": 2}, product_type="shoe")
    path = tmp_path / "clusters.csv"
    write_cluster_report(result, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "query,product_type,cluster_id,is_representative"
    assert lines[1] == "a0,shoe,shoe#0,0"
    assert lines[2] == "a1,shoe,shoe#0,1"
