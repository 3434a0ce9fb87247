"""Query-time pipeline: routing, token retrieval, scatter merge, sorting.

The four stages are instrumented separately with a monotonic nanosecond
clock, and every vector dot product performed is counted. Without a
sequence-level store only documents sharing at least one routed key with
the query can be scored; with one, every document receives the
sequence-level dot and retrieval is exhaustive.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .index import InvertedIndex
from .types import ContractError, EncodedQuery


@dataclass
class SearchResult:
    ranked: list[tuple[str, float]]
    dot_products_used: int
    latency_breakdown: dict[str, int] = field(default_factory=dict)


def count_dot_products(query: EncodedQuery, index: InvertedIndex, with_cls: bool = False) -> int:
    """Exact number of vector dots a search for this query performs."""
    total = 0
    for tok in query.tokens:
        for key, _ in tok.routes:
            p = index.postings.get(key)
            if p is not None:
                total += len(p)
    if with_cls:
        total += index.meta.doc_count
    return total


def search(
    query: EncodedQuery, index: InvertedIndex, top_k: int, with_cls: bool = False
) -> SearchResult:
    if top_k < 1:
        raise ContractError("top_k must be >= 1")
    if with_cls and index.cls_store is None:
        raise ContractError("index has no sequence-level store")
    if with_cls and query.cls_vector is None:
        raise ContractError("query has no sequence-level vector")

    t0 = time.monotonic_ns()
    # stage 1: query routing — materialize one scaled vector per token route
    routes = []
    for tok in query.tokens:
        if len(tok.vector) != index.meta.c:
            raise ContractError("query dimension does not match index")
        for key, w in tok.routes:
            routes.append((key, (w * tok.vector).astype(np.float64)))
    t1 = time.monotonic_ns()

    # stage 2: token-level retrieval — one dot per posting entry scanned
    dots_used = 0
    hits = []
    for key, u in routes:
        p = index.postings.get(key)
        if p is None or len(p) == 0:
            hits.append(None)
            continue
        dots = p.vectors.astype(np.float64) @ u
        dots_used += len(p)
        hits.append((p.doc_ids, dots))
    t2 = time.monotonic_ns()

    # stage 3: scatter — per (query token route, doc) keep the max, sum per doc
    n_docs = index.meta.doc_count
    scores = np.zeros(n_docs, dtype=np.float64)
    touched = np.zeros(n_docs, dtype=bool)
    route_max = np.empty(n_docs, dtype=np.float64)
    for hit in hits:
        if hit is None:
            continue
        doc_ids, dots = hit
        route_max.fill(-np.inf)
        np.maximum.at(route_max, doc_ids, dots)
        mask = route_max > -np.inf
        scores[mask] += route_max[mask]
        touched |= mask
    if with_cls:
        scores += index.cls_store.astype(np.float64) @ np.asarray(
            query.cls_vector, dtype=np.float64
        )
        dots_used += n_docs
        touched[:] = True
    t3 = time.monotonic_ns()

    # stage 4: sort candidates, ties by ascending external doc id
    cand = np.flatnonzero(touched)
    ranked = sorted(
        ((index.doc_names[i], float(scores[i])) for i in cand),
        key=lambda pair: (-pair[1], pair[0]),
    )[:top_k]
    t4 = time.monotonic_ns()

    return SearchResult(
        ranked,
        dots_used,
        {
            "routing_ns": t1 - t0,
            "token_retrieval_ns": t2 - t1,
            "scatter_ns": t3 - t2,
            "sort_ns": t4 - t3,
        },
    )


def measure_latency(
    queries: list[EncodedQuery],
    index: InvertedIndex,
    top_k: int = 1000,
    trials: int = 3,
    with_cls: bool = False,
) -> dict[str, float]:
    """Minimum over trials of the per-stage average latency (batch size 1)."""
    if trials < 1:
        raise ContractError("trials must be >= 1")
    if not queries:
        raise ContractError("query set must be non-empty")
    stages = ("routing_ns", "token_retrieval_ns", "scatter_ns", "sort_ns")
    best = None
    for _ in range(trials):
        sums = dict.fromkeys(stages, 0)
        for q in queries:
            result = search(q, index, top_k, with_cls)
            for s in stages:
                sums[s] += result.latency_breakdown[s]
        avg = {s: sums[s] / len(queries) for s in stages}
        avg["total_ns"] = sum(avg[s] for s in stages)
        if best is None or avg["total_ns"] < best["total_ns"]:
            best = avg
    return best
