"""Similarity functions for the four token-routing schemes.

All schemes reduce to sums of per-query-token maxima over an admissible set
of document tokens; they differ only in how that set is chosen:

* single-vector: one pooled vector per side, plain dot product
* all-to-all: every query token may interact with every document token
* static lexical: interaction restricted to identical surface token ids
* dynamic lexical: interaction restricted to shared learned routing keys,
  with vectors scaled by their routing weights

A max over an empty admissible set contributes 0; a non-empty set may still
yield a negative maximum.
"""

from __future__ import annotations

import numpy as np

from .types import ContractError, EncodedDocument, EncodedQuery, TokenEmbedding

SCHEMES = ("single", "all_to_all", "static", "dynamic")


def score_single_vector(vq: np.ndarray, vd: np.ndarray) -> float:
    vq = np.asarray(vq, dtype=np.float64)
    vd = np.asarray(vd, dtype=np.float64)
    if vq.shape != vd.shape:
        raise ContractError(f"dimension mismatch: {vq.shape} vs {vd.shape}")
    return float(vq @ vd)


def score_all_to_all(Q: list[TokenEmbedding], D: list[TokenEmbedding]) -> float:
    """Sum over query tokens of the max dot product over all document tokens."""
    if not D:
        raise ContractError("document token sequence must be non-empty")
    dmat = np.stack([d.vector for d in D])
    return float(sum(np.max(dmat @ q.vector) for q in Q))


def score_static_lexical(
    Q: list[TokenEmbedding],
    D: list[TokenEmbedding],
    with_cls: bool = False,
    vq_cls: np.ndarray | None = None,
    vd_cls: np.ndarray | None = None,
) -> float:
    """MaxSim restricted to exact token-id matches, optionally plus a CLS dot."""
    score = 0.0
    for q in Q:
        dots = [d.vector @ q.vector for d in D if d.token_id == q.token_id]
        if dots:
            score += max(dots)
    if with_cls:
        if vq_cls is None or vd_cls is None:
            raise ContractError("with_cls requires both sequence-level vectors")
        score += score_single_vector(vq_cls, vd_cls)
    return float(score)


def score_dynamic(Q: EncodedQuery, D: EncodedDocument, with_cls: bool = False) -> float:
    """Dynamic lexical routing score.

    For each query token route (key E, weight w_q) the admissible set is all
    document (token, route) pairs sharing key E; the summand is the max of
    (w_q * v_q) . (w_d * v_d) over that set, 0 if the set is empty.
    """
    if with_cls and (Q.cls_vector is None or D.cls_vector is None):
        raise ContractError("with_cls requires sequence-level vectors on both sides")
    rows: list[np.ndarray] = []
    row_index: dict[int, list[int]] = {}
    for dtok in D.tokens:
        for key, w in dtok.routes:
            row_index.setdefault(key, []).append(len(rows))
            rows.append(w * dtok.vector)
    qroutes = [(key, wq * qtok.vector) for qtok in Q.tokens for key, wq in qtok.routes]
    score = 0.0
    if rows and qroutes:
        # one (routes x query-routes) matmul, then a max per admissible group
        dots = np.asarray(rows) @ np.stack([u for _, u in qroutes]).T
        for j, (key, _) in enumerate(qroutes):
            hit = row_index.get(key)
            if hit is not None:
                score += float(dots[hit, j].max())
    if with_cls:
        score += score_single_vector(Q.cls_vector, D.cls_vector)
    return float(score)


def _score_with_scheme(
    query: EncodedQuery, doc: EncodedDocument, scheme: str, with_cls: bool
) -> float:
    if scheme == "single":
        if query.cls_vector is None or doc.cls_vector is None:
            raise ContractError("single-vector scheme requires sequence-level vectors")
        return score_single_vector(query.cls_vector, doc.cls_vector)
    if scheme == "dynamic":
        return score_dynamic(query, doc, with_cls)
    qtoks = [TokenEmbedding(t.vector, t.token_id, i) for i, t in enumerate(query.tokens)]
    dtoks = [TokenEmbedding(t.vector, t.token_id, j) for j, t in enumerate(doc.tokens)]
    if scheme == "all_to_all":
        s = score_all_to_all(qtoks, dtoks)
        if with_cls:
            s += score_single_vector(query.cls_vector, doc.cls_vector)
        return s
    if scheme == "static":
        return score_static_lexical(
            qtoks, dtoks, with_cls, query.cls_vector, doc.cls_vector
        )
    raise ContractError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


def brute_force_rank(
    query: EncodedQuery,
    corpus: list[EncodedDocument],
    top_k: int,
    scheme: str = "dynamic",
    with_cls: bool = False,
) -> list[tuple[str, float]]:
    """Score every document exhaustively; the correctness oracle for the index path.

    Ties broken by ascending doc_id for reproducible rankings.
    """
    if top_k < 1:
        raise ContractError("top_k must be >= 1")
    scored = [
        (doc.doc_id, _score_with_scheme(query, doc, scheme, with_cls)) for doc in corpus
    ]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored[:top_k]


def oracle_rank(
    query: EncodedQuery,
    corpus: list[EncodedDocument],
    tau: float,
    top_k: int,
    with_cls: bool = False,
) -> list[tuple[str, float]]:
    """Reference ranking for the index search path at pruning threshold tau.

    Document routes with weight <= tau are dropped (fp32 comparison, matching
    the index's stored sidecar) and, without a sequence-level store, only
    documents sharing at least one routed key with the query are ranked.
    """
    return oracle_rank_batch([query], corpus, tau, top_k, with_cls)[0]


def oracle_rank_batch(
    queries: list[EncodedQuery],
    corpus: list[EncodedDocument],
    tau: float,
    top_k: int,
    with_cls: bool = False,
) -> list[list[tuple[str, float]]]:
    """`oracle_rank` for many queries, grouping each document's routes once."""
    if top_k < 1:
        raise ContractError("top_k must be >= 1")
    tau32 = np.float32(tau)
    prepared = []
    for doc in corpus:
        rows: list[np.ndarray] = []
        row_index: dict[int, list[int]] = {}
        for t in doc.tokens:
            for k, w in t.routes:
                if np.float32(w) > tau32:
                    row_index.setdefault(k, []).append(len(rows))
                    rows.append(w * t.vector)
        prepared.append((doc, np.asarray(rows) if rows else None, row_index))
    results = []
    for query in queries:
        qroutes = [
            (key, wq * tok.vector) for tok in query.tokens for key, wq in tok.routes
        ]
        U = np.stack([u for _, u in qroutes]).T if qroutes else None
        scored = []
        for doc, mat, row_index in prepared:
            if not with_cls and not any(k in row_index for k, _ in qroutes):
                continue
            score = 0.0
            if mat is not None and U is not None:
                dots = mat @ U
                for j, (key, _) in enumerate(qroutes):
                    hit = row_index.get(key)
                    if hit is not None:
                        score += float(dots[hit, j].max())
            if with_cls:
                score += score_single_vector(query.cls_vector, doc.cls_vector)
            scored.append((doc.doc_id, score))
        scored.sort(key=lambda pair: (-pair[1], pair[0]))
        results.append(scored[:top_k])
    return results
