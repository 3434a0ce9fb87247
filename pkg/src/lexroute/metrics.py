"""Ranking metrics: MRR@k, nDCG@k, Recall@k.

Runs map query_id -> ranked list of (doc_id, score); qrels map
query_id -> {doc_id: grade}. MRR and Recall use binary relevance
(grade >= threshold, default 1); nDCG uses graded gains 2^grade - 1 with a
log2(rank + 1) discount. Queries present in the run but absent from the
qrels (or with no relevant documents) are skipped.
"""

from __future__ import annotations

import logging
import math

logger = logging.getLogger(__name__)

Run = dict[str, list[tuple[str, float]]]
Qrels = dict[str, dict[str, int]]


def _iter_judged(run: Run, qrels: Qrels):
    for qid, ranking in run.items():
        if qid not in qrels:
            logger.warning("query %s missing from qrels; skipped", qid)
            continue
        yield qid, ranking, qrels[qid]


def metric_mrr(run: Run, qrels: Qrels, cutoff: int = 10, threshold: int = 1) -> float:
    if cutoff < 1:
        raise ValueError("cutoff must be >= 1")
    scores = []
    for _, ranking, judged in _iter_judged(run, qrels):
        relevant = {d for d, g in judged.items() if g >= threshold}
        if not relevant:
            continue
        rr = 0.0
        for rank, (doc_id, _) in enumerate(ranking[:cutoff], start=1):
            if doc_id in relevant:
                rr = 1.0 / rank
                break
        scores.append(rr)
    return sum(scores) / len(scores) if scores else 0.0


def metric_ndcg(run: Run, qrels: Qrels, cutoff: int = 10) -> float:
    if cutoff < 1:
        raise ValueError("cutoff must be >= 1")
    scores = []
    for _, ranking, judged in _iter_judged(run, qrels):
        ideal = sorted((g for g in judged.values() if g > 0), reverse=True)[:cutoff]
        idcg = sum((2 ** g - 1) / math.log2(r + 1) for r, g in enumerate(ideal, start=1))
        if idcg == 0.0:
            continue
        dcg = sum(
            (2 ** judged.get(doc_id, 0) - 1) / math.log2(rank + 1)
            for rank, (doc_id, _) in enumerate(ranking[:cutoff], start=1)
        )
        scores.append(dcg / idcg)
    return sum(scores) / len(scores) if scores else 0.0


def metric_recall(run: Run, qrels: Qrels, cutoff: int = 1000, threshold: int = 1) -> float:
    if cutoff < 1:
        raise ValueError("cutoff must be >= 1")
    scores = []
    for _, ranking, judged in _iter_judged(run, qrels):
        relevant = {d for d, g in judged.items() if g >= threshold}
        if not relevant:
            continue
        hit = sum(1 for doc_id, _ in ranking[:cutoff] if doc_id in relevant)
        scores.append(hit / len(relevant))
    return sum(scores) / len(scores) if scores else 0.0
