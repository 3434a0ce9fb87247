"""Training losses with analytic gradients, plus a toy gradient-descent trainer.

The composite objective is

    L = L_e + L_r + alpha * L_b + beta * L_s

where L_e is a contrastive loss over dynamic-routing similarity scores,
L_r a contrastive loss over max-pooled router representations, L_b the
load-balancing penalty sum_k f_k * p_k, and L_s an l1 penalty on the router
representation. Regularizers are applied to queries and documents alike.

Everything here runs in fp64. Gradients of max operations use the
subgradient at the argmax (lowest index on ties); f_k in the load-balancing
loss is treated as piecewise constant, so its gradient flows only through
p_k. The only learnable parameters are the linear router's weights and
bias; token vectors are inputs, but gradients with respect to them are
produced as well so the whole composite can be checked against finite
differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .router import RouterParams, select_top_keys
from .types import ContractError


@dataclass
class LossWeights:
    alpha: float = 1e-2  # load balancing
    beta: float = 1e-5   # l1 sparsity

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ContractError("loss weights must be non-negative")


@dataclass
class TrainingBatch:
    """One positive and a shared number of negatives per query."""

    queries: np.ndarray    # (B, Tq, c)
    positives: np.ndarray  # (B, Td, c)
    negatives: np.ndarray  # (B, n_neg, Td, c)

    def __post_init__(self):
        self.queries = np.asarray(self.queries, dtype=np.float64)
        self.positives = np.asarray(self.positives, dtype=np.float64)
        self.negatives = np.asarray(self.negatives, dtype=np.float64)
        if self.queries.ndim != 3 or self.positives.ndim != 3 or self.negatives.ndim != 4:
            raise ContractError("bad batch shapes")
        B, _, c = self.queries.shape
        if self.positives.shape[0] != B or self.negatives.shape[0] != B:
            raise ContractError("batch size mismatch")
        if self.positives.shape[2] != c or self.negatives.shape[3] != c:
            raise ContractError("embedding dim mismatch")


def _logsumexp(xs: np.ndarray) -> float:
    m = float(np.max(xs))
    return m + float(np.log(np.sum(np.exp(xs - m))))


def contrastive_loss(score_pos: float, scores_neg) -> float:
    """-log(exp(s+) / (exp(s+) + sum exp(s-))), computed stably."""
    xs = np.concatenate(([score_pos], np.asarray(scores_neg, dtype=np.float64)))
    return _logsumexp(xs) - float(score_pos)


def _contrastive_grads(score_pos: float, scores_neg) -> tuple[float, float, np.ndarray]:
    xs = np.concatenate(([score_pos], np.asarray(scores_neg, dtype=np.float64)))
    p = np.exp(xs - _logsumexp(xs))
    return _logsumexp(xs) - float(score_pos), float(p[0] - 1.0), p[1:]


def router_contrastive_loss(phi_q, phi_pos, phi_negs) -> float:
    """Contrastive loss over dot products of pooled router representations."""
    phi_q = np.asarray(phi_q, dtype=np.float64)
    phi_pos = np.asarray(phi_pos, dtype=np.float64)
    if phi_q.shape != phi_pos.shape:
        raise ContractError("pooled representation length mismatch")
    negs = []
    for phi_n in phi_negs:
        phi_n = np.asarray(phi_n, dtype=np.float64)
        if phi_n.shape != phi_q.shape:
            raise ContractError("pooled representation length mismatch")
        negs.append(float(phi_q @ phi_n))
    return contrastive_loss(float(phi_q @ phi_pos), negs)


def l1_loss(reps: np.ndarray) -> float:
    """(1/B) sum over batch, tokens, and keys of the router representation."""
    reps = np.asarray(reps, dtype=np.float64)
    if reps.ndim != 3:
        raise ContractError("reps must have shape (B, T, |V|)")
    if np.any(reps < 0):
        raise ContractError("router representations must be non-negative")
    return float(reps.sum() / reps.shape[0])


def load_balance_loss(logits: np.ndarray) -> float:
    """sum_k f_k * p_k over pre-activation router scores of shape (B, T, |V|)."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 3:
        raise ContractError("logits must have shape (B, T, |V|)")
    B, _, V = logits.shape
    p_tok = _softmax(logits)
    p = p_tok.sum(axis=(0, 1)) / B
    f = np.bincount(np.argmax(logits, axis=2).ravel(), minlength=V) / B
    return float(f @ p)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class _Seq:
    """Forward state and gradient accumulators for one token sequence."""

    def __init__(self, X: np.ndarray, params: RouterParams, max_keys: int):
        self.X = X
        self.Z = X @ params.weight_matrix + params.bias
        R = np.maximum(self.Z, 0.0)
        self.PHI = np.log1p(R)
        self.dphidz = (self.Z > 0.0) / (1.0 + R)
        self.routes = [select_top_keys(row, max_keys) for row in self.PHI]
        self.dPHI = np.zeros_like(self.PHI)
        self.dZ = np.zeros_like(self.Z)
        self.dX = np.zeros_like(X)

    def pooled(self):
        return self.PHI.max(axis=0), self.PHI.argmax(axis=0)

    def finalize(self, params: RouterParams, gW: np.ndarray, gb: np.ndarray):
        dZ = self.dPHI * self.dphidz + self.dZ
        gW += self.X.T @ dZ
        gb += dZ.sum(axis=0)
        self.dX += dZ @ params.weight_matrix.T


def _dynamic_score(qs: _Seq, ds: _Seq):
    """Dynamic-routing score and the argmax events needed for its backward pass."""
    by_key: dict[int, list[tuple[int, float]]] = {}
    for j, routes in enumerate(ds.routes):
        for key, wd in routes:
            by_key.setdefault(key, []).append((j, wd))
    score = 0.0
    events = []
    for i, routes in enumerate(qs.routes):
        for key, wq in routes:
            cands = by_key.get(key)
            if not cands:
                continue
            best = None
            for j, wd in cands:
                dot = float(qs.X[i] @ ds.X[j])
                val = wq * wd * dot
                if best is None or val > best[0]:
                    best = (val, j, wd, dot)
            score += best[0]
            events.append((i, key, wq, best[1], best[2], best[3]))
    return score, events


def _apply_dynamic_grad(u: float, qs: _Seq, ds: _Seq, events) -> None:
    for i, key, wq, j, wd, dot in events:
        qs.dPHI[i, key] += u * wd * dot
        ds.dPHI[j, key] += u * wq * dot
        qs.dX[i] += u * wq * wd * ds.X[j]
        ds.dX[j] += u * wq * wd * qs.X[i]


def _group_l1(seqs: list[_Seq], scale: float) -> float:
    """l1 over a group of sequences, normalized by group size; scale*grad applied."""
    B = len(seqs)
    loss = sum(float(s.PHI.sum()) for s in seqs) / B
    if scale != 0.0:
        for s in seqs:
            s.dPHI += scale / B
    return loss


def _group_load_balance(seqs: list[_Seq], scale: float) -> float:
    """Load-balance loss over a group; gradient flows through p only."""
    B = len(seqs)
    V = seqs[0].Z.shape[1]
    P = [_softmax(s.Z) for s in seqs]
    p = sum(Pm.sum(axis=0) for Pm in P) / B
    counts = np.zeros(V)
    for s in seqs:
        counts += np.bincount(np.argmax(s.Z, axis=1), minlength=V)
    f = counts / B
    if scale != 0.0:
        u = f / B
        for s, Pm in zip(seqs, P):
            s.dZ += scale * Pm * (u[None, :] - (Pm @ u)[:, None])
    return float(f @ p)


def total_loss(
    batch: TrainingBatch,
    params: RouterParams,
    weights: LossWeights,
    query_keys: int = 1,
    doc_keys: int = 5,
):
    """Composite loss, its four components, and analytic gradients.

    Returns (total, parts, grads) where parts has keys e/r/b/s and grads has
    entries for weight_matrix, bias, queries, positives, and negatives.
    """
    B, _, c = batch.queries.shape
    if params.embedding_dim != c:
        raise ContractError("router dimension does not match batch")
    n_neg = batch.negatives.shape[1]

    q_seqs = [_Seq(batch.queries[i], params, query_keys) for i in range(B)]
    pos_seqs = [_Seq(batch.positives[i], params, doc_keys) for i in range(B)]
    neg_seqs = [
        [_Seq(batch.negatives[i, n], params, doc_keys) for n in range(n_neg)]
        for i in range(B)
    ]

    loss_e = 0.0
    loss_r = 0.0
    for i in range(B):
        qs = q_seqs[i]
        s_pos, ev_pos = _dynamic_score(qs, pos_seqs[i])
        negs = [_dynamic_score(qs, ns) for ns in neg_seqs[i]]
        li, dpos, dnegs = _contrastive_grads(s_pos, [s for s, _ in negs])
        loss_e += li / B
        _apply_dynamic_grad(dpos / B, qs, pos_seqs[i], ev_pos)
        for (s_n, ev_n), ns, dn in zip(negs, neg_seqs[i], dnegs):
            _apply_dynamic_grad(dn / B, qs, ns, ev_n)

        phi_q, am_q = qs.pooled()
        phi_pos, am_pos = pos_seqs[i].pooled()
        pooled_negs = [ns.pooled() for ns in neg_seqs[i]]
        s_pos_r = float(phi_q @ phi_pos)
        s_negs_r = [float(phi_q @ pn[0]) for pn in pooled_negs]
        li, dpos, dnegs = _contrastive_grads(s_pos_r, s_negs_r)
        loss_r += li / B
        dphi_q = (dpos / B) * phi_pos
        np.add.at(pos_seqs[i].dPHI, (am_pos, np.arange(len(am_pos))), (dpos / B) * phi_q)
        for (phi_n, am_n), ns, dn in zip(pooled_negs, neg_seqs[i], dnegs):
            dphi_q += (dn / B) * phi_n
            np.add.at(ns.dPHI, (am_n, np.arange(len(am_n))), (dn / B) * phi_q)
        np.add.at(qs.dPHI, (am_q, np.arange(len(am_q))), dphi_q)

    doc_group = pos_seqs + [s for row in neg_seqs for s in row]
    loss_s = _group_l1(q_seqs, weights.beta) + _group_l1(doc_group, weights.beta)
    loss_b = (_group_load_balance(q_seqs, weights.alpha)
              + _group_load_balance(doc_group, weights.alpha))

    gW = np.zeros_like(params.weight_matrix)
    gb = np.zeros_like(params.bias)
    for s in q_seqs + doc_group:
        s.finalize(params, gW, gb)

    total = loss_e + loss_r + weights.alpha * loss_b + weights.beta * loss_s
    parts = {"e": loss_e, "r": loss_r, "b": loss_b, "s": loss_s}
    grads = {
        "weight_matrix": gW,
        "bias": gb,
        "queries": np.stack([s.dX for s in q_seqs]),
        "positives": np.stack([s.dX for s in pos_seqs]),
        "negatives": np.stack([np.stack([s.dX for s in row]) for row in neg_seqs]),
    }
    return total, parts, grads


def smoothness_margin(
    batch: TrainingBatch, params: RouterParams, query_keys: int = 1, doc_keys: int = 5
) -> float:
    """Distance of the batch from the nearest non-differentiable point.

    Finite-difference checks are only valid away from the relu kink and from
    ties in any argmax (top-key truncation, max pooling, dynamic-score max,
    load-balance dispatch). Returns the smallest of those margins.
    """
    margin = np.inf

    def seq_margin(X, max_keys):
        nonlocal margin
        s = _Seq(X, params, max_keys)
        margin = min(margin, float(np.abs(s.Z).min()))
        for row, z_row in zip(s.PHI, s.Z):
            zs = np.sort(z_row)[::-1]
            if len(zs) > 1:
                margin = min(margin, float(zs[0] - zs[1]))  # dispatch argmax gap
            vals = np.sort(row[row > 0])[::-1]
            if len(vals) > max_keys:
                margin = min(margin, float(vals[max_keys - 1] - vals[max_keys]))
        if s.PHI.shape[0] > 1:
            top2 = np.sort(s.PHI, axis=0)[::-1]
            pos = top2[0] > 0
            if pos.any():
                margin = min(margin, float((top2[0] - top2[1])[pos].min()))
        return s

    B = batch.queries.shape[0]
    n_neg = batch.negatives.shape[1]
    for i in range(B):
        qs = seq_margin(batch.queries[i], query_keys)
        for D in [batch.positives[i]] + [batch.negatives[i, n] for n in range(n_neg)]:
            ds = seq_margin(D, doc_keys)
            for ti, routes in enumerate(qs.routes):
                for key, wq in routes:
                    vals = sorted(
                        (wq * wd * float(qs.X[ti] @ ds.X[j])
                         for j, rts in enumerate(ds.routes) for kk, wd in rts if kk == key),
                        reverse=True,
                    )
                    if len(vals) > 1:
                        margin = min(margin, vals[0] - vals[1])
    return float(margin)


def gradient_check(
    batch: TrainingBatch,
    params: RouterParams,
    weights: LossWeights,
    query_keys: int = 1,
    doc_keys: int = 5,
    h: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients."""
    _, _, grads = total_loss(batch, params, weights, query_keys, doc_keys)

    def loss_at(q, pos, neg, W, b):
        b2 = TrainingBatch(q, pos, neg)
        p2 = RouterParams(W, b)
        return total_loss(b2, p2, weights, query_keys, doc_keys)[0]

    arrays = {
        "queries": batch.queries,
        "positives": batch.positives,
        "negatives": batch.negatives,
        "weight_matrix": params.weight_matrix,
        "bias": params.bias,
    }
    worst = 0.0
    for name, arr in arrays.items():
        flat = arr.ravel()
        g = grads[name].ravel()
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            up = loss_at(batch.queries, batch.positives, batch.negatives,
                         params.weight_matrix, params.bias)
            flat[idx] = orig - h
            down = loss_at(batch.queries, batch.positives, batch.negatives,
                           params.weight_matrix, params.bias)
            flat[idx] = orig
            num = (up - down) / (2 * h)
            # central differences carry round-off noise of order eps*|L|/h
            # (~1e-10 here), so magnitudes below 1e-4 are compared absolutely
            denom = max(abs(num), abs(g[idx]), 1e-4)
            worst = max(worst, abs(num - g[idx]) / denom)
    return worst


@dataclass
class ToyTrainConfig:
    """Synthetic corpus shape for the toy router trainer."""

    batch_size: int = 4
    query_len: int = 4
    doc_len: int = 12
    num_negatives: int = 2
    dim: int = 8
    vocab: int = 16
    query_keys: int = 1
    doc_keys: int = 5
    num_clusters: int = 8
    noise: float = 0.3

    def __post_init__(self):
        if min(self.batch_size, self.query_len, self.doc_len, self.dim,
               self.vocab, self.num_clusters) < 1 or self.num_negatives < 1:
            raise ContractError("toy trainer config sizes must be positive")


def make_toy_batch(config: ToyTrainConfig, rng: np.random.Generator) -> TrainingBatch:
    """Clustered Gaussian batch where positives share content with the query."""
    centers = rng.normal(0.0, 1.0, (config.num_clusters, config.dim))

    def sample(T):
        idx = rng.integers(config.num_clusters, size=T)
        return centers[idx] + config.noise * rng.normal(size=(T, config.dim))

    B = config.batch_size
    queries = np.stack([sample(config.query_len) for _ in range(B)])
    positives = []
    for i in range(B):
        extra = sample(config.doc_len - min(config.query_len, config.doc_len))
        overlap = queries[i][: config.doc_len]
        overlap = overlap + 0.1 * rng.normal(size=overlap.shape)
        positives.append(np.concatenate([overlap, extra])[: config.doc_len])
    positives = np.stack(positives)
    negatives = np.stack([
        np.stack([sample(config.doc_len) for _ in range(config.num_negatives)])
        for _ in range(B)
    ])
    return TrainingBatch(queries, positives, negatives)


def _routing_summary(batch: TrainingBatch, params: RouterParams, doc_keys: int):
    """Posting balance ratio and deactivated-token count over batch documents."""
    counts = np.zeros(params.key_count)
    deactivated = 0
    docs = np.concatenate(
        [batch.positives.reshape(-1, batch.positives.shape[2]),
         batch.negatives.reshape(-1, batch.negatives.shape[3])]
    )
    Z = docs @ params.weight_matrix + params.bias
    PHI = np.log1p(np.maximum(Z, 0.0))
    for row in PHI:
        routes = select_top_keys(row, doc_keys)
        if not routes:
            deactivated += 1
        for key, _ in routes:
            counts[key] += 1
    total = counts.sum()
    ratio = float(counts.max() / (total / params.key_count)) if total > 0 else 0.0
    return ratio, deactivated, int(len(docs))


def toy_train(
    config: ToyTrainConfig,
    steps: int,
    learning_rate: float,
    weights: LossWeights,
    seed: int = 0,
):
    """Plain gradient descent on the composite loss over a fixed synthetic batch.

    Token vectors stay frozen; only the router's weights and bias move.
    Returns (params, trace) where the trace has one record per step plus a
    final record evaluated at the trained parameters.
    """
    if steps < 0:
        raise ContractError("steps must be >= 0")
    rng = np.random.default_rng(seed)
    batch = make_toy_batch(config, rng)
    W = rng.normal(0.0, 1.0 / np.sqrt(config.dim), (config.dim, config.vocab))
    b = np.zeros(config.vocab)
    params = RouterParams(W, b)
    trace = []

    def record(step, total, parts):
        ratio, deactivated, n_tokens = _routing_summary(batch, params, config.doc_keys)
        trace.append({
            "step": step,
            "total": total,
            "loss_e": parts["e"], "loss_r": parts["r"],
            "loss_b": parts["b"], "loss_s": parts["s"],
            "balance_ratio": ratio,
            "deactivated_tokens": deactivated,
            "doc_tokens": n_tokens,
        })

    for step in range(steps):
        total, parts, grads = total_loss(batch, params, weights,
                                         config.query_keys, config.doc_keys)
        if not np.isfinite(total):
            raise ContractError(f"training diverged at step {step}")
        record(step, total, parts)
        params = RouterParams(
            params.weight_matrix - learning_rate * grads["weight_matrix"],
            params.bias - learning_rate * grads["bias"],
        )
    total, parts, _ = total_loss(batch, params, weights,
                                 config.query_keys, config.doc_keys)
    if not np.isfinite(total):
        raise ContractError(f"training diverged at step {steps}")
    record(steps, total, parts)
    return params, trace
