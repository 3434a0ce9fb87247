"""Lexical router: per-token key scores, top-K selection, sequence pooling.

The router maps a token embedding v to a non-negative score per lexical key
via log(1 + relu(W^T v + b)); tokens are then routed to their top-scoring
keys. A rectified pre-activation filters irrelevant keys and the log
saturation keeps large weights in check.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .types import ContractError, EncodedDocument, EncodedQuery, FileFormatError, RoutedToken, TokenEmbedding

_LXRT_MAGIC = b"LXRT"
_LXRT_VERSION = 1


@dataclass
class RouterParams:
    """Linear routing head: weight_matrix (c x |V|) and bias (|V|)."""

    weight_matrix: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weight_matrix = np.asarray(self.weight_matrix, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight_matrix.ndim != 2:
            raise ContractError("weight_matrix must be 2-D (c x |V|)")
        if self.bias.shape != (self.weight_matrix.shape[1],):
            raise ContractError("bias length must equal key count")
        if self.key_count < 1 or self.embedding_dim < 1:
            raise ContractError("key_count and embedding_dim must be >= 1")
        if not (np.all(np.isfinite(self.weight_matrix)) and np.all(np.isfinite(self.bias))):
            raise ContractError("router parameters must be finite")

    @property
    def embedding_dim(self) -> int:
        return self.weight_matrix.shape[0]

    @property
    def key_count(self) -> int:
        return self.weight_matrix.shape[1]


def router_logits(v: np.ndarray, params: RouterParams) -> np.ndarray:
    """Pre-activation scores W^T v + b."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (params.embedding_dim,):
        raise ContractError(
            f"vector dim {v.shape} does not match router dim ({params.embedding_dim},)"
        )
    return params.weight_matrix.T @ v + params.bias


def router_representation(v: np.ndarray, params: RouterParams) -> np.ndarray:
    """Non-negative key scores log(1 + relu(W^T v + b)), one per key."""
    return np.log1p(np.maximum(router_logits(v, params), 0.0))


def select_top_keys(rep: np.ndarray, max_keys: int) -> list[tuple[int, float]]:
    """Keep the up-to-``max_keys`` highest-scoring keys with positive weight.

    Sorted by descending weight, ties by ascending key_id. Zero-weight keys
    are never returned: a token whose scores are all zero is deactivated.
    """
    if max_keys < 1:
        raise ContractError("max_keys must be >= 1")
    rep = np.asarray(rep, dtype=np.float64)
    positive = np.flatnonzero(rep > 0.0)
    order = sorted(positive, key=lambda k: (-rep[k], k))
    return [(int(k), float(rep[k])) for k in order[:max_keys]]


def pool_router_representations(reps) -> np.ndarray:
    """Elementwise max over a non-empty sequence of router representations."""
    reps = [np.asarray(r, dtype=np.float64) for r in reps]
    if not reps:
        raise ContractError("cannot pool an empty sequence")
    if len({r.shape for r in reps}) != 1:
        raise ContractError("representations must share a length")
    return np.max(np.stack(reps), axis=0)


def route_tokens(
    tokens: list[TokenEmbedding], params: RouterParams, max_keys: int
) -> list[RoutedToken]:
    """Route each token to its top-``max_keys`` keys under ``params``."""
    if max_keys < 1:
        raise ContractError("max_keys must be >= 1")
    if not tokens:
        return []
    V = np.stack([np.asarray(t.vector, dtype=np.float64) for t in tokens])
    if V.shape[1] != params.embedding_dim:
        raise ContractError(
            f"vector dim ({V.shape[1]},) does not match router dim "
            f"({params.embedding_dim},)"
        )
    reps = np.log1p(np.maximum(V @ params.weight_matrix + params.bias, 0.0))
    # stable argsort on -rep keeps equal weights in ascending key order
    orders = np.argsort(-reps, axis=1, kind="stable")
    routed = []
    for tok, rep, order in zip(tokens, reps, orders):
        routes = []
        for k in order[:max_keys]:
            if rep[k] <= 0.0:
                break
            routes.append((int(k), float(rep[k])))
        routed.append(RoutedToken(tok.vector, tok.token_id, routes))
    return routed


def route_static(tokens: list[TokenEmbedding]) -> list[RoutedToken]:
    """Exact-match routing: each token goes to its own token_id, weight 1."""
    return [RoutedToken(t.vector, t.token_id, [(t.token_id, 1.0)]) for t in tokens]


def route_universal(tokens: list[TokenEmbedding], key: int = 0) -> list[RoutedToken]:
    """All-to-all routing: every token shares one key with unit weight."""
    return [RoutedToken(t.vector, t.token_id, [(key, 1.0)]) for t in tokens]


def encode_query(
    query_id: str,
    tokens: list[TokenEmbedding],
    params: RouterParams,
    max_keys: int = 1,
    cls_vector: np.ndarray | None = None,
) -> EncodedQuery:
    return EncodedQuery(query_id, route_tokens(tokens, params, max_keys), cls_vector)


def encode_document(
    doc_id: str,
    tokens: list[TokenEmbedding],
    params: RouterParams,
    max_keys: int = 5,
    cls_vector: np.ndarray | None = None,
) -> EncodedDocument:
    return EncodedDocument(doc_id, route_tokens(tokens, params, max_keys), cls_vector)


def random_router_params(embedding_dim: int, key_count: int, seed: int = 0, scale: float = 1.0) -> RouterParams:
    """Seeded Gaussian router parameters for synthetic experiments."""
    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, scale / np.sqrt(embedding_dim), size=(embedding_dim, key_count))
    b = np.zeros(key_count)
    return RouterParams(w, b)


def save_router_params(params: RouterParams, path: str) -> None:
    """Write params in the binary LXRT format (little-endian fp32)."""
    payload = bytearray()
    payload += _LXRT_MAGIC
    payload += struct.pack("<III", _LXRT_VERSION, params.embedding_dim, params.key_count)
    payload += params.weight_matrix.astype("<f4").tobytes(order="C")
    payload += params.bias.astype("<f4").tobytes()
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(payload)
    os.replace(tmp, path)


def load_router_params(path: str) -> RouterParams:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 16 or data[:4] != _LXRT_MAGIC:
        raise FileFormatError(f"{path}: not a router parameter file")
    version, dim, keys = struct.unpack_from("<III", data, 4)
    if version != _LXRT_VERSION:
        raise FileFormatError(f"{path}: unsupported version {version}")
    need = 16 + 4 * dim * keys + 4 * keys
    if len(data) != need:
        raise FileFormatError(f"{path}: expected {need} bytes, got {len(data)}")
    w = np.frombuffer(data, dtype="<f4", count=dim * keys, offset=16).reshape(dim, keys)
    b = np.frombuffer(data, dtype="<f4", count=keys, offset=16 + 4 * dim * keys)
    return RouterParams(w.astype(np.float64), b.astype(np.float64))
