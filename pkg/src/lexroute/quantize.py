"""Product quantization of posting vectors.

Vectors of dimension c are split into c/m subvectors of dimension m; each
subspace gets its own k-means codebook (seeded k-means++ init, Lloyd
refinement). Retrieval with a quantized index reconstructs vectors from
their codes and scores with exact dot products, so the only error source is
the quantization itself. Routing-weight sidecars are never quantized, which
keeps post-hoc pruning exact.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass

import numpy as np

from .index import IndexMeta, InvertedIndex, PostingList
from .types import ContractError, FileFormatError

_CTPQ_MAGIC = b"CTPQ"


@dataclass
class PqCodebook:
    """Per-subspace centroid tables: (num_subspaces, k, m)."""

    centroids: np.ndarray

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=np.float32)
        if self.centroids.ndim != 3:
            raise ContractError("centroids must have shape (num_subspaces, k, m)")
        if not np.all(np.isfinite(self.centroids)):
            raise ContractError("centroids must be finite")

    @property
    def num_subspaces(self) -> int:
        return self.centroids.shape[0]

    @property
    def k(self) -> int:
        return self.centroids.shape[1]

    @property
    def subvector_dim(self) -> int:
        return self.centroids.shape[2]

    @property
    def dim(self) -> int:
        return self.num_subspaces * self.subvector_dim

    def bits_per_dim(self) -> float:
        """(num_subspaces * ceil(log2 k)) / c."""
        return self.num_subspaces * math.ceil(math.log2(self.k)) / self.dim

    def decode_batch(self, codes: np.ndarray) -> np.ndarray:
        codes = np.asarray(codes)
        if codes.ndim == 1:
            codes = codes[None, :]
        if codes.shape[1] != self.num_subspaces:
            raise ContractError("code width does not match num_subspaces")
        if codes.size and codes.max() >= self.k:
            raise ContractError("code out of range")
        parts = [self.centroids[s][codes[:, s]] for s in range(self.num_subspaces)]
        return np.concatenate(parts, axis=1)


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centers = np.empty((k, points.shape[1]), dtype=np.float64)
    centers[0] = points[rng.integers(n)]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[i:] = points[rng.integers(n, size=k - i)]
            break
        probs = d2 / total
        centers[i] = points[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, np.sum((points - centers[i]) ** 2, axis=1))
    return centers


def _lloyd(points: np.ndarray, centers: np.ndarray, iters: int):
    """Lloyd iterations; returns (centers, per-iteration MSE trace)."""
    trace = []
    for _ in range(iters):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assign = np.argmin(d2, axis=1)
        trace.append(float(d2[np.arange(len(points)), assign].mean()))
        for j in range(len(centers)):
            mask = assign == j
            if mask.any():
                centers[j] = points[mask].mean(axis=0)
    return centers, trace


def train_pq(
    vectors: np.ndarray, m: int, k: int, iters: int = 25, seed: int = 0
) -> tuple[PqCodebook, list[list[float]]]:
    """Train per-subspace codebooks; returns (codebook, per-subspace MSE traces).

    If a subspace has fewer distinct subvectors than k, its effective k drops
    to the distinct count and the table is padded by repeating centroids.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or len(vectors) == 0:
        raise ContractError("training sample must be a non-empty 2-D array")
    c = vectors.shape[1]
    if m < 1 or c % m != 0:
        raise ContractError(f"subvector dim {m} must divide vector dim {c}")
    if k < 1:
        raise ContractError("k must be >= 1")
    num_sub = c // m
    rng = np.random.default_rng(seed)
    tables = []
    traces = []
    for s in range(num_sub):
        pts = vectors[:, s * m:(s + 1) * m]
        distinct = np.unique(pts, axis=0)
        k_eff = min(k, len(distinct))
        centers = _kmeans_pp_init(pts, k_eff, rng)
        centers, trace = _lloyd(pts, centers, max(iters, 1))
        table = np.empty((k, m), dtype=np.float64)
        table[:k_eff] = centers
        table[k_eff:] = centers[0]
        tables.append(table)
        traces.append(trace)
    return PqCodebook(np.stack(tables)), traces


def pq_encode(v: np.ndarray, cb: PqCodebook) -> np.ndarray:
    """Nearest centroid per subspace (Euclidean), ties to the lowest index."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (cb.dim,):
        raise ContractError(f"vector dim {v.shape} does not match codebook dim {cb.dim}")
    m = cb.subvector_dim
    codes = np.empty(cb.num_subspaces, dtype=np.uint8 if cb.k <= 256 else np.uint32)
    for s in range(cb.num_subspaces):
        d2 = ((cb.centroids[s].astype(np.float64) - v[s * m:(s + 1) * m]) ** 2).sum(axis=1)
        codes[s] = int(np.argmin(d2))  # argmin takes the lowest index on ties
    return codes


def pq_decode(codes: np.ndarray, cb: PqCodebook) -> np.ndarray:
    """Concatenation of the selected centroids."""
    return cb.decode_batch(codes)[0].astype(np.float64)


def pq_encode_batch(vectors: np.ndarray, cb: PqCodebook) -> np.ndarray:
    vectors = np.asarray(vectors, dtype=np.float64)
    m = cb.subvector_dim
    cols = []
    for s in range(cb.num_subspaces):
        pts = vectors[:, s * m:(s + 1) * m]
        d2 = ((pts[:, None, :] - cb.centroids[s][None].astype(np.float64)) ** 2).sum(axis=2)
        cols.append(np.argmin(d2, axis=1))
    return np.stack(cols, axis=1).astype(np.uint8 if cb.k <= 256 else np.uint32)


def quantize_index(index: InvertedIndex, cb: PqCodebook) -> InvertedIndex:
    """Replace posting vectors by their PQ reconstruction, retaining codes."""
    if index.meta.quantized:
        raise ContractError("index is already quantized")
    if cb.dim != index.meta.c:
        raise ContractError("codebook dimension does not match index")
    postings = {}
    for key in sorted(index.postings):
        p = index.postings[key]
        codes = pq_encode_batch(p.vectors.astype(np.float64), cb)
        vectors = cb.decode_batch(codes).astype(np.float32)
        postings[key] = PostingList(p.doc_ids.copy(), p.weights.copy(), vectors,
                                    p.token_ordinals.copy(), codes)
    meta = IndexMeta(**{**index.meta.__dict__, "quantized": True})
    return InvertedIndex(postings, meta, list(index.doc_names), index.cls_store,
                         index.token_histogram, index.total_tokens, cb.num_subspaces)


def save_codebook(cb: PqCodebook, path: str) -> None:
    out = bytearray()
    out += _CTPQ_MAGIC
    out += struct.pack("<III", cb.subvector_dim, cb.k, cb.num_subspaces)
    out += cb.centroids.astype("<f4").tobytes(order="C")
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(bytes(out))
    os.replace(tmp, path)


def load_codebook(path: str) -> PqCodebook:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 16 or data[:4] != _CTPQ_MAGIC:
        raise FileFormatError(f"{path}: not a codebook file")
    m, k, num_sub = struct.unpack_from("<III", data, 4)
    need = 16 + 4 * m * k * num_sub
    if len(data) != need:
        raise FileFormatError(f"{path}: expected {need} bytes, got {len(data)}")
    cents = np.frombuffer(data, dtype="<f4", offset=16).reshape(num_sub, k, m)
    return PqCodebook(cents.copy())
