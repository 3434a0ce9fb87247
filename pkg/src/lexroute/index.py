"""Inverted index of routed token vectors keyed by lexical key.

Each key owns a posting list of pre-scaled vectors (routing weight times
token vector), so scoring against a posting entry is a plain dot product.
The original routing weight is kept as a sidecar per entry so the index can
be re-pruned at a higher threshold without re-encoding the corpus.

Sequence-level (CLS-role) vectors conceptually live under one reserved
semantic key through which every document participates; they are stored as
a dense per-document array rather than a posting list.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .types import ContractError, EncodedDocument, FileFormatError

_CTDL_MAGIC = b"CTDL"
_CTDL_VERSION = 1

_FLAG_CLS = 1
_FLAG_QUANTIZED = 2
_FLAG_TOKEN_SIDECAR = 4


@dataclass
class PostingList:
    """Columnar posting storage for one key, ascending by doc_id."""

    doc_ids: np.ndarray       # uint32
    weights: np.ndarray       # float32, original routing weights
    vectors: np.ndarray       # float32 (n, c), pre-scaled w * v
    token_ordinals: np.ndarray  # uint32, token position within the document
    codes: np.ndarray | None = None  # uint8 (n, num_subspaces) when quantized

    def __len__(self) -> int:
        return len(self.doc_ids)


@dataclass
class IndexMeta:
    c: int
    c_cls: int
    vocab_size: int
    tau: float
    doc_count: int
    scheme_tag: str = "dynamic"
    quantized: bool = False


@dataclass
class InvertedIndex:
    postings: dict[int, PostingList]
    meta: IndexMeta
    doc_names: list[str]
    cls_store: np.ndarray | None = None  # float32 (doc_count, c_cls)
    token_histogram: np.ndarray | None = None  # counts of tokens by #active routes
    total_tokens: int = 0
    num_subspaces: int = 0  # code width when quantized

    def total_entries(self) -> int:
        return sum(len(p) for p in self.postings.values())


@dataclass
class IndexStats:
    per_key_counts: np.ndarray  # length vocab_size + 1; last slot is the semantic key
    normalized_sizes: np.ndarray
    activated_keys_histogram: np.ndarray
    dot_product_upper_bound: int  # largest single posting list
    total_entries: int


def build_index(
    docs: list[EncodedDocument],
    tau: float,
    with_cls: bool = False,
    vocab_size: int | None = None,
    scheme_tag: str = "dynamic",
) -> InvertedIndex:
    """Build the inverted index, keeping routes with weight strictly above tau."""
    if tau < 0:
        raise ContractError("tau must be >= 0")
    tau32 = np.float32(tau)
    names: list[str] = []
    seen: set[str] = set()
    c = None
    c_cls = 0
    max_key = -1
    raw: dict[int, list[tuple[int, float, np.ndarray, int]]] = {}
    hist: dict[int, int] = {}
    total_tokens = 0
    cls_rows: list[np.ndarray] = []
    for internal, doc in enumerate(docs):
        if doc.doc_id in seen:
            raise ContractError(f"duplicate doc_id {doc.doc_id!r}")
        seen.add(doc.doc_id)
        names.append(doc.doc_id)
        if with_cls:
            if doc.cls_vector is None:
                raise ContractError(f"doc {doc.doc_id!r} lacks a sequence-level vector")
            if c_cls and doc.cls_vector.shape != (c_cls,):
                raise ContractError("sequence-level vector dimension mismatch")
            c_cls = len(doc.cls_vector)
            cls_rows.append(doc.cls_vector.astype(np.float32))
        for ordinal, tok in enumerate(doc.tokens):
            if c is None:
                c = len(tok.vector)
            elif len(tok.vector) != c:
                raise ContractError("token vector dimension mismatch")
            total_tokens += 1
            kept = 0
            for key, w in tok.routes:
                max_key = max(max_key, key)
                # compare on the fp32 representation the sidecar stores, so a
                # fresh build and a post-hoc prune agree bit-for-bit
                if np.float32(w) > tau32:
                    kept += 1
                    scaled = (w * tok.vector).astype(np.float32)
                    raw.setdefault(key, []).append((internal, float(w), scaled, ordinal))
            hist[kept] = hist.get(kept, 0) + 1
    if c is None:
        c = 0
    if vocab_size is None:
        vocab_size = max_key + 1
    elif max_key >= vocab_size:
        raise ContractError(f"route key {max_key} out of range for |V|={vocab_size}")

    postings: dict[int, PostingList] = {}
    for key in sorted(raw):
        entries = raw[key]  # already in ascending internal doc order
        postings[key] = PostingList(
            doc_ids=np.array([e[0] for e in entries], dtype=np.uint32),
            weights=np.array([e[1] for e in entries], dtype=np.float32),
            vectors=np.stack([e[2] for e in entries]).astype(np.float32),
            token_ordinals=np.array([e[3] for e in entries], dtype=np.uint32),
        )
    hist_len = max(hist) + 1 if hist else 1
    histogram = np.zeros(hist_len, dtype=np.int64)
    for k, n in hist.items():
        histogram[k] = n
    meta = IndexMeta(c=c, c_cls=c_cls, vocab_size=vocab_size, tau=float(tau),
                     doc_count=len(docs), scheme_tag=scheme_tag)
    cls_store = np.stack(cls_rows).astype(np.float32) if with_cls and cls_rows else (
        np.zeros((0, c_cls), dtype=np.float32) if with_cls else None
    )
    return InvertedIndex(postings, meta, names, cls_store, histogram, total_tokens)


def prune_index(index: InvertedIndex, tau: float) -> InvertedIndex:
    """Drop entries with weight <= tau; identical to a fresh build at tau."""
    if tau < index.meta.tau:
        raise ContractError(f"new tau {tau} must be >= current tau {index.meta.tau}")
    postings: dict[int, PostingList] = {}
    survivors: dict[tuple[int, int], int] = {}
    for key in sorted(index.postings):
        p = index.postings[key]
        mask = p.weights > np.float32(tau)
        if not mask.any():
            continue
        postings[key] = PostingList(
            doc_ids=p.doc_ids[mask].copy(),
            weights=p.weights[mask].copy(),
            vectors=p.vectors[mask].copy(),
            token_ordinals=p.token_ordinals[mask].copy(),
            codes=p.codes[mask].copy() if p.codes is not None else None,
        )
        for d, o in zip(p.doc_ids[mask], p.token_ordinals[mask]):
            tok = (int(d), int(o))
            survivors[tok] = survivors.get(tok, 0) + 1
    histogram = None
    if index.token_histogram is not None:
        hist_len = max(survivors.values(), default=0) + 1
        histogram = np.zeros(max(hist_len, 1), dtype=np.int64)
        for n in survivors.values():
            histogram[n] += 1
        histogram[0] = index.total_tokens - len(survivors)
    meta = IndexMeta(**{**index.meta.__dict__, "tau": float(tau)})
    return InvertedIndex(postings, meta, list(index.doc_names), index.cls_store,
                         histogram, index.total_tokens, index.num_subspaces)


def index_stats(index: InvertedIndex) -> IndexStats:
    """Per-key size distribution and activation histogram."""
    counts = np.zeros(index.meta.vocab_size + 1, dtype=np.int64)
    for key, p in index.postings.items():
        counts[key] = len(p)
    if index.cls_store is not None:
        counts[-1] = index.meta.doc_count
    total = int(counts.sum())
    normalized = counts / total if total > 0 else counts.astype(np.float64)
    histogram = (index.token_histogram if index.token_histogram is not None
                 else np.zeros(1, dtype=np.int64))
    token_entries = index.total_entries()
    upper = max((len(p) for p in index.postings.values()), default=0)
    return IndexStats(counts, normalized, histogram, upper, token_entries)


def index_equal(a: InvertedIndex, b: InvertedIndex) -> bool:
    """Structural equality, bitwise on all array payloads."""
    ma, mb = a.meta, b.meta
    if (ma.c, ma.c_cls, ma.vocab_size, ma.doc_count, ma.quantized) != (
            mb.c, mb.c_cls, mb.vocab_size, mb.doc_count, mb.quantized):
        return False
    if np.float32(ma.tau) != np.float32(mb.tau) or a.doc_names != b.doc_names:
        return False
    if sorted(a.postings) != sorted(b.postings):
        return False
    for key, pa in a.postings.items():
        pb = b.postings[key]
        if not (np.array_equal(pa.doc_ids, pb.doc_ids)
                and pa.weights.tobytes() == pb.weights.tobytes()
                and pa.vectors.tobytes() == pb.vectors.tobytes()
                and np.array_equal(pa.token_ordinals, pb.token_ordinals)):
            return False
        if (pa.codes is None) != (pb.codes is None):
            return False
        if pa.codes is not None and pa.codes.tobytes() != pb.codes.tobytes():
            return False
    if (a.cls_store is None) != (b.cls_store is None):
        return False
    if a.cls_store is not None and a.cls_store.tobytes() != b.cls_store.tobytes():
        return False
    if a.total_tokens != b.total_tokens:
        return False
    ha = a.token_histogram
    hb = b.token_histogram
    if (ha is None) != (hb is None):
        return False
    if ha is not None and not np.array_equal(np.trim_zeros(ha, "b"), np.trim_zeros(hb, "b")):
        return False
    return True


def save_index(index: InvertedIndex, path: str) -> None:
    """Serialize in the little-endian CTDL format (vectors in fp32)."""
    m = index.meta
    flags = 0
    if index.cls_store is not None:
        flags |= _FLAG_CLS
    if m.quantized:
        flags |= _FLAG_QUANTIZED
    if index.token_histogram is not None:
        flags |= _FLAG_TOKEN_SIDECAR
    out = bytearray()
    out += _CTDL_MAGIC
    out += struct.pack("<IIIIfII", _CTDL_VERSION, m.c, m.c_cls, m.vocab_size,
                       m.tau, m.doc_count, flags)
    if m.quantized:
        out += struct.pack("<I", index.num_subspaces)
    keys = sorted(index.postings)
    out += struct.pack("<I", len(keys))
    for key in keys:
        p = index.postings[key]
        out += struct.pack("<II", key, len(p))
        out += p.doc_ids.astype("<u4").tobytes()
        out += p.weights.astype("<f4").tobytes()
        if m.quantized:
            out += p.codes.astype(np.uint8).tobytes(order="C")
        else:
            out += p.vectors.astype("<f4").tobytes(order="C")
    if flags & _FLAG_TOKEN_SIDECAR:
        out += struct.pack("<QI", index.total_tokens, len(index.token_histogram))
        out += index.token_histogram.astype("<i8").tobytes()
        for key in keys:
            out += index.postings[key].token_ordinals.astype("<u4").tobytes()
    if flags & _FLAG_CLS:
        out += index.cls_store.astype("<f4").tobytes(order="C")
    for name in index.doc_names:
        raw = name.encode("utf-8")
        out += struct.pack("<I", len(raw))
        out += raw
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(bytes(out))
    os.replace(tmp, path)


class _Cursor:
    """Bounds-checked reader so truncated files fail with FileFormatError."""

    def __init__(self, data: bytes, label: str):
        self.data = data
        self.pos = 0
        self.label = label

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise FileFormatError(f"{self.label}: truncated file")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype: str, count: int, shape=None) -> np.ndarray:
        if count < 0 or count > 1 << 31:
            raise FileFormatError(f"{self.label}: implausible element count {count}")
        item = np.dtype(dtype).itemsize
        arr = np.frombuffer(self.take(item * count), dtype=dtype).copy()
        return arr.reshape(shape) if shape is not None else arr


def load_index(path: str, codebook=None) -> InvertedIndex:
    """Load a CTDL index. Quantized indexes need their codebook to rebuild vectors."""
    with open(path, "rb") as f:
        data = f.read()
    cur = _Cursor(data, path)
    if cur.take(4) != _CTDL_MAGIC:
        raise FileFormatError(f"{path}: bad magic, not an index file")
    version, c, c_cls, vocab, tau, doc_count, flags = cur.unpack("<IIIIfII")
    if version != _CTDL_VERSION:
        raise FileFormatError(f"{path}: unsupported version {version}")
    quantized = bool(flags & _FLAG_QUANTIZED)
    num_subspaces = 0
    if quantized:
        (num_subspaces,) = cur.unpack("<I")
        if codebook is None:
            raise FileFormatError(f"{path}: quantized index requires a codebook")
    (num_keys,) = cur.unpack("<I")
    postings: dict[int, PostingList] = {}
    for _ in range(num_keys):
        key, count = cur.unpack("<II")
        if key >= vocab + 1 or key in postings:
            raise FileFormatError(f"{path}: invalid key block {key}")
        doc_ids = cur.array("<u4", count)
        if count and doc_ids.max() >= doc_count:
            raise FileFormatError(f"{path}: doc id out of range")
        weights = cur.array("<f4", count)
        codes = None
        if quantized:
            codes = cur.array("u1", count * num_subspaces, (count, num_subspaces))
            vectors = codebook.decode_batch(codes).astype(np.float32)
            vectors = vectors.reshape(count, c)
        else:
            vectors = cur.array("<f4", count * c, (count, c))
        postings[key] = PostingList(doc_ids, weights, vectors,
                                    np.zeros(count, dtype=np.uint32), codes)
    histogram = None
    total_tokens = 0
    if flags & _FLAG_TOKEN_SIDECAR:
        total_tokens, hist_len = cur.unpack("<QI")
        histogram = cur.array("<i8", hist_len)
        for key in sorted(postings):
            p = postings[key]
            p.token_ordinals = cur.array("<u4", len(p))
    cls_store = None
    if flags & _FLAG_CLS:
        cls_store = cur.array("<f4", doc_count * c_cls, (doc_count, c_cls))
    names = []
    for _ in range(doc_count):
        (n,) = cur.unpack("<I")
        try:
            names.append(cur.take(n).decode("utf-8"))
        except UnicodeDecodeError as e:
            raise FileFormatError(f"{path}: corrupt doc-id table") from e
    if cur.pos != len(data):
        raise FileFormatError(f"{path}: {len(data) - cur.pos} trailing bytes")
    meta = IndexMeta(c, c_cls, vocab, float(np.float32(tau)), doc_count,
                     quantized=quantized)
    return InvertedIndex(postings, meta, names, cls_store, histogram,
                         total_tokens, num_subspaces)
