"""File formats: embedding JSONL, binary embeddings (CTEM), run files, qrels.

The JSONL embedding format carries one record per document or query:

    {"id": str, "cls": [f32...]?, "tokens": [{"tid": int, "vec": [f32...],
                                              "routes": [[key, weight], ...]?}]}

The binary CTEM twin holds the same content for bulk data. Run files are
plain text `query_id doc_id rank score`; qrels are `query_id doc_id grade`.
All writers are atomic (temp file + rename).
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .types import EncodedDocument, EncodedQuery, FileFormatError, RoutedToken, TokenEmbedding

_CTEM_MAGIC = b"CTEM"
_CTEM_VERSION = 1


def atomic_write_text(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        f.write(text)
    os.replace(tmp, path)


def to_token_embeddings(doc: EncodedDocument | EncodedQuery) -> list[TokenEmbedding]:
    return [TokenEmbedding(t.vector, t.token_id, i) for i, t in enumerate(doc.tokens)]


def _record_to_doc(rec: dict, path: str) -> EncodedDocument:
    try:
        tokens = [
            RoutedToken(
                np.asarray(t["vec"], dtype=np.float64),
                int(t["tid"]),
                [(int(k), float(w)) for k, w in t.get("routes", [])],
            )
            for t in rec["tokens"]
        ]
        cls = rec.get("cls")
        return EncodedDocument(
            str(rec["id"]), tokens,
            np.asarray(cls, dtype=np.float64) if cls is not None else None,
        )
    except (KeyError, TypeError, ValueError) as e:
        raise FileFormatError(f"{path}: malformed embedding record: {e}") from e


def _doc_to_record(doc: EncodedDocument | EncodedQuery) -> dict:
    doc_id = doc.doc_id if isinstance(doc, EncodedDocument) else doc.query_id
    rec: dict = {"id": doc_id, "tokens": []}
    if doc.cls_vector is not None:
        rec["cls"] = [float(x) for x in doc.cls_vector]
    for t in doc.tokens:
        trec: dict = {"tid": int(t.token_id), "vec": [float(x) for x in t.vector]}
        if t.routes:
            trec["routes"] = [[int(k), float(w)] for k, w in t.routes]
        rec["tokens"].append(trec)
    return rec


def write_embeddings_jsonl(docs, path: str) -> None:
    lines = [json.dumps(_doc_to_record(d), separators=(",", ":")) for d in docs]
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def read_embeddings_jsonl(path: str) -> list[EncodedDocument]:
    docs = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise FileFormatError(f"{path}:{lineno}: invalid JSON: {e}") from e
            docs.append(_record_to_doc(rec, f"{path}:{lineno}"))
    return docs


def write_embeddings_binary(docs, path: str) -> None:
    docs = list(docs)
    c = len(docs[0].tokens[0].vector) if docs and docs[0].tokens else 0
    out = bytearray()
    out += _CTEM_MAGIC
    out += struct.pack("<III", _CTEM_VERSION, c, len(docs))
    for doc in docs:
        doc_id = doc.doc_id if isinstance(doc, EncodedDocument) else doc.query_id
        raw = doc_id.encode("utf-8")
        out += struct.pack("<I", len(raw))
        out += raw
        if doc.cls_vector is not None:
            out += struct.pack("<I", len(doc.cls_vector))
            out += np.asarray(doc.cls_vector, dtype="<f4").tobytes()
        else:
            out += struct.pack("<I", 0)
        out += struct.pack("<I", len(doc.tokens))
        for t in doc.tokens:
            if len(t.vector) != c:
                raise FileFormatError("binary format requires a uniform token dimension")
            out += struct.pack("<I", t.token_id)
            out += np.asarray(t.vector, dtype="<f4").tobytes()
            out += struct.pack("<I", len(t.routes))
            for k, w in t.routes:
                out += struct.pack("<If", k, w)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(bytes(out))
    os.replace(tmp, path)


def read_embeddings_binary(path: str) -> list[EncodedDocument]:
    with open(path, "rb") as f:
        data = f.read()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise FileFormatError(f"{path}: truncated file")
        out = data[pos:pos + n]
        pos += n
        return out

    if take(4) != _CTEM_MAGIC:
        raise FileFormatError(f"{path}: not a binary embedding file")
    version, c, count = struct.unpack("<III", take(12))
    if version != _CTEM_VERSION:
        raise FileFormatError(f"{path}: unsupported version {version}")
    docs = []
    for _ in range(count):
        (n,) = struct.unpack("<I", take(4))
        doc_id = take(n).decode("utf-8")
        (c_cls,) = struct.unpack("<I", take(4))
        cls = np.frombuffer(take(4 * c_cls), dtype="<f4").astype(np.float64) if c_cls else None
        (ntok,) = struct.unpack("<I", take(4))
        tokens = []
        for _ in range(ntok):
            (tid,) = struct.unpack("<I", take(4))
            vec = np.frombuffer(take(4 * c), dtype="<f4").astype(np.float64)
            (nroutes,) = struct.unpack("<I", take(4))
            routes = []
            for _ in range(nroutes):
                k, w = struct.unpack("<If", take(8))
                routes.append((k, float(w)))
            tokens.append(RoutedToken(vec, tid, routes))
        docs.append(EncodedDocument(doc_id, tokens, cls))
    if pos != len(data):
        raise FileFormatError(f"{path}: {len(data) - pos} trailing bytes")
    return docs


def read_embeddings(path: str) -> list[EncodedDocument]:
    """Dispatch on magic bytes: binary CTEM or JSONL."""
    with open(path, "rb") as f:
        head = f.read(4)
    return read_embeddings_binary(path) if head == _CTEM_MAGIC else read_embeddings_jsonl(path)


def as_query(doc: EncodedDocument) -> EncodedQuery:
    return EncodedQuery(doc.doc_id, doc.tokens, doc.cls_vector)


def write_run(run: dict[str, list[tuple[str, float]]], path: str) -> None:
    lines = []
    for qid in sorted(run):
        for rank, (doc_id, score) in enumerate(run[qid], start=1):
            lines.append(f"{qid} {doc_id} {rank} {score:.6f}")
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def read_run(path: str) -> dict[str, list[tuple[str, float]]]:
    run: dict[str, list[tuple[str, float]]] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise FileFormatError(f"{path}:{lineno}: expected 'qid doc rank score'")
            qid, doc_id, rank, score = parts
            entries = run.setdefault(qid, [])
            if int(rank) != len(entries) + 1:
                raise FileFormatError(f"{path}:{lineno}: ranks must be contiguous from 1")
            entries.append((doc_id, float(score)))
    return run


def write_qrels(qrels: dict[str, dict[str, int]], path: str) -> None:
    lines = [
        f"{qid} {doc_id} {grade}"
        for qid in sorted(qrels)
        for doc_id, grade in sorted(qrels[qid].items())
    ]
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def read_qrels(path: str) -> dict[str, dict[str, int]]:
    qrels: dict[str, dict[str, int]] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3:
                raise FileFormatError(f"{path}:{lineno}: expected 'qid doc grade'")
            qid, doc_id, grade = parts
            qrels.setdefault(qid, {})[doc_id] = int(grade)
    return qrels
