"""Core domain types shared across the engine."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ContractError(ValueError):
    """Raised when an operation's preconditions are violated."""


class FileFormatError(ValueError):
    """Raised on malformed, truncated, or mismatched on-disk artifacts."""


@dataclass
class TokenEmbedding:
    """One contextualized token vector with its vocabulary token id."""

    vector: np.ndarray
    token_id: int
    position: int = 0

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64)
        if self.vector.ndim != 1:
            raise ContractError("token vector must be 1-D")
        if not np.all(np.isfinite(self.vector)):
            raise ContractError("token vector entries must be finite")
        if self.token_id < 0:
            raise ContractError("token_id must be >= 0")


@dataclass
class RoutedToken:
    """A token embedding plus its selected routing keys and weights.

    ``routes`` is an ordered list of (key_id, weight) pairs with distinct
    key ids and strictly positive weights, sorted by descending weight
    (ties by ascending key_id).
    """

    vector: np.ndarray
    token_id: int
    routes: list[tuple[int, float]] = field(default_factory=list)

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64)
        if self.vector.ndim != 1:
            raise ContractError("token vector must be 1-D")
        keys = [k for k, _ in self.routes]
        if len(keys) != len(set(keys)):
            raise ContractError("route key ids must be distinct")
        if any(w <= 0 for _, w in self.routes):
            raise ContractError("route weights must be strictly positive")


@dataclass
class EncodedQuery:
    """A routed query: token sequence plus optional sequence-level vector."""

    query_id: str
    tokens: list[RoutedToken]
    cls_vector: np.ndarray | None = None

    def __post_init__(self):
        if self.cls_vector is not None:
            self.cls_vector = np.asarray(self.cls_vector, dtype=np.float64)


@dataclass
class EncodedDocument:
    """A routed document: token sequence plus optional sequence-level vector."""

    doc_id: str
    tokens: list[RoutedToken]
    cls_vector: np.ndarray | None = None

    def __post_init__(self):
        if self.cls_vector is not None:
            self.cls_vector = np.asarray(self.cls_vector, dtype=np.float64)
