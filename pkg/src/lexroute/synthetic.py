"""Seeded synthetic corpora: clustered Gaussian token vectors, Zipfian ids.

Zipf-distributed token ids make static (exact-match) routing exhibit a
skewed posting-size distribution, while the vectors carry enough cluster
structure for routing and quantization experiments to be non-trivial.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .types import ContractError, EncodedDocument, RoutedToken, TokenEmbedding


@dataclass
class SyntheticConfig:
    docs: int = 100
    tokens_per_doc: int = 30
    dim: int = 8
    vocab: int = 50
    seed: int = 0
    cluster_count: int = 8
    skew: float = 1.0
    cls_dim: int = 0
    id_prefix: str = "d"

    def __post_init__(self):
        if min(self.docs, self.tokens_per_doc, self.dim, self.vocab,
               self.cluster_count) < 1:
            raise ContractError("synthetic config sizes must be positive")
        if self.skew < 0 or self.cls_dim < 0:
            raise ContractError("skew and cls_dim must be non-negative")


def zipf_probs(vocab: int, skew: float) -> np.ndarray:
    """P(rank r) proportional to 1/r^skew; skew=0 degenerates to uniform."""
    ranks = np.arange(1, vocab + 1, dtype=np.float64)
    mass = ranks ** -skew
    return mass / mass.sum()


def generate_corpus(config: SyntheticConfig) -> list[list[TokenEmbedding]]:
    """Raw (unrouted) token sequences; deterministic for a fixed config."""
    rng = np.random.default_rng(config.seed)
    centers = rng.normal(0.0, 1.0, (config.cluster_count, config.dim))
    probs = zipf_probs(config.vocab, config.skew)
    corpus = []
    for _ in range(config.docs):
        tids = rng.choice(config.vocab, size=config.tokens_per_doc, p=probs)
        clusters = tids % config.cluster_count  # token identity steers the cluster
        vecs = centers[clusters] + 0.5 * rng.normal(
            size=(config.tokens_per_doc, config.dim)
        )
        corpus.append(
            [TokenEmbedding(v, int(t), i) for i, (v, t) in enumerate(zip(vecs, tids))]
        )
    return corpus


def generate_documents(config: SyntheticConfig) -> list[EncodedDocument]:
    """Unrouted encoded documents with ids `<prefix>0000..`, optional CLS vectors."""
    rng = np.random.default_rng(config.seed + 1)
    docs = []
    for i, tokens in enumerate(generate_corpus(config)):
        cls = rng.normal(size=config.cls_dim) if config.cls_dim else None
        routed = [RoutedToken(t.vector, t.token_id, []) for t in tokens]
        docs.append(EncodedDocument(f"{config.id_prefix}{i:04d}", routed, cls))
    return docs
