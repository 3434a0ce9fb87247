import numpy as np
import pytest

from lexroute import EncodedDocument, EncodedQuery, RoutedToken
from lexroute.io import to_token_embeddings
from lexroute.router import random_router_params, route_tokens
from lexroute.synthetic import SyntheticConfig, generate_documents


def routed_corpus(seed, docs=20, tokens=10, dim=8, vocab=20, doc_keys=3,
                  skew=1.0, cls_dim=0, router_scale=1.0):
    """Random corpus routed by a seeded random router."""
    cfg = SyntheticConfig(docs=docs, tokens_per_doc=tokens, dim=dim, vocab=vocab,
                          seed=seed, skew=skew, cls_dim=cls_dim)
    params = random_router_params(dim, vocab, seed=seed + 1000, scale=router_scale)
    out = []
    for doc in generate_documents(cfg):
        toks = to_token_embeddings(doc)
        out.append(EncodedDocument(doc.doc_id, route_tokens(toks, params, doc_keys),
                                   doc.cls_vector))
    return out, params


def routed_queries(params, seed, n=3, tokens=8, dim=8, vocab=20, query_keys=1,
                   skew=1.0, cls_dim=0):
    cfg = SyntheticConfig(docs=n, tokens_per_doc=tokens, dim=dim, vocab=vocab,
                          seed=seed, skew=skew, cls_dim=cls_dim, id_prefix="q")
    out = []
    for doc in generate_documents(cfg):
        toks = to_token_embeddings(doc)
        out.append(EncodedQuery(doc.doc_id, route_tokens(toks, params, query_keys),
                                doc.cls_vector))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
