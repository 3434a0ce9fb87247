"""Multi-vector retrieval engine with dynamic lexical routing."""

from .index import (
    IndexStats,
    InvertedIndex,
    PostingList,
    build_index,
    index_equal,
    index_stats,
    load_index,
    prune_index,
    save_index,
)
from .metrics import metric_mrr, metric_ndcg, metric_recall
from .quantize import (
    PqCodebook,
    load_codebook,
    pq_decode,
    pq_encode,
    quantize_index,
    save_codebook,
    train_pq,
)
from .retrieval import SearchResult, count_dot_products, measure_latency, search
from .router import (
    RouterParams,
    encode_document,
    encode_query,
    load_router_params,
    pool_router_representations,
    random_router_params,
    route_static,
    route_tokens,
    route_universal,
    router_representation,
    save_router_params,
    select_top_keys,
)
from .scoring import (
    brute_force_rank,
    score_all_to_all,
    score_dynamic,
    score_single_vector,
    score_static_lexical,
)
from .training import (
    LossWeights,
    ToyTrainConfig,
    TrainingBatch,
    contrastive_loss,
    gradient_check,
    l1_loss,
    load_balance_loss,
    router_contrastive_loss,
    total_loss,
    toy_train,
)
from .types import (
    ContractError,
    EncodedDocument,
    EncodedQuery,
    FileFormatError,
    RoutedToken,
    TokenEmbedding,
)

__version__ = "0.1.0"
