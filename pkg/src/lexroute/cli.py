"""Command-line surface for the retrieval engine.

Subcommands: generate, route, index, prune, quantize, search, eval, stats,
bench, losscheck, toytrain. All outputs are written atomically and every
command is deterministic given its seed flags.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import io as lio
from . import metrics
from .index import build_index, index_stats, load_index, prune_index, save_index
from .quantize import load_codebook, quantize_index, save_codebook, train_pq
from .retrieval import count_dot_products, measure_latency, search
from .router import (
    load_router_params,
    random_router_params,
    route_static,
    route_tokens,
    route_universal,
    save_router_params,
)
from .scoring import oracle_rank
from .synthetic import SyntheticConfig, generate_documents
from .training import (
    LossWeights,
    RouterParams,
    ToyTrainConfig,
    TrainingBatch,
    gradient_check,
    smoothness_margin,
    toy_train,
)
from .types import ContractError, FileFormatError


def _thread_cap() -> int:
    raw = os.environ.get("LEXROUTE_THREADS", "1")
    try:
        cap = int(raw)
    except ValueError:
        raise ContractError(f"LEXROUTE_THREADS must be an integer, got {raw!r}")
    if cap < 1:
        raise ContractError("LEXROUTE_THREADS must be >= 1")
    return cap


def _write_docs(docs, path: str, binary: bool) -> None:
    if binary:
        lio.write_embeddings_binary(docs, path)
    else:
        lio.write_embeddings_jsonl(docs, path)


def cmd_generate(args) -> int:
    cfg = SyntheticConfig(
        docs=args.docs, tokens_per_doc=args.tokens_per_doc, dim=args.dim,
        vocab=args.vocab, seed=args.seed, cluster_count=args.clusters,
        skew=args.skew, cls_dim=args.cls_dim, id_prefix="d",
    )
    _write_docs(generate_documents(cfg), args.out, args.binary)
    if args.queries:
        qcfg = SyntheticConfig(
            docs=args.queries, tokens_per_doc=args.query_len, dim=args.dim,
            vocab=args.vocab, seed=args.seed + 7919, cluster_count=args.clusters,
            skew=args.skew, cls_dim=args.cls_dim, id_prefix="q",
        )
        if not args.queries_out:
            raise ContractError("--queries requires --queries-out")
        _write_docs(generate_documents(qcfg), args.queries_out, args.binary)
    if args.router_out:
        params = random_router_params(args.dim, args.router_keys or args.vocab,
                                      seed=args.router_seed)
        save_router_params(params, args.router_out)
    return 0


def cmd_route(args) -> int:
    docs = lio.read_embeddings(args.input)
    params = None
    if args.scheme == "dynamic":
        if not args.params:
            raise ContractError("dynamic routing requires --params")
        params = load_router_params(args.params)
    routed = []
    for doc in docs:
        toks = lio.to_token_embeddings(doc)
        if args.scheme == "dynamic":
            new = route_tokens(toks, params, args.max_keys)
        elif args.scheme == "static":
            new = route_static(toks)
        else:
            new = route_universal(toks)
        routed.append(type(doc)(doc.doc_id, new, doc.cls_vector))
    _write_docs(routed, args.out, args.binary)
    return 0


def cmd_index(args) -> int:
    docs = lio.read_embeddings(args.input)
    index = build_index(docs, args.tau, with_cls=args.with_cls,
                        vocab_size=args.vocab, scheme_tag=args.scheme_tag)
    save_index(index, args.out)
    print(f"indexed {index.meta.doc_count} docs, {index.total_entries()} entries, "
          f"{len(index.postings)} active keys")
    return 0


def cmd_prune(args) -> int:
    codebook = load_codebook(args.codebook) if args.codebook else None
    index = load_index(args.index, codebook)
    pruned = prune_index(index, args.tau)
    save_index(pruned, args.out)
    print(f"pruned to {pruned.total_entries()} entries at tau={args.tau}")
    return 0


def cmd_quantize(args) -> int:
    index = load_index(args.index)
    vectors = np.concatenate(
        [p.vectors for p in index.postings.values()]
    ) if index.postings else np.zeros((0, index.meta.c), dtype=np.float32)
    if len(vectors) == 0:
        raise ContractError("cannot train a codebook on an empty index")
    sample = vectors[: args.sample] if args.sample else vectors
    cb, _ = train_pq(sample.astype(np.float64), args.m, args.k,
                     iters=args.iters, seed=args.seed)
    qindex = quantize_index(index, cb)
    save_codebook(cb, args.out_codebook)
    save_index(qindex, args.out_index)
    print(f"quantized {qindex.total_entries()} entries at "
          f"{cb.bits_per_dim():g} bits/dim")
    return 0


def cmd_search(args) -> int:
    codebook = load_codebook(args.codebook) if args.codebook else None
    index = load_index(args.index, codebook)
    queries = [lio.as_query(d) for d in lio.read_embeddings(args.queries)]
    run = {}
    total_dots = 0
    for q in queries:
        result = search(q, index, args.top_k, with_cls=args.with_cls)
        run[q.query_id] = result.ranked
        total_dots += result.dot_products_used
        assert result.dot_products_used == count_dot_products(q, index, args.with_cls)
    if args.oracle_check:
        if not args.corpus:
            raise ContractError("--oracle-check requires --corpus")
        corpus = lio.read_embeddings(args.corpus)
        for q in queries:
            expected = oracle_rank(q, corpus, index.meta.tau, args.top_k, args.with_cls)
            got = run[q.query_id]
            ids_ok = [d for d, _ in got] == [d for d, _ in expected]
            scores_ok = all(
                abs(a - b) <= 1e-5 * max(1.0, abs(a), abs(b))
                for (_, a), (_, b) in zip(got, expected)
            )
            if not (ids_ok and scores_ok):
                print(f"oracle mismatch for query {q.query_id}", file=sys.stderr)
                return 1
        print(f"oracle check passed for {len(queries)} queries")
    if args.out:
        lio.write_run(run, args.out)
    print(f"searched {len(queries)} queries, {total_dots} dot products")
    return 0


def cmd_eval(args) -> int:
    run = lio.read_run(args.run)
    qrels = lio.read_qrels(args.qrels)
    report = {
        f"mrr@{args.mrr_cutoff}": metrics.metric_mrr(run, qrels, args.mrr_cutoff),
        f"ndcg@{args.ndcg_cutoff}": metrics.metric_ndcg(run, qrels, args.ndcg_cutoff),
        f"recall@{args.recall_cutoff}": metrics.metric_recall(run, qrels, args.recall_cutoff),
    }
    print(json.dumps(report, indent=2))
    return 0


def cmd_stats(args) -> int:
    codebook = load_codebook(args.codebook) if args.codebook else None
    index = load_index(args.index, codebook)
    stats = index_stats(index)
    report = {
        "doc_count": index.meta.doc_count,
        "vocab_size": index.meta.vocab_size,
        "tau": index.meta.tau,
        "quantized": index.meta.quantized,
        "total_entries": stats.total_entries,
        "total_tokens": index.total_tokens,
        "max_posting_length": stats.dot_product_upper_bound,
        "active_keys": int(np.count_nonzero(stats.per_key_counts[:-1])),
        "normalized_top10": [round(float(x), 6) for x in
                             np.sort(stats.normalized_sizes)[::-1][:10]],
        "activated_keys_histogram": stats.activated_keys_histogram.tolist(),
    }
    print(json.dumps(report, indent=2))
    return 0


def cmd_bench(args) -> int:
    codebook = load_codebook(args.codebook) if args.codebook else None
    index = load_index(args.index, codebook)
    queries = [lio.as_query(d) for d in lio.read_embeddings(args.queries)]
    breakdown = measure_latency(queries, index, top_k=args.top_k,
                                trials=args.trials, with_cls=args.with_cls)
    print(json.dumps({k: round(v / 1e6, 4) for k, v in breakdown.items()}
                     | {"unit": "ms"}, indent=2))
    return 0


def cmd_losscheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for trial in range(args.trials):
        for _ in range(100):  # resample until clear of kinks
            B = int(rng.integers(1, 4))
            T = int(rng.integers(2, 6))
            V = int(rng.integers(3, 10))
            c = int(rng.integers(2, 8))
            batch = TrainingBatch(
                rng.normal(size=(B, T, c)),
                rng.normal(size=(B, T, c)),
                rng.normal(size=(B, 2, T, c)),
            )
            params = RouterParams(rng.normal(size=(c, V)), rng.normal(size=V))
            if smoothness_margin(batch, params, 1, 3) > 1e-3:
                break
        err = gradient_check(batch, params,
                             LossWeights(alpha=args.alpha, beta=args.beta),
                             query_keys=1, doc_keys=3)
        worst = max(worst, err)
        print(f"trial {trial}: max relative gradient error {err:.3e}")
    print(f"worst over {args.trials} trials: {worst:.3e}")
    return 0 if worst < 1e-4 else 1


def cmd_toytrain(args) -> int:
    cfg = ToyTrainConfig(
        batch_size=args.batch_size, query_len=args.query_len, doc_len=args.doc_len,
        num_negatives=args.negatives, dim=args.dim, vocab=args.vocab,
        query_keys=args.query_keys, doc_keys=args.doc_keys,
    )
    weights = LossWeights(alpha=args.alpha, beta=args.beta)
    params, trace = toy_train(cfg, args.steps, args.lr, weights, seed=args.seed)
    if args.trace_out:
        lines = [json.dumps(rec, separators=(",", ":")) for rec in trace]
        lio.atomic_write_text(args.trace_out, "\n".join(lines) + "\n")
    if args.params_out:
        save_router_params(params, args.params_out)
    last = trace[-1]
    print(json.dumps({"final_total": last["total"],
                      "balance_ratio": last["balance_ratio"],
                      "deactivated_tokens": last["deactivated_tokens"]}, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lexroute",
        description="Multi-vector retrieval engine with dynamic lexical routing",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic corpus")
    p.add_argument("--docs", type=int, default=100)
    p.add_argument("--tokens-per-doc", type=int, default=30)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--vocab", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clusters", type=int, default=8)
    p.add_argument("--skew", type=float, default=1.0)
    p.add_argument("--cls-dim", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--queries", type=int, default=0)
    p.add_argument("--query-len", type=int, default=8)
    p.add_argument("--queries-out")
    p.add_argument("--router-out", help="also emit seeded random router parameters")
    p.add_argument("--router-keys", type=int, default=0,
                   help="router key count (defaults to --vocab)")
    p.add_argument("--router-seed", type=int, default=0)
    p.add_argument("--binary", action="store_true", help="write binary CTEM files")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("route", help="attach routing keys to token embeddings")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--scheme", choices=["dynamic", "static", "universal"],
                   default="dynamic")
    p.add_argument("--params", help="router parameter file (dynamic scheme)")
    p.add_argument("--max-keys", type=int, default=5)
    p.add_argument("--binary", action="store_true")
    p.set_defaults(func=cmd_route)

    p = sub.add_parser("index", help="build the inverted index")
    p.add_argument("--input", required=True, help="routed embedding file")
    p.add_argument("--out", required=True)
    p.add_argument("--tau", type=float, default=0.0)
    p.add_argument("--with-cls", action="store_true")
    p.add_argument("--vocab", type=int, default=None)
    p.add_argument("--scheme-tag", default="dynamic")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("prune", help="raise the pruning threshold of an index")
    p.add_argument("--index", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--codebook")
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("quantize", help="train a PQ codebook and quantize an index")
    p.add_argument("--index", required=True)
    p.add_argument("--out-index", required=True)
    p.add_argument("--out-codebook", required=True)
    p.add_argument("--m", type=int, default=4, help="subvector dimension")
    p.add_argument("--k", type=int, default=256, help="centroids per subspace")
    p.add_argument("--iters", type=int, default=25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sample", type=int, default=100_000,
                   help="max training vectors (0 = all)")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("search", help="run queries against an index")
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True, help="routed query embedding file")
    p.add_argument("--top-k", type=int, default=1000)
    p.add_argument("--with-cls", action="store_true")
    p.add_argument("--out", help="run file to write")
    p.add_argument("--codebook")
    p.add_argument("--oracle-check", action="store_true",
                   help="verify against the brute-force scorer")
    p.add_argument("--corpus", help="routed corpus file for --oracle-check")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("eval", help="score a run file against qrels")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--mrr-cutoff", type=int, default=10)
    p.add_argument("--ndcg-cutoff", type=int, default=10)
    p.add_argument("--recall-cutoff", type=int, default=1000)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stats", help="report index size distribution")
    p.add_argument("--index", required=True)
    p.add_argument("--codebook")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("bench", help="measure per-stage search latency")
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--trials", type=int, default=3)
    p.add_argument("--top-k", type=int, default=1000)
    p.add_argument("--with-cls", action="store_true")
    p.add_argument("--codebook")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("losscheck", help="verify analytic gradients numerically")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=1e-2)
    p.add_argument("--beta", type=float, default=1e-5)
    p.set_defaults(func=cmd_losscheck)

    p = sub.add_parser("toytrain", help="gradient-descent demo of the routing losses")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--alpha", type=float, default=1e-2)
    p.add_argument("--beta", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--query-len", type=int, default=4)
    p.add_argument("--doc-len", type=int, default=12)
    p.add_argument("--negatives", type=int, default=2)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--vocab", type=int, default=16)
    p.add_argument("--query-keys", type=int, default=1)
    p.add_argument("--doc-keys", type=int, default=5)
    p.add_argument("--trace-out", help="JSON Lines training trace")
    p.add_argument("--params-out", help="trained router parameters (LXRT)")
    p.set_defaults(func=cmd_toytrain)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _thread_cap()
        return args.func(args)
    except (ContractError, FileFormatError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
