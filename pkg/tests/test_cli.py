import json

import pytest

from lexroute import load_index, load_router_params
from lexroute.cli import main
from lexroute.io import read_embeddings, read_run, write_qrels


def run_cli(*argv):
    return main(list(argv))


@pytest.fixture
def workspace(tmp_path):
    """End-to-end fixture: corpus, queries, router params, routed files, index."""
    d = tmp_path
    corpus, queries = str(d / "corpus.jsonl"), str(d / "queries.jsonl")
    params = str(d / "router.lxrt")
    assert run_cli(
        "generate", "--docs", "40", "--tokens-per-doc", "12", "--dim", "8",
        "--vocab", "20", "--seed", "3", "--out", corpus,
        "--queries", "5", "--queries-out", queries, "--router-out", params,
    ) == 0
    routed_c, routed_q = str(d / "routed_c.jsonl"), str(d / "routed_q.jsonl")
    assert run_cli("route", "--input", corpus, "--out", routed_c,
                   "--params", params, "--max-keys", "5") == 0
    assert run_cli("route", "--input", queries, "--out", routed_q,
                   "--params", params, "--max-keys", "1") == 0
    index = str(d / "idx.ctdl")
    assert run_cli("index", "--input", routed_c, "--out", index,
                   "--tau", "0.0", "--vocab", "20") == 0
    return d


class TestGenerate:
    def test_deterministic(self, tmp_path):
        a, b = str(tmp_path / "a.jsonl"), str(tmp_path / "b.jsonl")
        for out in (a, b):
            assert run_cli("generate", "--docs", "5", "--seed", "9",
                           "--out", out) == 0
        assert open(a).read() == open(b).read()

    def test_binary_output(self, tmp_path):
        out = str(tmp_path / "c.ctem")
        assert run_cli("generate", "--docs", "4", "--out", out, "--binary") == 0
        assert len(read_embeddings(out)) == 4

    def test_router_params_written(self, tmp_path):
        out, params = str(tmp_path / "c.jsonl"), str(tmp_path / "r.lxrt")
        assert run_cli("generate", "--docs", "2", "--dim", "8", "--vocab", "20",
                       "--out", out, "--router-out", params) == 0
        loaded = load_router_params(params)
        assert loaded.weight_matrix.shape == (8, 20)


class TestRoute:
    def test_dynamic_needs_params(self, workspace, capsys):
        out = str(workspace / "x.jsonl")
        assert run_cli("route", "--input", str(workspace / "corpus.jsonl"),
                       "--out", out) == 1
        assert "error:" in capsys.readouterr().err

    def test_static_scheme_uses_token_ids(self, workspace):
        out = str(workspace / "static.jsonl")
        assert run_cli("route", "--input", str(workspace / "corpus.jsonl"),
                       "--out", out, "--scheme", "static") == 0
        for doc in read_embeddings(out):
            for t in doc.tokens:
                assert t.routes == [(t.token_id, 1.0)]

    def test_max_keys_respected(self, workspace):
        for doc in read_embeddings(str(workspace / "routed_q.jsonl")):
            assert all(len(t.routes) <= 1 for t in doc.tokens)


class TestPipeline:
    def test_search_writes_valid_run(self, workspace, capsys):
        run_path = str(workspace / "run.txt")
        assert run_cli("search", "--index", str(workspace / "idx.ctdl"),
                       "--queries", str(workspace / "routed_q.jsonl"),
                       "--top-k", "10", "--out", run_path) == 0
        run = read_run(run_path)
        assert len(run) == 5
        assert all(len(v) <= 10 for v in run.values())

    def test_search_oracle_check(self, workspace, capsys):
        assert run_cli("search", "--index", str(workspace / "idx.ctdl"),
                       "--queries", str(workspace / "routed_q.jsonl"),
                       "--top-k", "10", "--oracle-check",
                       "--corpus", str(workspace / "routed_c.jsonl")) == 0
        assert "oracle check passed" in capsys.readouterr().out

    def test_prune_then_stats(self, workspace, capsys):
        pruned = str(workspace / "pruned.ctdl")
        assert run_cli("prune", "--index", str(workspace / "idx.ctdl"),
                       "--out", pruned, "--tau", "0.5") == 0
        capsys.readouterr()
        assert run_cli("stats", "--index", pruned) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["tau"] == pytest.approx(0.5)
        full = load_index(str(workspace / "idx.ctdl"))
        assert report["total_entries"] <= full.total_entries()

    def test_quantize_round_trip(self, workspace, capsys):
        qidx, cb = str(workspace / "q.ctdl"), str(workspace / "cb.ctpq")
        assert run_cli("quantize", "--index", str(workspace / "idx.ctdl"),
                       "--out-index", qidx, "--out-codebook", cb,
                       "--m", "2", "--k", "16", "--iters", "5") == 0
        run_path = str(workspace / "qrun.txt")
        assert run_cli("search", "--index", qidx, "--codebook", cb,
                       "--queries", str(workspace / "routed_q.jsonl"),
                       "--top-k", "10", "--out", run_path) == 0
        assert len(read_run(run_path)) == 5

    def test_eval_reports_metrics(self, workspace, capsys):
        run_path = str(workspace / "run.txt")
        assert run_cli("search", "--index", str(workspace / "idx.ctdl"),
                       "--queries", str(workspace / "routed_q.jsonl"),
                       "--top-k", "10", "--out", run_path) == 0
        run = read_run(run_path)
        qrels = {qid: {ranking[0][0]: 1} for qid, ranking in run.items() if ranking}
        qrels_path = str(workspace / "qrels.txt")
        write_qrels(qrels, qrels_path)
        capsys.readouterr()
        assert run_cli("eval", "--run", run_path, "--qrels", qrels_path) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["mrr@10"] == 1.0
        assert report["ndcg@10"] == 1.0

    def test_bench_emits_stage_breakdown(self, workspace, capsys):
        assert run_cli("bench", "--index", str(workspace / "idx.ctdl"),
                       "--queries", str(workspace / "routed_q.jsonl"),
                       "--trials", "2", "--top-k", "10") == 0
        report = json.loads(capsys.readouterr().out)
        for key in ("routing_ns", "token_retrieval_ns", "scatter_ns",
                    "sort_ns", "total_ns"):
            assert key in report


class TestDiagnostics:
    def test_losscheck_passes(self, capsys):
        assert run_cli("losscheck", "--trials", "3", "--seed", "1") == 0
        assert "worst over 3 trials" in capsys.readouterr().out

    def test_toytrain_writes_artifacts(self, tmp_path, capsys):
        trace = str(tmp_path / "trace.jsonl")
        params = str(tmp_path / "trained.lxrt")
        assert run_cli("toytrain", "--steps", "5", "--lr", "0.1",
                       "--trace-out", trace, "--params-out", params) == 0
        lines = [json.loads(l) for l in open(trace)]
        assert len(lines) == 6
        assert load_router_params(params).weight_matrix.shape == (8, 16)


class TestErrorHandling:
    def test_missing_file_is_clean_error(self, tmp_path, capsys):
        assert run_cli("stats", "--index", str(tmp_path / "nope.ctdl")) == 1
        assert "error:" in capsys.readouterr().err

    def test_corrupt_index_is_clean_error(self, tmp_path, capsys):
        path = tmp_path / "bad.ctdl"
        path.write_bytes(b"garbage bytes")
        assert run_cli("stats", "--index", str(path)) == 1
        assert "error:" in capsys.readouterr().err

    def test_bad_thread_env(self, workspace, capsys, monkeypatch):
        monkeypatch.setenv("LEXROUTE_THREADS", "zero")
        assert run_cli("stats", "--index", str(workspace / "idx.ctdl")) == 1
        assert "LEXROUTE_THREADS" in capsys.readouterr().err
