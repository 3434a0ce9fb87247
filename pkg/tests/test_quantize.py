import numpy as np
import pytest

from conftest import routed_corpus
from lexroute import (
    ContractError,
    FileFormatError,
    build_index,
    index_equal,
    load_codebook,
    load_index,
    save_codebook,
    save_index,
)
from lexroute.quantize import (
    PqCodebook,
    pq_decode,
    pq_encode,
    quantize_index,
    train_pq,
)


class TestTraining:
    def test_k1_centroid_is_subspace_mean(self, rng):
        X = rng.normal(size=(40, 8))
        cb, _ = train_pq(X, m=4, k=1, iters=5, seed=0)
        for s in range(2):
            assert np.allclose(cb.centroids[s, 0], X[:, 4 * s:4 * s + 4].mean(axis=0),
                               atol=1e-6)

    def test_k_at_least_distinct_gives_zero_error(self, rng):
        base = rng.normal(size=(5, 4))
        X = base[rng.integers(5, size=60)]  # 5 distinct rows, repeated
        cb, _ = train_pq(X, m=2, k=8, iters=10, seed=1)
        recon = np.stack([pq_decode(pq_encode(x, cb), cb) for x in X])
        assert np.allclose(recon, X, atol=1e-6)

    def test_more_centroids_reduce_mse(self, rng):
        X = rng.normal(size=(300, 8))

        def mse(cb):
            recon = np.stack([pq_decode(pq_encode(x, cb), cb) for x in X])
            return float(((recon - X) ** 2).mean())

        cb4, _ = train_pq(X, m=2, k=4, iters=20, seed=2)
        cb16, _ = train_pq(X, m=2, k=16, iters=20, seed=2)
        assert mse(cb16) <= mse(cb4)

    def test_lloyd_mse_non_increasing(self, rng):
        X = rng.normal(size=(200, 8))
        _, traces = train_pq(X, m=4, k=8, iters=15, seed=3)
        for trace in traces:
            assert all(b <= a + 1e-12 for a, b in zip(trace, trace[1:]))

    def test_empty_sample_rejected(self):
        with pytest.raises(ContractError):
            train_pq(np.zeros((0, 8)), m=4, k=4)

    def test_m_must_divide_dim(self, rng):
        with pytest.raises(ContractError):
            train_pq(rng.normal(size=(10, 8)), m=3, k=2)


class TestEncodeDecode:
    def _codebook(self):
        cents = np.array([
            [[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]],
            [[0.0, 1.0], [1.0, 0.0], [3.0, 3.0]],
        ])
        return PqCodebook(cents)

    def test_centroid_tuple_roundtrips_exactly(self):
        cb = self._codebook()
        v = np.concatenate([cb.centroids[0, 2], cb.centroids[1, 1]]).astype(np.float64)
        codes = pq_encode(v, cb)
        assert list(codes) == [2, 1]
        assert np.array_equal(pq_decode(codes, cb), v)

    def test_tie_goes_to_lower_index(self):
        cb = PqCodebook(np.array([[[0.0], [1.0]]]))
        assert pq_encode(np.array([0.5]), cb)[0] == 0

    def test_matches_exhaustive_nearest_scan(self, rng):
        cb, _ = train_pq(rng.normal(size=(100, 6)), m=2, k=5, iters=10, seed=4)
        for _ in range(50):
            v = rng.normal(size=6)
            codes = pq_encode(v, cb)
            for s in range(3):
                d2 = [float(((cb.centroids[s, j].astype(np.float64)
                              - v[2 * s:2 * s + 2]) ** 2).sum())
                      for j in range(cb.k)]
                assert codes[s] == int(np.argmin(d2))

    def test_decode_code_zero(self):
        cb = self._codebook()
        first = np.concatenate([cb.centroids[0, 0], cb.centroids[1, 0]])
        assert np.array_equal(pq_decode(np.array([0, 0]), cb), first)

    def test_per_subspace_optimality(self, rng):
        cb, _ = train_pq(rng.normal(size=(80, 4)), m=2, k=4, iters=10, seed=5)
        for _ in range(20):
            v = rng.normal(size=4)
            recon = pq_decode(pq_encode(v, cb), cb)
            for s in range(2):
                sub = v[2 * s:2 * s + 2]
                got = ((recon[2 * s:2 * s + 2] - sub) ** 2).sum()
                best = min(((cb.centroids[s, j].astype(np.float64) - sub) ** 2).sum()
                           for j in range(cb.k))
                assert got <= best + 1e-9

    def test_out_of_range_code_rejected(self):
        cb = self._codebook()
        with pytest.raises(ContractError):
            pq_decode(np.array([3, 0]), cb)

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ContractError):
            pq_encode(np.zeros(5), self._codebook())


class TestBitsAccounting:
    @pytest.mark.parametrize("m,k,dim,expected", [(4, 256, 32, 2.0), (8, 256, 32, 1.0)])
    def test_nbits(self, m, k, dim, expected, rng):
        cb, _ = train_pq(rng.normal(size=(300, dim)), m=m, k=k, iters=1, seed=0)
        assert cb.bits_per_dim() == expected


class TestCodebookFile:
    def test_round_trip(self, tmp_path, rng):
        cb, _ = train_pq(rng.normal(size=(50, 8)), m=4, k=4, iters=5, seed=6)
        path = str(tmp_path / "cb.ctpq")
        save_codebook(cb, path)
        loaded = load_codebook(path)
        assert loaded.centroids.tobytes() == cb.centroids.tobytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ctpq"
        path.write_bytes(b"WHAT" + b"\x00" * 12)
        with pytest.raises(FileFormatError):
            load_codebook(str(path))

    def test_truncated(self, tmp_path, rng):
        cb, _ = train_pq(rng.normal(size=(50, 8)), m=4, k=4, iters=5, seed=6)
        path = tmp_path / "cb.ctpq"
        save_codebook(cb, str(path))
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(FileFormatError):
            load_codebook(str(path))


class TestQuantizedIndex:
    def test_round_trip_with_codes(self, tmp_path, rng):
        docs, _ = routed_corpus(seed=11)
        index = build_index(docs, tau=0.0, vocab_size=20)
        sample = np.concatenate([p.vectors for p in index.postings.values()])
        cb, _ = train_pq(sample.astype(np.float64), m=2, k=16, iters=10, seed=7)
        qindex = quantize_index(index, cb)
        ipath, cpath = str(tmp_path / "q.ctdl"), str(tmp_path / "cb.ctpq")
        save_codebook(cb, cpath)
        save_index(qindex, ipath)
        loaded = load_index(ipath, load_codebook(cpath))
        assert index_equal(loaded, qindex)

    def test_quantized_load_requires_codebook(self, tmp_path, rng):
        docs, _ = routed_corpus(seed=12)
        index = build_index(docs, tau=0.0, vocab_size=20)
        sample = np.concatenate([p.vectors for p in index.postings.values()])
        cb, _ = train_pq(sample.astype(np.float64), m=2, k=4, iters=5, seed=8)
        path = str(tmp_path / "q.ctdl")
        save_index(quantize_index(index, cb), path)
        with pytest.raises(FileFormatError):
            load_index(path)

    def test_weight_sidecar_not_quantized(self, rng):
        docs, _ = routed_corpus(seed=13)
        index = build_index(docs, tau=0.0, vocab_size=20)
        sample = np.concatenate([p.vectors for p in index.postings.values()])
        cb, _ = train_pq(sample.astype(np.float64), m=2, k=4, iters=5, seed=9)
        qindex = quantize_index(index, cb)
        for key, p in index.postings.items():
            assert np.array_equal(qindex.postings[key].weights, p.weights)
