import math

import numpy as np
import pytest

from lexroute import ContractError, LossWeights, RouterParams, ToyTrainConfig, TrainingBatch
from lexroute.training import (
    contrastive_loss,
    gradient_check,
    l1_loss,
    load_balance_loss,
    router_contrastive_loss,
    smoothness_margin,
    total_loss,
    toy_train,
)


def _smooth_case(rng, B=2, T=3, V=5, c=4, qk=1, dk=2):
    for _ in range(200):
        batch = TrainingBatch(
            rng.normal(size=(B, T, c)),
            rng.normal(size=(B, T, c)),
            rng.normal(size=(B, 2, T, c)),
        )
        params = RouterParams(rng.normal(size=(c, V)), rng.normal(size=V))
        if smoothness_margin(batch, params, qk, dk) > 1e-3:
            return batch, params
    raise RuntimeError("could not find a kink-free test point")


class TestContrastive:
    def test_symmetric_pair_is_ln2(self):
        assert contrastive_loss(3.7, [3.7]) == pytest.approx(math.log(2), abs=1e-12)

    def test_dominant_positive_drives_loss_to_zero(self):
        assert contrastive_loss(200.0, [0.0, 1.0]) == pytest.approx(0.0, abs=1e-12)

    def test_matches_naive_formula(self):
        # independent (unstable) direct evaluation of the definition
        naive = -math.log(math.exp(1.0) / (math.exp(1.0) + 1.0 + math.exp(0.5)))
        assert contrastive_loss(1.0, [0.0, 0.5]) == pytest.approx(naive, abs=1e-12)

    def test_stable_under_large_scores(self):
        loss = contrastive_loss(1000.0, [999.0, 998.0])
        assert math.isfinite(loss) and loss > 0


class TestRouterContrastive:
    def test_equal_pos_neg_is_ln2(self, rng):
        phi = np.abs(rng.normal(size=6))
        q = np.abs(rng.normal(size=6))
        assert router_contrastive_loss(q, phi, [phi]) == pytest.approx(math.log(2))

    def test_zero_query_is_uniform(self, rng):
        q = np.zeros(6)
        negs = [np.abs(rng.normal(size=6)) for _ in range(3)]
        got = router_contrastive_loss(q, np.abs(rng.normal(size=6)), negs)
        assert got == pytest.approx(math.log(4), abs=1e-12)

    def test_compositional_with_explicit_dots(self, rng):
        q = rng.normal(size=5)
        pos = rng.normal(size=5)
        negs = [rng.normal(size=5) for _ in range(4)]
        expected = contrastive_loss(float(q @ pos), [float(q @ n) for n in negs])
        assert router_contrastive_loss(q, pos, negs) == pytest.approx(expected, abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ContractError):
            router_contrastive_loss(np.ones(3), np.ones(4), [])


class TestL1:
    def test_zero_reps(self):
        assert l1_loss(np.zeros((2, 3, 4))) == 0.0

    def test_mean_over_batch(self):
        reps = np.zeros((2, 3, 2))
        reps[0, 0, 0] = 3.0
        reps[1, 1, 1] = 3.0
        assert l1_loss(reps) == 3.0

    def test_matches_naive_triple_loop(self, rng):
        reps = np.abs(rng.normal(size=(3, 4, 5)))
        naive = 0.0
        for i in range(3):
            for j in range(4):
                for k in range(5):
                    naive += reps[i, j, k]
        assert l1_loss(reps) == pytest.approx(naive / 3, rel=1e-12)

    def test_homogeneous_degree_one(self, rng):
        reps = np.abs(rng.normal(size=(2, 3, 4)))
        for lam in (0.0, 0.5, 3.0):
            assert l1_loss(lam * reps) == pytest.approx(lam * l1_loss(reps), rel=1e-12)


class TestLoadBalance:
    def test_hand_case_equal_logits(self):
        # B=1, T=1, |V|=2: p=[0.5, 0.5], argmax ties to key 0 so f=[1, 0]
        assert load_balance_loss(np.zeros((1, 1, 2))) == pytest.approx(0.5, abs=1e-12)

    def test_saturated_skew_approaches_t_squared(self):
        T, V = 5, 4
        logits = np.full((1, T, V), -100.0)
        logits[:, :, 0] = 100.0
        assert load_balance_loss(logits) == pytest.approx(T * T, rel=1e-6)

    def test_near_uniform_beats_skew(self, rng):
        T, V = 6, 4
        skewed = np.full((1, T, V), -100.0)
        skewed[:, :, 0] = 100.0
        vals = []
        for _ in range(50):
            jitter = 0.01 * rng.normal(size=(1, T, V))
            vals.append(load_balance_loss(jitter))
        mean = float(np.mean(vals))
        assert mean == pytest.approx(T * T / V, rel=0.2)
        assert mean < load_balance_loss(skewed)

    def test_shift_invariance(self, rng):
        logits = rng.normal(size=(2, 4, 5))
        shifted = logits + rng.normal(size=(2, 4, 1))  # constant per token
        assert load_balance_loss(shifted) == pytest.approx(
            load_balance_loss(logits), rel=1e-10
        )


class TestTotalLoss:
    def test_zero_weights_keep_only_contrastive_terms(self, rng):
        batch, params = _smooth_case(rng)
        total, parts, _ = total_loss(batch, params, LossWeights(0.0, 0.0), 1, 2)
        assert total == parts["e"] + parts["r"]

    def test_alpha_linearity(self, rng):
        batch, params = _smooth_case(rng)
        t1, parts, _ = total_loss(batch, params, LossWeights(0.02, 0.0), 1, 2)
        t2, _, _ = total_loss(batch, params, LossWeights(0.04, 0.0), 1, 2)
        assert t2 - t1 == pytest.approx(0.02 * parts["b"], rel=1e-9)

    def test_gradients_match_finite_differences(self, rng):
        for _ in range(5):
            batch, params = _smooth_case(rng)
            err = gradient_check(batch, params, LossWeights(1e-2, 1e-5), 1, 2)
            assert err < 1e-4

    def test_dimension_mismatch(self, rng):
        batch, _ = _smooth_case(rng, c=4)
        params = RouterParams(rng.normal(size=(5, 6)), rng.normal(size=6))
        with pytest.raises(ContractError):
            total_loss(batch, params, LossWeights())

    def test_negative_weights_rejected(self):
        with pytest.raises(ContractError):
            LossWeights(alpha=-0.1)


class TestToyTrain:
    def test_zero_steps_returns_initialization(self):
        cfg = ToyTrainConfig(batch_size=2, doc_len=6)
        p0, trace0 = toy_train(cfg, 0, 0.5, LossWeights(), seed=3)
        p1, _ = toy_train(cfg, 0, 0.5, LossWeights(), seed=3)
        assert np.array_equal(p0.weight_matrix, p1.weight_matrix)
        assert np.array_equal(p0.bias, p1.bias)
        assert len(trace0) == 1

    def test_loss_decreases_early_with_small_lr(self):
        cfg = ToyTrainConfig(batch_size=2, doc_len=8)
        _, trace = toy_train(cfg, 10, 0.05, LossWeights(), seed=0)
        totals = [r["total"] for r in trace]
        assert all(b < a for a, b in zip(totals, totals[1:]))

    def test_balance_regularizer_reduces_posting_skew(self):
        cfg = ToyTrainConfig()
        wins = 0
        for seed in (0, 2, 3):
            _, with_alpha = toy_train(cfg, 120, 0.5, LossWeights(1e-2, 0.0), seed=seed)
            _, without = toy_train(cfg, 120, 0.5, LossWeights(0.0, 0.0), seed=seed)
            wins += with_alpha[-1]["balance_ratio"] < without[-1]["balance_ratio"]
        assert wins >= 2

    def test_trace_records_all_terms(self):
        _, trace = toy_train(ToyTrainConfig(batch_size=2, doc_len=6), 3, 0.1,
                             LossWeights(), seed=1)
        for rec in trace:
            for field in ("step", "total", "loss_e", "loss_r", "loss_b", "loss_s",
                          "balance_ratio", "deactivated_tokens"):
                assert field in rec
