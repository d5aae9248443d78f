import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dun.blocks import ArchitectureConfig
from dun.data import generate_toy
from dun.model import BlockCounter, DepthDistribution, build_dun, predict_marginal
from dun.pruning import PruneStrategy, predict_truncated, select_depth, truncate_posterior
from dun.training import OptimizerState, train_dun_vi


def dist(*probs):
    return DepthDistribution.from_probs(np.array(probs))


class TestSelectDepth:
    def test_argmax(self):
        assert select_depth(dist(0.1, 0.2, 0.7), PruneStrategy("argmax")) == 2

    def test_argmax_tie_breaks_low(self):
        assert select_depth(dist(0.4, 0.4, 0.2), PruneStrategy("argmax")) == 0

    def test_percentile95_hand_case(self):
        # 0.95 * 0.33 = 0.3135: index 1 fails, index 2 passes
        assert select_depth(dist(0.05, 0.30, 0.33, 0.32), PruneStrategy("percentile95")) == 2

    def test_expected_half_up(self):
        assert select_depth(dist(0.25, 0.25, 0.25, 0.25), PruneStrategy("expected")) == 2

    def test_expected_rounds_down_below_half(self):
        assert select_depth(dist(0.6, 0.3, 0.1), PruneStrategy("expected")) == 1

    def test_argmax_invariant_to_monotone_logit_transform(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            probs = rng.dirichlet(np.ones(6))
            base = select_depth(DepthDistribution.from_probs(probs), PruneStrategy("argmax"))
            logits = np.log(probs)
            for scale, shift in ((2.0, 0.0), (0.5, 3.0), (1.7, -2.0)):
                warped = DepthDistribution(scale * logits + shift)
                assert select_depth(warped, PruneStrategy("argmax")) == base

    def test_unknown_strategy(self):
        with pytest.raises(ValueError):
            PruneStrategy("bogus")


class TestTruncatePosterior:
    def test_hand_case(self):
        out = truncate_posterior(dist(0.1, 0.2, 0.3, 0.4), 2)
        assert np.allclose(out.probs, [0.1, 0.2, 0.7, 0.0], atol=1e-12)

    def test_at_max_depth_unchanged(self):
        q = dist(0.25, 0.25, 0.5)
        out = truncate_posterior(q, 2)
        assert np.allclose(out.probs, q.probs, atol=1e-12)

    @given(st.integers(min_value=2, max_value=8), st.integers(min_value=0, max_value=2**31))
    @settings(max_examples=60, deadline=None)
    def test_sum_one_prefix_preserved(self, k, seed):
        rng = np.random.default_rng(seed)
        probs = rng.dirichlet(np.ones(k))
        q = DepthDistribution.from_probs(probs)
        d_opt = int(rng.integers(0, k))
        out = truncate_posterior(q, d_opt)
        assert abs(out.probs.sum() - 1.0) <= 1e-12
        assert np.allclose(out.probs[:d_opt], probs[:d_opt], atol=1e-12)
        assert np.all(out.probs[d_opt + 1 :] == 0.0)

    def test_idempotent(self):
        q = dist(0.1, 0.5, 0.2, 0.2)
        once = truncate_posterior(q, 1)
        twice = truncate_posterior(once, 1)
        assert np.allclose(once.probs, twice.probs, atol=1e-12)


class TestPredictTruncated:
    def trained_model(self, task="classification"):
        ds = generate_toy("spirals", 80, 0) if task == "classification" else generate_toy("wiggle", 60, 0)
        in_dim = ds.input_dim
        out_dim = ds.output_dim
        cfg = ArchitectureConfig(in_dim, 8, 4, out_dim, residual=True, batchnorm=False, task=task)
        model = build_dun(cfg, 1)
        model, _ = train_dun_vi(model, ds, OptimizerState(1e-3, 0.9), epochs=30)
        return model, ds

    def test_full_depth_matches_marginal(self):
        model, ds = self.trained_model()
        x = ds.x[:9]
        full = predict_marginal(model, x)
        trunc = predict_truncated(model, x, model.config.max_depth)
        assert np.allclose(full, trunc, atol=1e-12)

    def test_block_counter(self):
        model, ds = self.trained_model()
        for d_opt in range(model.config.max_depth + 1):
            counter = BlockCounter()
            predict_truncated(model, ds.x[:5], d_opt, counter=counter)
            assert counter.blocks == d_opt

    def test_heavy_prefix_mass_close_predictions(self):
        model, ds = self.trained_model()
        q = model.q().probs
        # force nearly all mass below depth 2, then compare truncated vs full
        forced = np.array([0.5, 0.45, 0.03, 0.01, 0.01])
        weights = DepthDistribution.from_probs(forced)
        full = predict_marginal(model, ds.x[:40], weights)
        trunc = predict_truncated(model, ds.x[:40], 2, weights=weights)
        assert np.max(np.abs(full - trunc)) < 0.05

    def test_regression_variant(self):
        model, ds = self.trained_model("regression")
        x = ds.x[:6]
        full = predict_marginal(model, x)
        trunc = predict_truncated(model, x, model.config.max_depth)
        assert np.allclose(full.mean, trunc.mean, atol=1e-12)
        assert np.allclose(full.variance, trunc.variance, atol=1e-12)

    def test_out_of_range(self):
        model, ds = self.trained_model()
        with pytest.raises(ValueError):
            predict_truncated(model, ds.x[:2], 99)
