import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dun.blocks import ArchitectureConfig
from dun.model import build_dun
from dun.numerics import Param, ParamBundle, grad_check, logsumexp, require_matrix
from dun.objectives import vi_loss_and_grads

from helpers import randomize_model


class TestLogsumexp:
    def test_equal_terms(self):
        assert logsumexp(np.array([0.0, 0.0])) == pytest.approx(np.log(2.0), abs=1e-12)

    def test_single_term_identity(self):
        for x in (-3.7, 0.0, 1234.5):
            assert logsumexp(np.array([x])) == x

    def test_large_terms_no_overflow(self):
        terms = [1000.0, 1000.5]
        got = logsumexp(np.array(terms))
        mpmath.mp.dps = 60
        want = float(mpmath.log(sum(mpmath.exp(t) for t in map(mpmath.mpf, terms))))
        assert np.isfinite(got)
        assert abs(got - want) <= 1e-12 * abs(want)

    def test_extended_precision_oracle_random(self):
        rng = np.random.default_rng(0)
        mpmath.mp.dps = 60
        for _ in range(25):
            terms = rng.normal(scale=50.0, size=rng.integers(1, 9))
            want = float(mpmath.log(sum(mpmath.exp(mpmath.mpf(t)) for t in terms)))
            got = logsumexp(terms)
            assert abs(got - want) <= 1e-12 * max(1.0, abs(want))

    def test_all_neg_inf(self):
        assert logsumexp(np.array([-np.inf, -np.inf])) == -np.inf

    def test_neg_inf_mixed(self):
        assert logsumexp(np.array([-np.inf, 2.0])) == pytest.approx(2.0, abs=1e-12)

    def test_empty_errors(self):
        with pytest.raises(ValueError, match="empty reduction"):
            logsumexp(np.array([]))

    @given(st.lists(st.floats(min_value=-500, max_value=500), min_size=1, max_size=12))
    def test_bounds(self, values):
        v = np.array(values)
        out = logsumexp(v)
        assert out >= v.max() - 1e-12
        assert out <= v.max() + np.log(len(values)) + 1e-12

    def test_deterministic(self):
        v = np.random.default_rng(3).normal(size=11)
        assert logsumexp(v) == logsumexp(v.copy())


class TestGradCheck:
    def test_quadratic(self):
        value = np.array([0.3, -1.2, 2.0])
        p = Param("p", value)
        bundle = ParamBundle([p])

        def loss():
            p.grad += p.value
            return float(0.5 * np.sum(p.value**2))

        assert grad_check(loss, bundle, eps=1e-5) <= 1e-8

    def test_small_dun_elbo(self):
        cfg = ArchitectureConfig(2, 4, 2, 1, residual=True, batchnorm=False)
        model = build_dun(cfg, 7)
        rng = np.random.default_rng(1)
        randomize_model(model, rng)
        model.q_logits[...] = rng.normal(size=3) * 0.5
        x = rng.normal(size=(12, 2))
        y = rng.normal(size=(12, 1))
        bundle = model.parameters()

        def loss():
            return vi_loss_and_grads(model, x, y, 12, update_stats=False)[0]

        assert grad_check(loss, bundle, eps=1e-5) <= 1e-4

    def test_frozen_param_contributes_zero(self):
        live = Param("live", np.array([1.0]))
        frozen = Param("frozen", np.array([5.0]), frozen=True)
        bundle = ParamBundle([live, frozen])

        def loss():
            live.grad += 2.0 * live.value
            # deliberately wrong gradient for the frozen parameter
            frozen.grad += 123.0
            return float(live.value[0] ** 2 + frozen.value[0] ** 2)

        assert grad_check(loss, bundle, eps=1e-5) <= 1e-8

    def test_eps_range_enforced(self):
        p = Param("p", np.array([1.0]))
        bundle = ParamBundle([p])
        with pytest.raises(ValueError):
            grad_check(lambda: 0.0, bundle, eps=1e-2)

    def test_non_finite_loss(self):
        p = Param("p", np.array([1.0]))
        bundle = ParamBundle([p])
        with pytest.raises(ValueError, match="loss not finite"):
            grad_check(lambda: float("nan"), bundle, eps=1e-5)


class TestParamBundle:
    def test_shapes_mirror(self):
        p = Param("w", np.zeros((3, 2)))
        assert p.grad.shape == (3, 2)

    def test_zero_grads(self):
        p = Param("w", np.ones(4))
        p.grad += 3.0
        ParamBundle([p]).zero_grads()
        assert np.all(p.grad == 0.0)

    def test_duplicate_names_rejected(self):
        with pytest.raises(ValueError):
            ParamBundle([Param("a", np.zeros(1)), Param("a", np.zeros(1))])


class TestRequireMatrix:
    def test_rejects_nan(self):
        with pytest.raises(ValueError, match="non-finite"):
            require_matrix(np.array([[np.nan, 0.0]]))

    def test_rejects_wrong_cols(self):
        with pytest.raises(ValueError, match="columns"):
            require_matrix(np.zeros((2, 3)), cols=4)
