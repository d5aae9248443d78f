import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dun.metrics import (
    CalibrationReport,
    REPORT_HEADER,
    brier,
    ece,
    gaussian_cdf_values,
    moment_match,
    moment_match_mixture,
    predictive_entropy,
    rce,
    read_report,
    rejection_curve,
    tce,
    write_report,
)

from helpers import (
    oracle_brier,
    oracle_ece,
    oracle_entropy,
    oracle_rce,
    oracle_rejection,
    oracle_tce,
)


class TestMomentMatch:
    def test_identical_means(self):
        pg = moment_match(np.array([0.3, 0.7]), np.array([1.5, 1.5]), 0.81)
        assert pg.mean == pytest.approx(1.5, abs=1e-12)
        assert pg.variance == pytest.approx(0.81, abs=1e-12)
        assert pg.model_term == pytest.approx(0.0, abs=1e-12)

    def test_hand_case(self):
        pg = moment_match(np.array([0.5, 0.5]), np.array([0.0, 2.0]), 1.0)
        assert pg.mean == pytest.approx(1.0, abs=1e-12)
        assert pg.variance == pytest.approx(2.0, abs=1e-12)

    def test_against_gmm_sampling(self):
        rng = np.random.default_rng(0)
        w = rng.dirichlet(np.ones(4))
        means = rng.normal(size=4) * 2.0
        noise_var = 0.49
        pg = moment_match(w, means, noise_var)
        n = 1_000_000
        comp = rng.choice(4, size=n, p=w)
        draws = means[comp] + np.sqrt(noise_var) * rng.standard_normal(n)
        se_mean = draws.std() / np.sqrt(n)
        assert abs(pg.mean - draws.mean()) < 3 * se_mean
        # variance of the sample variance ~ 2 sigma^4 / n for near-Gaussian draws
        se_var = np.sqrt(2.0 / n) * draws.var()
        assert abs(pg.variance - draws.var()) < 5 * se_var

    def test_variance_at_least_noise(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            k = int(rng.integers(1, 6))
            w = rng.dirichlet(np.ones(k))
            means = rng.normal(size=k)
            pg = moment_match(w, means, 0.25)
            assert pg.variance >= 0.25 - 1e-15
            assert pg.model_term >= 0.0

    def test_noise_var_positive(self):
        with pytest.raises(ValueError):
            moment_match(np.array([1.0]), np.array([0.0]), 0.0)

    def test_mixture_batch_matches_scalar(self):
        rng = np.random.default_rng(2)
        w = rng.dirichlet(np.ones(3))
        means = rng.normal(size=(3, 5, 2))
        pred = moment_match_mixture(w, means, 0.36)
        for i in range(5):
            for j in range(2):
                pg = moment_match(w, means[:, i, j], 0.36)
                assert pred.mean[i, j] == pytest.approx(pg.mean, abs=1e-12)
                assert pred.variance[i, j] == pytest.approx(pg.variance, abs=1e-12)


class TestEntropy:
    def test_one_hot_zero(self):
        assert predictive_entropy(np.array([1.0, 0.0, 0.0])) == 0.0

    def test_uniform_log_k(self):
        assert predictive_entropy(np.full(5, 0.2)) == pytest.approx(np.log(5.0), abs=1e-12)

    def test_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            p = rng.dirichlet(np.ones(int(rng.integers(2, 7))))
            assert predictive_entropy(p) == pytest.approx(oracle_entropy(p), abs=1e-12)


class TestTce:
    def test_perfectly_calibrated_tails(self):
        values = np.concatenate([np.linspace(0.0, 0.099, 10), np.full(80, 0.5), np.linspace(0.9, 0.999, 10)])
        assert tce(values, 0.1) == pytest.approx(0.0, abs=1e-12)

    def test_hand_case_single_tail(self):
        values = np.concatenate([np.full(20, 0.01), np.full(80, 0.5)])
        assert tce(values, 0.1) == pytest.approx(0.1, abs=1e-12)

    def test_both_tails_empty(self):
        assert tce(np.full(10, 0.5), 0.1) == 0.0

    def test_oracle_random(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            v = rng.random(int(rng.integers(1, 64)))
            tau = float(rng.uniform(0.02, 0.45))
            assert tce(v, tau) == pytest.approx(oracle_tce(list(v), tau), abs=1e-12)

    def test_tau_range(self):
        with pytest.raises(ValueError):
            tce(np.array([0.5]), 0.5)

    @given(st.lists(st.floats(min_value=0, max_value=1, exclude_max=False), min_size=1, max_size=40), st.integers(0, 2**31))
    @settings(max_examples=50, deadline=None)
    def test_range_and_permutation_invariance(self, values, seed):
        v = np.array(values)
        t = tce(v, 0.1)
        assert 0.0 <= t <= 1.0
        perm = np.random.default_rng(seed).permutation(len(v))
        assert tce(v[perm], 0.1) == pytest.approx(t, abs=1e-12)


class TestRce:
    def test_uniform_bins_zero(self):
        values = (np.arange(100) + 0.5) / 100.0
        assert rce(values, 10) == pytest.approx(0.0, abs=1e-12)

    def test_all_in_one_bin(self):
        assert rce(np.full(37, 0.55), 10) == pytest.approx(0.9, abs=1e-12)

    def test_rightmost_bin_closed(self):
        assert rce(np.array([1.0, 1.0]), 4) == pytest.approx(0.75, abs=1e-12)

    def test_oracle_random(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            v = rng.random(int(rng.integers(1, 64)))
            bins = int(rng.integers(2, 12))
            assert rce(v, bins) == pytest.approx(oracle_rce(list(v), bins), abs=1e-12)

    @given(st.lists(st.floats(min_value=0, max_value=1), min_size=1, max_size=40))
    @settings(max_examples=50, deadline=None)
    def test_in_unit_interval(self, values):
        assert 0.0 <= rce(np.array(values), 10) <= 1.0


class TestBrier:
    def test_perfect_predictions(self):
        probs = np.eye(3)[[0, 1, 2, 1]]
        assert brier(probs, np.array([0, 1, 2, 1])) == 0.0

    def test_uniform_binary(self):
        assert brier(np.array([[0.5, 0.5]]), np.array([1])) == pytest.approx(0.25, abs=1e-12)

    def test_oracle_random(self):
        rng = np.random.default_rng(6)
        for _ in range(30):
            n, k = int(rng.integers(1, 40)), int(rng.integers(2, 6))
            probs = rng.dirichlet(np.ones(k), size=n)
            labels = rng.integers(0, k, size=n)
            assert brier(probs, labels) == pytest.approx(oracle_brier(probs, labels), abs=1e-12)


class TestEce:
    def test_confident_and_correct(self):
        probs = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert ece(probs, np.array([0, 1])) == pytest.approx(0.0, abs=1e-12)

    def test_single_datum_incorrect(self):
        assert ece(np.array([[0.8, 0.2]]), np.array([1])) == pytest.approx(0.8, abs=1e-12)

    def test_oracle_random(self):
        rng = np.random.default_rng(7)
        for _ in range(30):
            n, k = int(rng.integers(1, 50)), int(rng.integers(2, 5))
            probs = rng.dirichlet(np.ones(k), size=n)
            labels = rng.integers(0, k, size=n)
            bins = int(rng.integers(2, 12))
            assert ece(probs, labels, bins) == pytest.approx(oracle_ece(probs, labels, bins), abs=1e-12)


class TestRejectionCurve:
    def test_all_correct(self):
        h = np.array([0.3, 0.1, 0.8])
        c = np.ones(3)
        for _, acc in rejection_curve(h, c, np.linspace(0, 1, 5)):
            assert acc == 1.0

    def test_perfect_separation(self):
        # OOD points (incorrect) hold strictly larger entropies
        h = np.array([0.1, 0.2, 0.3, 0.9, 1.0])
        c = np.array([1.0, 1.0, 1.0, 0.0, 0.0])
        pairs = dict(rejection_curve(h, c, np.array([0.0, 0.4, 1.0])))
        assert pairs[0.4] == 1.0
        assert pairs[0.0] == pytest.approx(0.6)

    def test_oracle_small(self):
        rng = np.random.default_rng(8)
        for _ in range(30):
            n = 12
            h = rng.random(n)
            c = rng.integers(0, 2, size=n).astype(float)
            grid = np.linspace(0, 1, 7)
            got = rejection_curve(h, c, grid)
            want = oracle_rejection(list(h), list(c), list(grid))
            for (r1, a1), (r2, a2) in zip(got, want):
                assert r1 == pytest.approx(r2)
                assert a1 == pytest.approx(a2, abs=1e-12)

    def test_raising_incorrect_entropy_never_hurts(self):
        rng = np.random.default_rng(9)
        h = rng.random(20)
        c = rng.integers(0, 2, size=20).astype(float)
        grid = np.linspace(0, 1, 11)
        base = [acc for _, acc in rejection_curve(h, c, grid)]
        wrong = np.nonzero(c == 0.0)[0]
        h2 = h.copy()
        h2[wrong[0]] = h.max() + 1.0
        bumped = [acc for _, acc in rejection_curve(h2, c, grid)]
        assert all(b >= a - 1e-12 for a, b in zip(base, bumped))


class TestGaussianCdf:
    def test_midpoint(self):
        assert gaussian_cdf_values(np.array([1.0]), np.array([1.0]), np.array([2.0]))[0] == pytest.approx(0.5)

    def test_monotone(self):
        v = gaussian_cdf_values(np.array([-1.0, 0.0, 1.0]), np.zeros(3), np.ones(3))
        assert v[0] < v[1] < v[2]


class TestReportCsv:
    def test_header_schema_and_empty_fields(self, tmp_path):
        rep = CalibrationReport("dun_vi", "wiggle", 3, ll=-1.25, rmse=0.5, tce=0.01, rce=0.02)
        path = tmp_path / "report.csv"
        write_report(path, [rep])
        text = path.read_text().splitlines()
        assert text[0] == ",".join(REPORT_HEADER)
        rows = read_report(path)
        assert rows[0]["brier"] == ""
        assert rows[0]["ece"] == ""
        assert float(rows[0]["ll"]) == -1.25
