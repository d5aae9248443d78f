"""Moment-matched predictive Gaussians and uncertainty-quality metrics.

Regression predictive distributions are Gaussian mixtures over depths or
ensemble members, collapsed to a single Gaussian by moment matching. The
variance splits into a model term (disagreement between mixture components)
and the learned observation-noise term.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr


@dataclass(frozen=True)
class PredictiveGaussian:
    mean: float
    variance: float
    model_term: float
    noise_term: float


@dataclass(frozen=True)
class RegressionPrediction:
    """Vectorized moment-matched prediction: arrays indexed [datum, output_dim]."""

    mean: np.ndarray
    model_var: np.ndarray
    noise_var: float

    @property
    def variance(self) -> np.ndarray:
        return self.model_var + self.noise_var

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)

    @property
    def model_std(self) -> np.ndarray:
        return np.sqrt(self.model_var)


def moment_match(weights: np.ndarray, means: np.ndarray, noise_var: float) -> PredictiveGaussian:
    """Collapse a Gaussian mixture (shared noise variance) to mean/variance.

    model term = sum_i w_i m_i^2 - (sum_i w_i m_i)^2, clamped at zero.
    """
    if noise_var <= 0.0:
        raise ValueError("noise variance must be positive")
    w = np.asarray(weights, dtype=np.float64)
    m = np.asarray(means, dtype=np.float64)
    if w.shape != m.shape:
        raise ValueError("weights and means must have the same length")
    mu = float(w @ m)
    model = float(w @ (m * m) - mu * mu)
    model = max(model, 0.0)
    return PredictiveGaussian(mu, model + noise_var, model, noise_var)


def moment_match_mixture(weights: np.ndarray, means: np.ndarray, noise_var: float) -> RegressionPrediction:
    """Batched moment matching: `means` is [components, N, output_dim]."""
    if noise_var <= 0.0:
        raise ValueError("noise variance must be positive")
    w = np.asarray(weights, dtype=np.float64)
    mu = np.tensordot(w, means, axes=(0, 0))
    second = np.tensordot(w, means * means, axes=(0, 0))
    model = np.maximum(second - mu * mu, 0.0)
    return RegressionPrediction(mu, model, float(noise_var))


def predictive_entropy(probs: np.ndarray) -> float:
    """Shannon entropy in nats; 0 log 0 reads as 0."""
    p = np.asarray(probs, dtype=np.float64)
    nz = p[p > 0.0]
    return float(-(nz * np.log(nz)).sum())


def gaussian_cdf_values(y: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    """CDF of the predictive Gaussian evaluated at the observed targets."""
    return ndtr((np.asarray(y) - mean) / std)


def tce(cdf_values: np.ndarray, tau: float = 0.1) -> float:
    """Tail calibration error at level tau.

    Counts CDF-transformed targets below tau and at/above 1-tau; each tail's
    occupancy is compared against the nominal tau and weighted by its share of
    the tail points. Zero when both tails are empty.
    """
    if not 0.0 < tau < 0.5:
        raise ValueError("tau must lie in (0, 0.5)")
    v = np.asarray(cdf_values, dtype=np.float64)
    n = v.shape[0]
    if n < 1:
        raise ValueError("need at least one value")
    b0 = int(np.count_nonzero(v < tau))
    b1 = int(np.count_nonzero(v >= 1.0 - tau))
    total = b0 + b1
    if total == 0:
        return 0.0
    out = 0.0
    for b in (b0, b1):
        out += (b / total) * abs(tau - b / n)
    return float(out)


def rce(cdf_values: np.ndarray, bins: int = 10) -> float:
    """Binned uniformity error of CDF-transformed targets, rightmost bin closed."""
    if bins < 2:
        raise ValueError("need at least 2 bins")
    v = np.asarray(cdf_values, dtype=np.float64)
    n = v.shape[0]
    idx = np.minimum((v * bins).astype(int), bins - 1)
    counts = np.bincount(idx, minlength=bins)
    frac = counts / n
    return float(np.sum(frac * np.abs(1.0 / bins - frac)))


def brier(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean squared distance between predicted probabilities and one-hot labels,
    averaged over classes as well as data points."""
    p = np.asarray(probs, dtype=np.float64)
    n, k = p.shape
    onehot = np.zeros_like(p)
    onehot[np.arange(n), np.asarray(labels, dtype=int)] = 1.0
    return float(np.mean(np.sum((p - onehot) ** 2, axis=1) / k))


def ece(probs: np.ndarray, labels: np.ndarray, bins: int = 10) -> float:
    """Expected calibration error: confidence vs accuracy over equal-width bins."""
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=int)
    conf = p.max(axis=1)
    pred = p.argmax(axis=1)
    correct = (pred == y).astype(np.float64)
    n = p.shape[0]
    idx = np.minimum((conf * bins).astype(int), bins - 1)
    out = 0.0
    for b in range(bins):
        in_bin = idx == b
        cnt = int(np.count_nonzero(in_bin))
        if cnt == 0:
            continue
        out += (cnt / n) * abs(correct[in_bin].mean() - conf[in_bin].mean())
    return float(out)


def rejection_curve(entropies: np.ndarray, correct: np.ndarray, grid: np.ndarray) -> list[tuple[float, float]]:
    """Accuracy on retained points after rejecting the ceil(r*N) highest-entropy ones.

    Ties break in stable index order. When everything is rejected the accuracy
    is defined as 1.
    """
    h = np.asarray(entropies, dtype=np.float64)
    c = np.asarray(correct, dtype=np.float64)
    if h.shape != c.shape:
        raise ValueError("entropies and correctness flags must align")
    n = h.shape[0]
    order = np.argsort(-h, kind="stable")
    pairs = []
    for r in np.asarray(grid, dtype=np.float64):
        k = int(np.ceil(r * n))
        keep = order[k:]
        acc = 1.0 if keep.size == 0 else float(c[keep].mean())
        pairs.append((float(r), acc))
    return pairs


REPORT_HEADER = ["method", "dataset", "seed", "ll", "rmse", "tce", "rce", "brier", "ece", "err", "batch_time_s"]


@dataclass
class CalibrationReport:
    method: str
    dataset: str
    seed: int
    ll: float
    rmse: float | None = None
    tce: float | None = None
    rce: float | None = None
    brier: float | None = None
    ece: float | None = None
    err: float | None = None
    batch_time_s: float | None = None

    def row(self) -> list[str]:
        def fmt(v):
            return "" if v is None else format(v, ".17g")

        return [
            self.method,
            self.dataset,
            str(self.seed),
            fmt(self.ll),
            fmt(self.rmse),
            fmt(self.tce),
            fmt(self.rce),
            fmt(self.brier),
            fmt(self.ece),
            fmt(self.err),
            fmt(self.batch_time_s),
        ]


def write_report(path, reports: list[CalibrationReport]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_HEADER)
        for rep in reports:
            writer.writerow(rep.row())


def read_report(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
