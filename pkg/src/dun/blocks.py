"""Network blocks: linear layers, ReLU, batch norm, dropout, He init.

A hidden block computes ``x + BN(ReLU(W x + b))`` (residual) or
``BN(ReLU(W x + b))``. Batch norm uses batch statistics in train mode and
running statistics in eval mode; running stats update only in train mode.
Dropout, when enabled, is applied to the post-nonlinearity activation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dun import _kernels

BN_EPS = 1e-5
BN_MOMENTUM = 0.1

REGRESSION = "regression"
CLASSIFICATION = "classification"


@dataclass(frozen=True)
class ArchitectureConfig:
    input_dim: int
    hidden_width: int
    max_depth: int
    output_dim: int
    residual: bool = True
    batchnorm: bool = True
    task: str = REGRESSION
    dropout_p: float = 0.0

    def __post_init__(self):
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if min(self.input_dim, self.hidden_width, self.output_dim) < 1:
            raise ValueError("dimensions must be >= 1")
        if self.task not in (REGRESSION, CLASSIFICATION):
            raise ValueError(f"unknown task {self.task!r}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")


class Linear:
    """Affine map y = x W + b with accumulated gradients."""

    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        self.weight = weight
        self.bias = bias
        self.d_weight = np.zeros_like(weight)
        self.d_bias = np.zeros_like(bias)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[1] != self.weight.shape[0]:
            raise ValueError(f"shape mismatch: input {x.shape} vs weight {self.weight.shape}")
        out = x @ self.weight
        out += self.bias
        return out

    def backward(self, x: np.ndarray, d_out: np.ndarray) -> np.ndarray:
        self.d_weight += x.T @ d_out
        self.d_bias += d_out.sum(axis=0)
        return d_out @ self.weight.T


class BatchNorm:
    """Per-feature normalization with learnable scale/shift and running stats."""

    def __init__(self, width: int):
        self.scale = np.ones(width)
        self.shift = np.zeros(width)
        self.d_scale = np.zeros(width)
        self.d_shift = np.zeros(width)
        self.running_mean = np.zeros(width)
        self.running_var = np.ones(width)

    def forward(self, h: np.ndarray, train: bool, update_stats: bool):
        if train:
            if h.shape[0] < 2:
                raise ValueError("batch norm in train mode requires batch size >= 2")
            if _kernels.HAVE_NUMBA:
                out, centered, inv, mu, var = _kernels.bn_forward_train(h, self.scale, self.shift, BN_EPS)
            else:
                mu = h.mean(axis=0)
                centered = h - mu
                var = np.einsum("ij,ij->j", centered, centered) / h.shape[0]
                inv = 1.0 / np.sqrt(var + BN_EPS)
                out = centered * (self.scale * inv)
                out += self.shift
            if update_stats:
                self.running_mean *= 1.0 - BN_MOMENTUM
                self.running_mean += BN_MOMENTUM * mu
                self.running_var *= 1.0 - BN_MOMENTUM
                self.running_var += BN_MOMENTUM * var
        else:
            inv = 1.0 / np.sqrt(self.running_var + BN_EPS)
            centered = h - self.running_mean
            out = centered * (self.scale * inv)
            out += self.shift
        return out, (centered, inv, train)

    def backward(self, d_out: np.ndarray, cache) -> np.ndarray:
        # cache holds the centered activations; xhat = centered * inv
        centered, inv, train = cache
        if train and _kernels.HAVE_NUMBA:
            return _kernels.bn_backward_train(d_out, centered, inv, self.scale, self.d_scale, self.d_shift)
        n = d_out.shape[0]
        s2 = np.einsum("ij,ij->j", d_out, centered) / n
        self.d_scale += (n * inv) * s2
        self.d_shift += d_out.sum(axis=0)
        gain = self.scale * inv
        if train:
            s1 = d_out.mean(axis=0)
            dx = d_out * gain
            dx -= gain * s1
            dx -= centered * (gain * inv * inv * s2)
            return dx
        return d_out * gain


class HiddenBlock:
    """One intermediate block f_i: linear, ReLU, optional BN/dropout, optional skip."""

    def __init__(self, lin: Linear, bn: BatchNorm | None, residual: bool, dropout_p: float):
        self.lin = lin
        self.bn = bn
        self.residual = residual
        self.dropout_p = dropout_p

    def forward(self, a: np.ndarray, train: bool, update_stats: bool = True, dropout_rng: np.random.Generator | None = None):
        h = self.lin.forward(a)
        if _kernels.HAVE_NUMBA:
            mask = _kernels.relu_mask(h)
        else:
            np.maximum(h, 0.0, out=h)
            mask = h > 0.0
        bn_cache = None
        if self.bn is not None:
            h, bn_cache = self.bn.forward(h, train, update_stats)
        drop_mask = None
        if self.dropout_p > 0.0 and dropout_rng is not None:
            drop_mask = dropout_rng.random(h.shape) >= self.dropout_p
            h *= drop_mask
            h /= 1.0 - self.dropout_p
        out = a + h if self.residual else h
        return out, (a, mask, bn_cache, drop_mask)

    def backward(self, d_out: np.ndarray, cache) -> np.ndarray:
        a, mask, bn_cache, drop_mask = cache
        d_h = d_out
        if drop_mask is not None:
            d_h = d_h * drop_mask
            d_h /= 1.0 - self.dropout_p
        if self.bn is not None:
            d_h = self.bn.backward(d_h, bn_cache)
        elif d_h is d_out:
            d_h = d_h.copy()
        if _kernels.HAVE_NUMBA:
            _kernels.apply_mask(d_h, mask)
        else:
            d_h *= mask
        d_a = self.lin.backward(a, d_h)
        if self.residual:
            d_a += d_out
        return d_a


def he_linear(rng: np.random.Generator, in_dim: int, out_dim: int) -> Linear:
    """Linear layer with zero-mean Gaussian weights of variance 2/fan_in, zero bias."""
    w = rng.normal(0.0, np.sqrt(2.0 / in_dim), size=(in_dim, out_dim))
    return Linear(w, np.zeros(out_dim))


def init_he(config: ArchitectureConfig, seed: int) -> tuple[Linear, list[HiddenBlock], Linear]:
    """Build input block, D hidden blocks, and output block, deterministically."""
    rng = np.random.default_rng(seed)
    input_block = he_linear(rng, config.input_dim, config.hidden_width)
    hidden = []
    for _ in range(config.max_depth):
        lin = he_linear(rng, config.hidden_width, config.hidden_width)
        bn = BatchNorm(config.hidden_width) if config.batchnorm else None
        hidden.append(HiddenBlock(lin, bn, config.residual, config.dropout_p))
    output_block = he_linear(rng, config.hidden_width, config.output_dim)
    return input_block, hidden, output_block


def dropout_apply(a: np.ndarray, p: float, seed: int, mode: str = "train") -> np.ndarray:
    """Inverted dropout: zero entries with probability p, scale survivors by 1/(1-p).

    Eval mode is the identity; Monte Carlo sampling at prediction time calls
    this in train mode with a fresh seed per sample.
    """
    if p >= 1.0:
        raise ValueError("dropout probability must be < 1")
    if p < 0.0:
        raise ValueError("dropout probability must be >= 0")
    if mode == "eval" or p == 0.0:
        return a.copy()
    mask = np.random.default_rng(seed).random(a.shape) >= p
    return a * mask / (1.0 - p)


def block_forward(block: HiddenBlock, a_prev: np.ndarray, mode: str = "eval") -> np.ndarray:
    """Standalone block application; train mode updates running statistics."""
    out, _ = block.forward(a_prev, train=(mode == "train"))
    return out
