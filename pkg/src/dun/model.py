"""The depth-uncertainty model: depth prior/posterior and per-depth forward passes.

One forward pass computes activations a_0..a_D and applies the output block to
each, giving predictions for every subnetwork depth at once. The exact depth
posterior follows from Bayes rule on per-depth data log-likelihoods; the
variational posterior is a trainable categorical in logit space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from dun.blocks import CLASSIFICATION, ArchitectureConfig, HiddenBlock, Linear, init_he
from dun.metrics import RegressionPrediction, moment_match_mixture
from dun.numerics import Param, ParamBundle, logsumexp, require_matrix


def _softmax_logits(logits: np.ndarray) -> np.ndarray:
    m = np.max(logits)
    if m == -np.inf:
        raise ValueError("distribution has zero mass everywhere")
    e = np.exp(logits - m)
    return e / e.sum()


@dataclass(frozen=True)
class DepthDistribution:
    """Categorical distribution over depths 0..D.

    `logits` are stored normalized (log-probabilities, possibly -inf), so any
    unnormalized vector passed in is shifted by its logsumexp.
    """

    logits: np.ndarray

    def __post_init__(self):
        logits = np.asarray(self.logits, dtype=np.float64)
        norm = logsumexp(logits)
        if norm == -np.inf:
            raise ValueError("distribution has zero mass everywhere")
        object.__setattr__(self, "logits", logits - norm)

    @property
    def probs(self) -> np.ndarray:
        return _softmax_logits(self.logits)

    def __len__(self) -> int:
        return self.logits.shape[0]

    @staticmethod
    def uniform(n: int) -> "DepthDistribution":
        return DepthDistribution(np.zeros(n))

    @staticmethod
    def from_probs(probs: np.ndarray) -> "DepthDistribution":
        p = np.asarray(probs, dtype=np.float64)
        if np.any(p < 0.0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("probabilities must be nonnegative and sum to 1")
        with np.errstate(divide="ignore"):
            return DepthDistribution(np.log(p))

    @staticmethod
    def delta(index: int, n: int) -> "DepthDistribution":
        logits = np.full(n, -np.inf)
        logits[index] = 0.0
        return DepthDistribution(logits)


@dataclass
class BlockCounter:
    """Counts intermediate-block evaluations during a forward pass."""

    blocks: int = 0


class DunModel:
    """Architecture blocks plus depth prior, variational logits, and noise scale."""

    def __init__(
        self,
        config: ArchitectureConfig,
        input_block: Linear,
        hidden: list[HiddenBlock],
        output_block: Linear,
        prior: DepthDistribution | None = None,
        seed: int = 0,
    ):
        self.config = config
        self.input_block = input_block
        self.hidden = hidden
        self.output_block = output_block
        n_depths = config.max_depth + 1
        self.prior = prior if prior is not None else DepthDistribution.uniform(n_depths)
        if len(self.prior) != n_depths:
            raise ValueError("prior length must be max_depth + 1")
        # variational logits start at the prior (uniform prior -> zeros)
        start = np.where(np.isfinite(self.prior.logits), self.prior.logits, -30.0)
        self.q_logits = np.array(start, dtype=np.float64)
        self.noise_log_std = np.zeros(1)
        self.seed = seed
        self._bundle: ParamBundle | None = None

    @property
    def n_depths(self) -> int:
        return self.config.max_depth + 1

    def q(self) -> DepthDistribution:
        return DepthDistribution(self.q_logits.copy())

    def sigma(self) -> float:
        return float(np.exp(self.noise_log_std[0]))

    def parameters(self) -> ParamBundle:
        if self._bundle is None:
            params = [
                Param("input.weight", self.input_block.weight),
                Param("input.bias", self.input_block.bias),
            ]
            for i, blk in enumerate(self.hidden, start=1):
                params.append(Param(f"block{i}.weight", blk.lin.weight))
                params.append(Param(f"block{i}.bias", blk.lin.bias))
                if blk.bn is not None:
                    params.append(Param(f"block{i}.bn_scale", blk.bn.scale, decay=False))
                    params.append(Param(f"block{i}.bn_shift", blk.bn.shift, decay=False))
            params.append(Param("output.weight", self.output_block.weight))
            params.append(Param("output.bias", self.output_block.bias))
            params.append(Param("q_logits", self.q_logits, decay=False))
            params.append(
                Param(
                    "noise_log_std",
                    self.noise_log_std,
                    decay=False,
                    frozen=self.config.task == CLASSIFICATION,
                )
            )
            self._bundle = ParamBundle(params)
        return self._bundle

    def sync_param_grads(self) -> None:
        """Copy layer-local gradient accumulators into the bundle's grad buffers."""
        b = self.parameters()
        b["input.weight"].grad += self.input_block.d_weight
        b["input.bias"].grad += self.input_block.d_bias
        for i, blk in enumerate(self.hidden, start=1):
            b[f"block{i}.weight"].grad += blk.lin.d_weight
            b[f"block{i}.bias"].grad += blk.lin.d_bias
            if blk.bn is not None:
                b[f"block{i}.bn_scale"].grad += blk.bn.d_scale
                b[f"block{i}.bn_shift"].grad += blk.bn.d_shift
        b["output.weight"].grad += self.output_block.d_weight
        b["output.bias"].grad += self.output_block.d_bias

    def zero_layer_grads(self) -> None:
        self.input_block.d_weight[...] = 0.0
        self.input_block.d_bias[...] = 0.0
        for blk in self.hidden:
            blk.lin.d_weight[...] = 0.0
            blk.lin.d_bias[...] = 0.0
            if blk.bn is not None:
                blk.bn.d_scale[...] = 0.0
                blk.bn.d_shift[...] = 0.0
        self.output_block.d_weight[...] = 0.0
        self.output_block.d_bias[...] = 0.0

    def copy(self) -> "DunModel":
        import copy as _copy

        dup = _copy.deepcopy(self)
        dup._bundle = None
        return dup


def build_dun(config: ArchitectureConfig, seed: int, prior: DepthDistribution | None = None) -> DunModel:
    """He-initialized model; bitwise deterministic given the seed."""
    input_block, hidden, output_block = init_he(config, seed)
    return DunModel(config, input_block, hidden, output_block, prior=prior, seed=seed)


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    return e / e.sum(axis=1, keepdims=True)


def _apply_output(model: DunModel, a: np.ndarray) -> np.ndarray:
    o = model.output_block.forward(a)
    if model.config.task == CLASSIFICATION:
        return _softmax_rows(o)
    return o


def forward_collect(
    model: DunModel,
    x: np.ndarray,
    train: bool,
    update_stats: bool = True,
    dropout_rng: np.random.Generator | None = None,
):
    """Forward pass reusing each activation once; returns per-depth outputs and caches.

    The output block is applied to all depths in one batched product (training
    path; the eval-path `forward_all_depths` applies it per depth instead).
    """
    require_matrix(x, "input", cols=model.config.input_dim)
    caches = []
    n = x.shape[0]
    acts = np.empty((model.n_depths, n, model.config.hidden_width))
    a = model.input_block.forward(x)
    acts[0] = a
    for i, blk in enumerate(model.hidden, start=1):
        a, cache = blk.forward(a, train=train, update_stats=update_stats, dropout_rng=dropout_rng)
        acts[i] = a
        caches.append(cache)
    flat = acts.reshape(-1, model.config.hidden_width)
    outputs = model.output_block.forward(flat).reshape(model.n_depths, n, model.config.output_dim)
    if model.config.task == CLASSIFICATION:
        m = outputs.max(axis=2, keepdims=True)
        np.exp(outputs - m, out=outputs)
        outputs /= outputs.sum(axis=2, keepdims=True)
    return outputs, acts, caches


def forward_all_depths(
    model: DunModel,
    x: np.ndarray,
    mode: str = "eval",
    dropout_rng: np.random.Generator | None = None,
    counter: BlockCounter | None = None,
) -> np.ndarray:
    """Per-depth predictions, indexed [depth, datum, output_dim].

    Classification outputs are row-wise probability vectors. `mode` selects
    batch-norm behavior (running statistics are never updated here); dropout
    applies only when `dropout_rng` is given.
    """
    require_matrix(x, "input", cols=model.config.input_dim)
    outs = np.empty((model.n_depths, x.shape[0], model.config.output_dim))
    a = model.input_block.forward(x)
    outs[0] = _apply_output(model, a)
    for i, blk in enumerate(model.hidden, start=1):
        a, _ = blk.forward(a, train=(mode == "train"), update_stats=False, dropout_rng=dropout_rng)
        if counter is not None:
            counter.blocks += 1
        outs[i] = _apply_output(model, a)
    return outs


def subnetwork_forward(
    model: DunModel, x: np.ndarray, depth: int, counter: BlockCounter | None = None
) -> np.ndarray:
    """Evaluate only f_0..f_depth then the output block (eval mode)."""
    if not 0 <= depth <= model.config.max_depth:
        raise ValueError(f"depth {depth} out of range 0..{model.config.max_depth}")
    require_matrix(x, "input", cols=model.config.input_dim)
    a = model.input_block.forward(x)
    for blk in model.hidden[:depth]:
        a, _ = blk.forward(a, train=False)
        if counter is not None:
            counter.blocks += 1
    return _apply_output(model, a)


def exact_posterior(per_depth_logliks: np.ndarray, prior: DepthDistribution) -> DepthDistribution:
    """Bayes-rule depth posterior from a [D+1, N] table of log-likelihoods.

    Computed entirely in log space; depths with zero prior mass stay at zero.
    """
    table = np.asarray(per_depth_logliks, dtype=np.float64)
    if table.ndim == 1:
        table = table[:, None]
    if not np.all(np.isfinite(table)):
        raise ValueError("log-likelihood table has non-finite entries")
    if len(prior) != table.shape[0]:
        raise ValueError("prior length does not match table depth count")
    joint = prior.logits + table.sum(axis=1)
    norm = logsumexp(joint)
    if norm == -np.inf:
        raise ValueError("distribution has zero mass everywhere")
    return DepthDistribution(joint - norm)


def predict_marginal(model: DunModel, x: np.ndarray, weights: DepthDistribution | None = None):
    """Depth-marginalized prediction under the given depth weights (default: q).

    Classification: weighted mean of per-depth probability vectors.
    Regression: per-depth means moment-matched with the learned noise variance.
    """
    if weights is None:
        weights = model.q()
    if len(weights) != model.n_depths:
        raise ValueError("weights length does not match model depth count")
    outs = forward_all_depths(model, x, mode="eval")
    w = weights.probs
    if model.config.task == CLASSIFICATION:
        return np.tensordot(w, outs, axes=(0, 0))
    return moment_match_mixture(w, outs, model.sigma() ** 2)


def compute_exact_posterior(model: DunModel, x: np.ndarray, y: np.ndarray, bn_mode: str = "eval") -> DepthDistribution:
    """Exact depth posterior on a dataset; `bn_mode` picks eval or train-mode normalization."""
    from dun.objectives import per_depth_logliks

    outs = forward_all_depths(model, x, mode=("train" if bn_mode == "train" else "eval"))
    table = per_depth_logliks(outs, y, model.config.task, model.sigma())
    return exact_posterior(table, model.prior)


__all__ = [
    "BlockCounter",
    "DepthDistribution",
    "DunModel",
    "RegressionPrediction",
    "build_dun",
    "compute_exact_posterior",
    "exact_posterior",
    "forward_all_depths",
    "forward_collect",
    "predict_marginal",
    "subnetwork_forward",
]
