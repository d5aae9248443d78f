"""Depth-selection heuristics and truncated-posterior prediction.

After training, the depth distribution picks a cutoff depth; mass above the
cutoff folds onto it and prediction marginalizes only the retained
subnetworks, skipping all deeper blocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from dun.blocks import CLASSIFICATION
from dun.metrics import moment_match_mixture
from dun.model import BlockCounter, DepthDistribution, DunModel, _apply_output
from dun.numerics import require_matrix

ARGMAX = "argmax"
PERCENTILE = "percentile95"
EXPECTED = "expected"


@dataclass(frozen=True)
class PruneStrategy:
    kind: str = ARGMAX
    threshold: float = 0.95

    def __post_init__(self):
        if self.kind not in (ARGMAX, PERCENTILE, EXPECTED):
            raise ValueError(f"unknown prune strategy {self.kind!r}")
        if not 0.0 < self.threshold <= 1.0:
            raise ValueError("threshold must lie in (0, 1]")


def select_depth(q: DepthDistribution, strategy: PruneStrategy) -> int:
    """Pick a cutoff depth; argmax ties break toward the shallower network."""
    probs = q.probs
    if strategy.kind == ARGMAX:
        return int(np.argmax(probs))
    if strategy.kind == PERCENTILE:
        cut = strategy.threshold * probs.max()
        return int(np.nonzero(probs >= cut)[0][0])
    expected = float(np.arange(probs.shape[0]) @ probs)
    return int(math.floor(expected + 0.5))  # round half-up


def truncate_posterior(q: DepthDistribution, d_opt: int) -> DepthDistribution:
    """Fold all mass above d_opt onto d_opt, leaving shallower entries unchanged."""
    probs = q.probs
    if not 0 <= d_opt < probs.shape[0]:
        raise ValueError(f"d_opt {d_opt} out of range")
    out = probs.copy()
    out[d_opt] = probs[d_opt:].sum()
    out[d_opt + 1 :] = 0.0
    return DepthDistribution.from_probs(out)


def predict_truncated(
    model: DunModel,
    x: np.ndarray,
    d_opt: int,
    weights: DepthDistribution | None = None,
    counter: BlockCounter | None = None,
):
    """Marginal prediction over depths 0..d_opt with the truncated posterior.

    Blocks beyond d_opt are never evaluated.
    """
    if not 0 <= d_opt <= model.config.max_depth:
        raise ValueError(f"d_opt {d_opt} out of range")
    require_matrix(x, "input", cols=model.config.input_dim)
    base = weights if weights is not None else model.q()
    w = truncate_posterior(base, d_opt).probs[: d_opt + 1]

    outs = np.empty((d_opt + 1, x.shape[0], model.config.output_dim))
    a = model.input_block.forward(x)
    outs[0] = _apply_output(model, a)
    for i, blk in enumerate(model.hidden[:d_opt], start=1):
        a, _ = blk.forward(a, train=False)
        if counter is not None:
            counter.blocks += 1
        outs[i] = _apply_output(model, a)
    if model.config.task == CLASSIFICATION:
        return np.tensordot(w, outs, axes=(0, 0))
    return moment_match_mixture(w, outs, model.sigma() ** 2)
