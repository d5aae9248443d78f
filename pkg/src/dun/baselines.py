"""Deep ensembles, depth-ensembles, and Monte Carlo dropout baselines.

All baselines reuse the same blocks and the vanilla training loop; they differ
only in how predictions are aggregated. Ensemble members are fixed-depth
networks trained from independent He initializations.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from dun.blocks import CLASSIFICATION, ArchitectureConfig
from dun.data import Dataset
from dun.metrics import RegressionPrediction, moment_match_mixture
from dun.model import DunModel, build_dun, forward_all_depths
from dun.training import OptimizerState, RunRecord, train_vanilla

STANDARD = "standard"
DEPTH = "depth"


@dataclass
class EnsembleModel:
    kind: str
    members: list[DunModel]
    seeds: list[int]

    @property
    def depths(self) -> list[int]:
        return [m.config.max_depth for m in self.members]


def train_ensemble(
    kind: str,
    m: int,
    base_config: ArchitectureConfig,
    data: Dataset,
    opt: OptimizerState,
    epochs: int,
    seed: int,
    batch_size: int = 0,
    depth_min: int = 0,
) -> tuple[EnsembleModel, list[RunRecord]]:
    """Train M members with seeds seed..seed+M-1.

    Standard ensembles share the base depth; depth-ensembles use depths
    depth_min..depth_min+M-1 (bounded by the base architecture's max depth).
    """
    if m < 1:
        raise ValueError("need at least one member")
    if kind == DEPTH:
        available = base_config.max_depth - depth_min + 1
        if m > available:
            raise ValueError(f"depth ensemble of {m} members exceeds {available} available depths")
        depths = [depth_min + k for k in range(m)]
    elif kind == STANDARD:
        depths = [base_config.max_depth] * m
    else:
        raise ValueError(f"unknown ensemble kind {kind!r}")

    members, records, seeds = [], [], []
    for k, depth in enumerate(depths):
        member_seed = seed + k
        model = build_dun(replace(base_config, max_depth=depth), member_seed)
        # fresh optimizer per member: velocity state is not shared
        member_opt = OptimizerState(opt.lr, opt.momentum, opt.weight_decay)
        model, record = train_vanilla(model, data, member_opt, epochs, batch_size=batch_size, seed=member_seed)
        members.append(model)
        records.append(record)
        seeds.append(member_seed)
    return EnsembleModel(kind, members, seeds), records


def _member_mean(model: DunModel, x: np.ndarray) -> np.ndarray:
    return forward_all_depths(model, x, mode="eval")[model.config.max_depth]


def ensemble_predict(ens: EnsembleModel, x: np.ndarray):
    """Uniform mixture over members: mean probabilities, or a moment-matched Gaussian."""
    outs = np.stack([_member_mean(m, x) for m in ens.members])
    weights = np.full(len(ens.members), 1.0 / len(ens.members))
    if ens.members[0].config.task == CLASSIFICATION:
        return np.tensordot(weights, outs, axes=(0, 0))
    noise_var = float(np.mean([m.sigma() ** 2 for m in ens.members]))
    return moment_match_mixture(weights, outs, noise_var)


def dropout_predict_mc(model: DunModel, x: np.ndarray, samples: int, seed: int, chunk_rows: int = 200_000):
    """Average `samples` stochastic forward passes with fresh dropout masks.

    Batch norm stays in eval mode. Deterministic given the seed; sampling is
    chunked to bound memory.
    """
    if samples < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    n = x.shape[0]
    depth = model.config.max_depth
    per_chunk = max(1, chunk_rows // max(n, 1))
    total = np.zeros((n, model.config.output_dim))
    total_sq = np.zeros_like(total)
    done = 0
    while done < samples:
        m = min(per_chunk, samples - done)
        tiled = np.tile(x, (m, 1))
        outs = forward_all_depths(model, tiled, mode="eval", dropout_rng=rng)[depth]
        outs = outs.reshape(m, n, -1)
        total += outs.sum(axis=0)
        total_sq += (outs * outs).sum(axis=0)
        done += m
    mean = total / samples
    if model.config.task == CLASSIFICATION:
        return mean
    model_var = np.maximum(total_sq / samples - mean * mean, 0.0)
    return RegressionPrediction(mean, model_var, model.sigma() ** 2)
