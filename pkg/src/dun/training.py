"""SGD with momentum and the training loops (variational, marginal-likelihood, vanilla).

Every loop owns its model, is bitwise-reproducible given the seed (single BLAS
thread), and records full-batch diagnostics each epoch: the marginal
log-likelihood, the ELBO, the depth distribution, the mean step loss, and wall
time. Row 0 holds the pre-training state so paired runs share their starting
point exactly.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from dun.data import Dataset
from dun.model import DepthDistribution, DunModel, forward_collect
from dun.numerics import ParamBundle
from dun.objectives import (
    elbo,
    exact_posterior,
    mll,
    mll_loss_and_grads,
    per_depth_logliks,
    vi_loss_and_grads,
    weighted_loss_and_grads,
)

NO_DECAY_NAMES = ("q_logits", "noise_log_std")
Q_LOGIT_FLOOR = -30.0


def _set_q_probs(model: DunModel, probs: np.ndarray) -> None:
    """Point the model's predictive depth weights at `probs` (floored logits)."""
    with np.errstate(divide="ignore"):
        model.q_logits[...] = np.maximum(np.log(probs), Q_LOGIT_FLOOR)


class DivergenceError(RuntimeError):
    def __init__(self, message: str, epoch: int):
        super().__init__(message)
        self.epoch = epoch


@dataclass
class OptimizerState:
    lr: float
    momentum: float = 0.0
    weight_decay: float = 0.0
    velocities: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0.0:
            raise ValueError("lr must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0.0:
            raise ValueError("weight decay must be nonnegative")


def _decay_exempt(name: str) -> bool:
    return name in NO_DECAY_NAMES or ".bn_" in name


def sgd_step(state: OptimizerState, bundle: ParamBundle) -> None:
    """v <- momentum v + (grad + wd p); p <- p - lr v, in place.

    Weight decay never touches variational logits, batch-norm parameters, or
    the noise scale. Frozen parameters are skipped entirely.
    """
    for p in bundle:
        if p.frozen:
            continue
        # a non-finite entry propagates into the sum, so one reduction suffices
        if not np.isfinite(p.grad.sum()):
            raise ValueError(f"non-finite gradient for {p.name}")
        state_pair = state.velocities.get(p.name)
        if state_pair is None:
            state_pair = (np.zeros_like(p.value), np.empty_like(p.value))
            state.velocities[p.name] = state_pair
        v, scratch = state_pair
        v *= state.momentum
        v += p.grad
        if state.weight_decay > 0.0 and p.decay and not _decay_exempt(p.name):
            np.multiply(p.value, state.weight_decay, out=scratch)
            v += scratch
        np.multiply(v, state.lr, out=scratch)
        p.value -= scratch


@dataclass
class EpochRow:
    epoch: int
    mll: float
    elbo: float
    loss: float
    q: np.ndarray
    wall_s: float


@dataclass
class RunRecord:
    rows: list[EpochRow] = field(default_factory=list)

    def final(self) -> EpochRow:
        return self.rows[-1]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])


def write_trace(path, record: RunRecord, zero_wall: bool = False) -> None:
    """Trace CSV: epoch,mll,elbo,loss,q0..qD,wall_s at 17 significant digits.

    `zero_wall` blanks the timing column to 0 so that reruns of a deterministic
    configuration produce byte-identical files.
    """
    n_depths = len(record.rows[0].q)
    header = ["epoch", "mll", "elbo", "loss"] + [f"q{i}" for i in range(n_depths)] + ["wall_s"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in record.rows:
            wall = 0.0 if zero_wall else row.wall_s
            writer.writerow(
                [row.epoch, format(row.mll, ".17g"), format(row.elbo, ".17g"), format(row.loss, ".17g")]
                + [format(v, ".17g") for v in row.q]
                + [format(wall, ".17g")]
            )


def read_trace(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _train_arrays(data: Dataset):
    idx = data.train_idx if data.train_idx is not None else np.arange(data.x.shape[0])
    return data.x[idx], data.y[idx]


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    if batch_size <= 0 or batch_size >= n:
        yield np.arange(n)
        return
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


def _full_batch_table(model: DunModel, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Diagnostic per-depth log-likelihoods: batch-statistics normalization, stats frozen."""
    outputs, _, _ = forward_collect(model, x, train=True, update_stats=False)
    return per_depth_logliks(outputs, y, model.config.task, model.sigma())


def _drive_loop(model, data, opt, epochs, batch_size, seed, step_fn, diag_fn, loss0_fn, post_grad_hook=None):
    """Shared epoch loop with per-epoch full-batch diagnostics.

    For full-batch deterministic runs the diagnostic table is the next step's
    training forward (same parameters, same batch), so only two extra forward
    passes are spent per run: one at initialization and one after the final
    update. The recorded loss of row k is the objective evaluated while
    computing update k; mll/elbo/q always describe the post-update state.
    """
    x, y = _train_arrays(data)
    n = x.shape[0]
    rng = np.random.default_rng(seed)
    record = RunRecord()
    bundle = model.parameters()
    full_batch = batch_size <= 0 or batch_size >= n
    reuse = full_batch and model.config.dropout_p == 0.0

    table0 = _full_batch_table(model, x, y)
    m0, e0, q0 = diag_fn(table0)
    record.rows.append(EpochRow(0, m0, e0, loss0_fn(table0), q0, 0.0))

    pending = None  # (epoch, loss, wall) awaiting post-update diagnostics
    for epoch in range(1, epochs + 1):
        t0 = time.perf_counter()
        losses = []
        for idx in _batches(n, batch_size, rng):
            bundle.zero_grads()
            loss, table = step_fn(epoch, x[idx], y[idx], n)
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}", epoch)
            if reuse and pending is not None:
                m, e, q = diag_fn(table)
                record.rows.append(EpochRow(pending[0], m, e, pending[1], q, pending[2]))
                pending = None
            if post_grad_hook is not None:
                post_grad_hook()
            sgd_step(opt, bundle)
            losses.append(loss)
        wall = time.perf_counter() - t0
        if reuse:
            pending = (epoch, float(np.mean(losses)), wall)
        else:
            m, e, q = diag_fn(_full_batch_table(model, x, y))
            record.rows.append(EpochRow(epoch, m, e, float(np.mean(losses)), q, wall))
    if pending is not None:
        m, e, q = diag_fn(_full_batch_table(model, x, y))
        record.rows.append(EpochRow(pending[0], m, e, pending[1], q, pending[2]))
    return record


def train_dun_vi(
    model: DunModel,
    data: Dataset,
    opt: OptimizerState,
    epochs: int,
    batch_size: int = 0,
    q_freeze_epochs: int = 0,
    seed: int = 0,
) -> tuple[DunModel, RunRecord]:
    """Maximize the minibatch ELBO jointly over weights and variational logits.

    The variational logits stay at the prior for the first `q_freeze_epochs`.
    """
    n = _train_arrays(data)[0].shape[0]

    def step(epoch, xb, yb, n_total):
        return vi_loss_and_grads(model, xb, yb, n_total, train_q=epoch > q_freeze_epochs)

    def diag(table):
        q = model.q()
        return mll(table, model.prior), elbo(table, q, model.prior, table.shape[1]), q.probs

    def loss0(table):
        return -elbo(table, model.q(), model.prior, n) / n

    record = _drive_loop(model, data, opt, epochs, batch_size, seed, step, diag, loss0)
    return model, record


def train_dun_mll(
    model: DunModel,
    data: Dataset,
    opt: OptimizerState,
    epochs: int,
    batch_size: int = 0,
    seed: int = 0,
) -> tuple[DunModel, RunRecord]:
    """Maximize the marginal log-likelihood directly; records the exact posterior.

    After training, the model's predictive depth weights are set to the final
    exact posterior, which is what an MLL-trained network predicts with.
    """
    n = _train_arrays(data)[0].shape[0]

    def step(epoch, xb, yb, n_total):
        loss, table, _ = mll_loss_and_grads(model, xb, yb, n_total)
        return loss, table

    def diag(table):
        post = exact_posterior(table, model.prior)
        return mll(table, model.prior), elbo(table, post, model.prior, table.shape[1]), post.probs

    def loss0(table):
        return -mll(table, model.prior) / n

    record = _drive_loop(model, data, opt, epochs, batch_size, seed, step, diag, loss0)
    _set_q_probs(model, record.final().q)
    return model, record


def train_vanilla(
    model: DunModel,
    data: Dataset,
    opt: OptimizerState,
    epochs: int,
    batch_size: int = 0,
    seed: int = 0,
    train_noise: bool = True,
) -> tuple[DunModel, RunRecord]:
    """Maximum-likelihood training of the fixed-depth network (deepest subnetwork).

    Useful as the plain-SGD baseline and for ensemble members. `train_noise`
    can pin the observation noise for pure least-squares fits.
    """
    depth = model.config.max_depth
    weights = np.zeros(model.n_depths)
    weights[depth] = 1.0
    n = _train_arrays(data)[0].shape[0]
    noise_param = model.parameters()["noise_log_std"]

    def step(epoch, xb, yb, n_total):
        return weighted_loss_and_grads(model, xb, yb, weights, scale=1.0 / xb.shape[0])

    def diag(table):
        total = float(table.sum(axis=1)[depth])
        return total, total, weights.copy()

    def loss0(table):
        return -float(table.sum(axis=1)[depth]) / n

    def zero_noise_grad():
        noise_param.grad[...] = 0.0

    record = _drive_loop(
        model, data, opt, epochs, batch_size, seed, step, diag, loss0,
        post_grad_hook=None if train_noise else zero_noise_grad,
    )
    # a fixed-depth net predicts from its deepest subnetwork only
    _set_q_probs(model, weights)
    return model, record
