"""Per-depth likelihoods, the marginal log-likelihood, the ELBO, and EM steps.

The gradient engine lives here too: each objective computes its scalar loss
(the minimized quantity) and accumulates exact reverse-mode gradients into the
model's parameter bundle. Per-depth output gradients are weighted by the
variational posterior (ELBO), the exact posterior (MLL), or a fixed depth
(vanilla training), then pushed through the shared block graph once.
"""

from __future__ import annotations

import numpy as np

from dun.blocks import CLASSIFICATION, REGRESSION
from dun.model import DepthDistribution, DunModel, exact_posterior, forward_collect
from dun.numerics import logsumexp

PROB_FLOOR = 1e-12
LOG_PROB_FLOOR = float(np.log(PROB_FLOOR))


def loglik_gaussian(mu, y, sigma):
    """log N(y; mu, sigma^2); accepts scalars or broadcastable arrays."""
    if np.any(np.asarray(sigma) <= 0.0):
        raise ValueError("sigma must be positive")
    var = np.asarray(sigma, dtype=np.float64) ** 2
    out = -0.5 * np.log(2.0 * np.pi * var) - (np.asarray(y) - np.asarray(mu)) ** 2 / (2.0 * var)
    return float(out) if np.isscalar(mu) and np.isscalar(y) else out

def loglik_categorical(probs: np.ndarray, label: int) -> float:
    """log probs[label], floored at log(1e-12) so saturated outputs stay finite."""
    p = np.asarray(probs, dtype=np.float64)
    if not 0 <= label < p.shape[0]:
        raise ValueError(f"label {label} out of range for {p.shape[0]} classes")
    if p[label] <= PROB_FLOOR:
        return LOG_PROB_FLOOR
    return float(np.log(p[label]))


def per_depth_logliks(outputs: np.ndarray, y: np.ndarray, task: str, sigma: float) -> np.ndarray:
    """[D+1, N] table of log p(y_n | x_n, depth i) from per-depth outputs."""
    if task == REGRESSION:
        var = sigma * sigma
        resid = y[None, :, :] - outputs
        return (-0.5 * np.log(2.0 * np.pi * var) - resid * resid / (2.0 * var)).sum(axis=2)
    labels = np.asarray(y, dtype=int)
    picked = outputs[:, np.arange(outputs.shape[1]), labels]
    with np.errstate(divide="ignore"):
        return np.maximum(np.log(picked), LOG_PROB_FLOOR)


def mll(table: np.ndarray, prior: DepthDistribution) -> float:
    """Depth-marginalized data log-likelihood: logsumexp_i [log prior_i + sum_n table[i, n]]."""
    t = np.asarray(table, dtype=np.float64)
    if t.ndim == 1:
        t = t[:, None]
    if len(prior) != t.shape[0]:
        raise ValueError("prior length does not match table depth count")
    return logsumexp(prior.logits + t.sum(axis=1))


def kl_categorical(q: DepthDistribution, p: DepthDistribution) -> float:
    """KL(q || p) for categoricals; zero-mass q entries contribute nothing."""
    qp = q.probs
    pp = p.probs
    if qp.shape != pp.shape:
        raise ValueError("distributions must have the same length")
    mask = qp > 0.0
    if np.any(pp[mask] == 0.0):
        raise ValueError("infinite KL: q has mass where p has none")
    return float(np.sum(qp[mask] * (np.log(qp[mask]) - np.log(pp[mask]))))


def elbo(table: np.ndarray, q: DepthDistribution, prior: DepthDistribution, n_total: int) -> float:
    """Minibatch evidence lower bound: (N/B) E_q[loglik] summed over the batch, minus KL."""
    t = np.asarray(table, dtype=np.float64)
    if t.ndim == 1:
        t = t[:, None]
    batch = t.shape[1]
    if not 1 <= batch <= n_total:
        raise ValueError("batch size must lie in [1, N]")
    data_term = float(q.probs @ t.sum(axis=1))
    return (n_total / batch) * data_term - kl_categorical(q, prior)


def em_e_step(table: np.ndarray, prior: DepthDistribution) -> DepthDistribution:
    """Exact depth posterior given current weights (Bayes rule on the table)."""
    return exact_posterior(table, prior)


# ---------------------------------------------------------------------------
# Loss + gradient engine
# ---------------------------------------------------------------------------


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    return logits - logsumexp(logits)


def _table_grads_to_output_grads(outputs, y, task, sigma, d_table):
    """Convert d loss/d table into gradients w.r.t. per-depth raw outputs.

    Regression: gradient w.r.t. the predicted means plus a scalar gradient for
    log sigma. Classification: gradient w.r.t. pre-softmax logits (rows whose
    picked probability sits below the floor get zero gradient).
    """
    if task == REGRESSION:
        var = sigma * sigma
        resid = y[None, :, :] - outputs
        d_mu = d_table[:, :, None] * resid / var
        d_log_sigma = float(np.sum(d_table * ((resid * resid).sum(axis=2) / var - y.shape[1])))
        return d_mu, d_log_sigma
    labels = np.asarray(y, dtype=int)
    picked = outputs[:, np.arange(outputs.shape[1]), labels]
    live = np.where(picked >= PROB_FLOOR, d_table, 0.0)
    d_o = -live[:, :, None] * outputs
    d_o[:, np.arange(outputs.shape[1]), labels] += live
    return d_o, 0.0


def _backward_through_net(model: DunModel, x, acts, caches, d_o):
    depth = model.config.max_depth
    width = model.config.hidden_width
    out_block = model.output_block
    # output-block gradients and per-depth activation gradients in two products
    flat_acts = acts.reshape(-1, width)
    flat_do = d_o.reshape(-1, model.config.output_dim)
    out_block.d_weight += flat_acts.T @ flat_do
    out_block.d_bias += flat_do.sum(axis=0)
    d_from_out = (flat_do @ out_block.weight.T).reshape(acts.shape)

    d_a = d_from_out[depth].copy()
    for i in range(depth, 0, -1):
        d_a = model.hidden[i - 1].backward(d_a, caches[i - 1])
        d_a += d_from_out[i - 1]
    model.input_block.backward(x, d_a)


def _run_backward(model, x, y, outputs, acts, caches, d_table):
    model.zero_layer_grads()
    d_o, d_log_sigma = _table_grads_to_output_grads(outputs, y, model.config.task, model.sigma(), d_table)
    _backward_through_net(model, x, acts, caches, d_o)
    model.sync_param_grads()
    if model.config.task == REGRESSION:
        model.parameters()["noise_log_std"].grad += d_log_sigma


def vi_loss_and_grads(
    model: DunModel,
    x: np.ndarray,
    y: np.ndarray,
    n_total: int,
    update_stats: bool = True,
    dropout_rng: np.random.Generator | None = None,
    train_q: bool = True,
):
    """Negative ELBO / N with gradients for weights, variational logits, and noise.

    Returns (loss, table) where table holds the batch's per-depth log-likelihoods.
    """
    batch = x.shape[0]
    outputs, acts, caches = forward_collect(model, x, train=True, update_stats=update_stats, dropout_rng=dropout_rng)
    table = per_depth_logliks(outputs, y, model.config.task, model.sigma())
    log_q = _log_softmax(model.q_logits)
    q = np.exp(log_q)
    totals = table.sum(axis=1)
    kl_value = float(np.sum(q * (log_q - model.prior.logits)))
    loss = -float(q @ totals) / batch + kl_value / n_total
    if not np.isfinite(loss):
        return loss, table

    d_table = np.broadcast_to(-(q / batch)[:, None], table.shape)
    _run_backward(model, x, y, outputs, acts, caches, d_table)
    if train_q:
        data_g = -totals / batch
        kl_g = q * (log_q - model.prior.logits - kl_value)
        model.parameters()["q_logits"].grad += q * (data_g - float(q @ data_g)) + kl_g / n_total
    return loss, table


def mll_loss_and_grads(
    model: DunModel,
    x: np.ndarray,
    y: np.ndarray,
    n_total: int,
    update_stats: bool = True,
    dropout_rng: np.random.Generator | None = None,
):
    """Negative (minibatch) marginal log-likelihood / N with weight gradients.

    Returns (loss, table, posterior) where the posterior is the per-batch exact
    depth posterior that weights the gradients.
    """
    batch = x.shape[0]
    outputs, acts, caches = forward_collect(model, x, train=True, update_stats=update_stats, dropout_rng=dropout_rng)
    table = per_depth_logliks(outputs, y, model.config.task, model.sigma())
    joint = model.prior.logits + (n_total / batch) * table.sum(axis=1)
    value = logsumexp(joint)
    loss = -value * (1.0 / n_total)
    if not np.isfinite(loss):
        return loss, table, model.prior
    posterior = np.exp(joint - value)
    posterior /= posterior.sum()

    d_table = np.broadcast_to(-(posterior / batch)[:, None], table.shape)
    _run_backward(model, x, y, outputs, acts, caches, d_table)
    return loss, table, DepthDistribution(joint - value)


def weighted_loss_and_grads(
    model: DunModel,
    x: np.ndarray,
    y: np.ndarray,
    weights: np.ndarray,
    scale: float,
    update_stats: bool = True,
    dropout_rng: np.random.Generator | None = None,
):
    """loss = -scale * sum_i weights_i * sum_n table[i, n], with gradients.

    Covers fixed-depth training (delta weights, scale 1/B) and the expected
    complete-data objective of the M step (posterior weights, scale 1).
    """
    outputs, acts, caches = forward_collect(model, x, train=True, update_stats=update_stats, dropout_rng=dropout_rng)
    table = per_depth_logliks(outputs, y, model.config.task, model.sigma())
    loss = -scale * float(np.asarray(weights) @ table.sum(axis=1))
    if not np.isfinite(loss):
        return loss, table
    d_table = np.broadcast_to(-scale * np.asarray(weights)[:, None], table.shape)
    _run_backward(model, x, y, outputs, acts, caches, d_table)
    return loss, table


def em_m_step(model: DunModel, x: np.ndarray, y: np.ndarray, posterior: DepthDistribution, steps: int, lr: float) -> DunModel:
    """Gradient ascent on the posterior-weighted total log-likelihood.

    The posterior stays fixed throughout; `steps` plain (momentum-free)
    gradient updates are applied in place and the model is returned.
    """
    w = posterior.probs
    bundle = model.parameters()
    for step in range(steps):
        bundle.zero_grads()
        loss, _ = weighted_loss_and_grads(model, x, y, w, scale=1.0)
        if not np.isfinite(loss):
            raise RuntimeError(f"m-step diverged at inner step {step}")
        for p in bundle:
            if p.frozen or p.name == "q_logits":
                continue
            p.value -= lr * p.grad
    return model
