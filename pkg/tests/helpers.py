"""Shared builders and independent brute-force oracles for the test suite."""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from dun.blocks import ArchitectureConfig
from dun.model import build_dun, exact_posterior, forward_all_depths
from dun.objectives import mll_loss_and_grads, per_depth_logliks, vi_loss_and_grads


def randomize_model(model, rng, bias_mean=0.2, bias_std=0.3):
    for p in model.parameters():
        if p.name.endswith(".bias"):
            p.value += rng.normal(bias_mean, bias_std, size=p.value.shape)


def make_grad_instance(rng, task):
    """Random small network + batch for finite-difference checks."""
    depth = int(rng.integers(0, 4))
    width = int(rng.integers(4, 9))
    out_dim = 1 if task == "regression" else int(rng.integers(2, 4))
    cfg = ArchitectureConfig(
        input_dim=2,
        hidden_width=width,
        max_depth=depth,
        output_dim=out_dim,
        residual=bool(rng.integers(0, 2)),
        batchnorm=bool(rng.integers(0, 2)),
        task=task,
    )
    model = build_dun(cfg, int(rng.integers(0, 10_000)))
    randomize_model(model, rng)
    model.q_logits[...] = rng.normal(size=depth + 1) * 0.5
    if task == "regression":
        model.noise_log_std[...] = 0.2 + rng.normal() * 0.2
    n = 16
    x = rng.normal(size=(n, 2))
    y = rng.normal(size=(n, out_dim)) if task == "regression" else rng.integers(0, out_dim, size=n)
    return model, x, y, n


def fd_visible(model, x, y, check_posterior):
    """Reject instances where finite differences cannot resolve the gradient.

    Near-zero batch variance inside batch norm blows up the curvature, and a
    collapsed depth posterior scales whole blocks' gradients below the
    finite-difference noise floor.
    """
    a = model.input_block.forward(x)
    for blk in model.hidden:
        z = blk.lin.forward(a)
        if np.maximum(z, 0.0).var(axis=0).min() < 0.05:
            return False
        a, _ = blk.forward(a, train=True, update_stats=False)
    if check_posterior:
        outs = forward_all_depths(model, x, mode="train")
        table = per_depth_logliks(outs, y, model.config.task, model.sigma())
        if exact_posterior(table, model.prior).probs.min() <= 1e-4:
            return False
    return True


def sample_grad_instance(rng, task, objective):
    while True:
        model, x, y, n = make_grad_instance(rng, task)
        if fd_visible(model, x, y, objective == "mll"):
            return model, x, y, n


def random_table(rng, n_depths, n_data, scale=3.0):
    return rng.normal(loc=-2.0, scale=scale, size=(n_depths, n_data))


# ---------------------------------------------------------------------------
# Brute-force oracles (kept independent of the library implementations)
# ---------------------------------------------------------------------------


def oracle_entropy(probs):
    total = 0.0
    for p in probs:
        if p > 0.0:
            total -= p * float(np.log(p))
    return total


def oracle_tce(values, tau):
    n = len(values)
    b0 = sum(1 for v in values if v < tau)
    b1 = sum(1 for v in values if v >= 1.0 - tau)
    if b0 + b1 == 0:
        return 0.0
    total = 0.0
    for b in (b0, b1):
        total += b / (b0 + b1) * abs(tau - b / n)
    return total


def oracle_rce(values, bins):
    n = len(values)
    counts = [0] * bins
    for v in values:
        idx = min(int(v * bins), bins - 1)
        counts[idx] += 1
    total = 0.0
    for c in counts:
        total += (c / n) * abs(1.0 / bins - c / n)
    return total


def oracle_brier(probs, labels):
    n, k = probs.shape
    total = 0.0
    for i in range(n):
        for j in range(k):
            target = 1.0 if labels[i] == j else 0.0
            total += (probs[i, j] - target) ** 2 / k
    return total / n


def oracle_ece(probs, labels, bins):
    n = probs.shape[0]
    buckets = {}
    for i in range(n):
        conf = float(probs[i].max())
        pred = int(probs[i].argmax())
        idx = min(int(conf * bins), bins - 1)
        buckets.setdefault(idx, []).append((conf, 1.0 if pred == labels[i] else 0.0))
    total = 0.0
    for members in buckets.values():
        confs = [m[0] for m in members]
        accs = [m[1] for m in members]
        total += len(members) / n * abs(sum(accs) / len(accs) - sum(confs) / len(confs))
    return total


def oracle_rejection(entropies, correct, grid):
    n = len(entropies)
    indexed = sorted(range(n), key=lambda i: (-entropies[i], i))
    out = []
    for r in grid:
        k = int(np.ceil(r * n))
        keep = indexed[k:]
        if not keep:
            out.append((r, 1.0))
        else:
            out.append((r, sum(correct[i] for i in keep) / len(keep)))
    return out


def oracle_posterior_fractions(prior_fracs, lik_fracs):
    """Exact-rational Bayes posterior; likelihood per depth given as Fractions."""
    joint = [p * lk for p, lk in zip(prior_fracs, lik_fracs)]
    norm = sum(joint)
    return [float(Fraction(j, 1) / norm) for j in joint]
