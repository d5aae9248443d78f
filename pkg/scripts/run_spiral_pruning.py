#!/usr/bin/env python3
"""Depth selection on the two-armed spiral: train a deep DUN, prune, compare.

Trains a width-20 DUN of the requested maximum depth on 200 spiral points,
reports the depth posterior, the cutoff chosen by each heuristic, and test
accuracy for the full vs truncated marginal predictions.
"""

import argparse

import numpy as np
import threadpoolctl

from dun.blocks import ArchitectureConfig
from dun.data import generate_toy
from dun.model import build_dun, predict_marginal
from dun.pruning import PruneStrategy, predict_truncated, select_depth
from dun.training import OptimizerState, train_dun_vi


def accuracy(probs, labels):
    return float((probs.argmax(axis=1) == labels).mean())


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--max-depth", type=int, default=30)
    parser.add_argument("--width", type=int, default=20)
    parser.add_argument("--epochs", type=int, default=6000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    threadpoolctl.threadpool_limits(1)
    train = generate_toy("spirals", 200, args.seed)
    test = generate_toy("spirals", 1800, args.seed + 1000)
    cfg = ArchitectureConfig(2, args.width, args.max_depth, 2, residual=True, batchnorm=True, task="classification")
    model = build_dun(cfg, args.seed)
    model, record = train_dun_vi(model, train, OptimizerState(1e-3, 0.9, 1e-4), args.epochs, seed=args.seed)

    q = model.q()
    print("depth posterior:", np.array2string(q.probs, precision=3, suppress_small=True))
    full_acc = accuracy(predict_marginal(model, test.x), test.y)
    print(f"full-marginal test accuracy: {full_acc:.4f}")
    for kind in ("argmax", "percentile95", "expected"):
        d_opt = select_depth(q, PruneStrategy(kind))
        pruned_acc = accuracy(predict_truncated(model, test.x, d_opt), test.y)
        print(f"{kind:>13s}: d_opt={d_opt:2d} pruned accuracy {pruned_acc:.4f}")


if __name__ == "__main__":
    main()
