#!/usr/bin/env python3
"""Regenerate the committed cluster-layout fixtures (clusters.csv, foong.csv).

These files approximate the layouts of two 1-D regression sets used for
in-between-uncertainty demos: `clusters` places three disjoint input clusters
under a slowly oscillating curve; `foong` places two clusters around a
composite sine. Run once; the outputs are committed under src/dun/fixtures.
"""

import argparse
from pathlib import Path

import numpy as np

from dun.blocks import REGRESSION
from dun.data import Dataset, write_csv

FIXTURE_ROWS = 1024


def make_clusters(rng: np.random.Generator) -> Dataset:
    edges = [(-4.5, -3.0), (-1.0, 1.0), (3.0, 4.5)]
    sizes = [FIXTURE_ROWS // 3 + (1 if i < FIXTURE_ROWS % 3 else 0) for i in range(3)]
    x = np.concatenate([rng.uniform(lo, hi, size=s) for (lo, hi), s in zip(edges, sizes)])
    y = 2.0 * np.sin(0.8 * x + 0.3) + 0.15 * rng.standard_normal(x.shape[0])
    return Dataset(x[:, None], y[:, None], REGRESSION, name="clusters")


def make_foong(rng: np.random.Generator) -> Dataset:
    half = FIXTURE_ROWS // 2
    x = np.concatenate([rng.uniform(-1.0, -0.7, size=half), rng.uniform(0.5, 1.0, size=FIXTURE_ROWS - half)])
    y = x + 0.3 * np.sin(2.0 * np.pi * x) + 0.3 * np.sin(4.0 * np.pi * x) + 0.05 * rng.standard_normal(x.shape[0])
    return Dataset(x[:, None], y[:, None], REGRESSION, name="foong")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    default_dir = Path(__file__).resolve().parent.parent / "src" / "dun" / "fixtures"
    parser.add_argument("--out-dir", type=Path, default=default_dir)
    parser.add_argument("--seed", type=int, default=20240501)
    args = parser.parse_args()

    args.out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    for builder in (make_clusters, make_foong):
        ds = builder(rng)
        path = args.out_dir / f"{ds.name}.csv"
        write_csv(ds, path)
        print(f"wrote {path} ({ds.n} rows)")


if __name__ == "__main__":
    main()
