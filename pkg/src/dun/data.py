"""Toy-data generators, CSV ingestion, normalization, and train/test splits.

Generators are deterministic per (name, n, seed). The cluster-layout datasets
(`clusters`, `foong`) are backed by CSV fixtures committed under
``dun/fixtures`` and regenerated by ``scripts/make_toy_fixtures.py``; the rest
are sampled directly from their formulas.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from dun.blocks import CLASSIFICATION, REGRESSION

FIXTURE_DIR = Path(__file__).parent / "fixtures"
TOY_NAMES = ("wiggle", "simple1d", "clusters", "foong", "matern", "spirals")

WIGGLE_X_MEAN = 5.0
WIGGLE_X_STD = float(np.sqrt(2.5))
WIGGLE_NOISE_STD = 0.5
SPIRAL_NOISE_STD = 0.15
SPIRAL_TURNS = 4.0 * np.pi  # 720 degrees


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    task: str
    name: str = ""
    x_mean: np.ndarray | None = None
    x_scale: np.ndarray | None = None
    y_mean: np.ndarray | None = None
    y_scale: np.ndarray | None = None
    train_idx: np.ndarray | None = None
    test_idx: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def input_dim(self) -> int:
        return self.x.shape[1]

    @property
    def output_dim(self) -> int:
        if self.task == CLASSIFICATION:
            return int(self.y.max()) + 1
        return self.y.shape[1]

    def train(self) -> tuple[np.ndarray, np.ndarray]:
        if self.train_idx is None:
            return self.x, self.y
        return self.x[self.train_idx], self.y[self.train_idx]

    def test(self) -> tuple[np.ndarray, np.ndarray]:
        if self.test_idx is None:
            return self.x, self.y
        return self.x[self.test_idx], self.y[self.test_idx]


@dataclass(frozen=True)
class SplitSpec:
    kind: str = "standard"
    test_fraction: float = 0.1
    gap_feature: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("standard", "gap"):
            raise ValueError(f"unknown split kind {self.kind!r}")
        if self.kind == "standard" and not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test fraction must lie in (0, 1)")


def wiggle_mean(x):
    """Noiseless target curve of the wiggle dataset."""
    x = np.asarray(x, dtype=np.float64)
    return np.sin(np.pi * x) + 0.2 * np.cos(4.0 * np.pi * x) - 0.3 * x


def simple1d_mean(x):
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x + 0.25 * np.sin(np.pi * x / 2.0)


def spiral_arm_point(t, arm: int) -> np.ndarray:
    """Noiseless spiral coordinates at radial parameter t in (0, 1]."""
    t = np.asarray(t, dtype=np.float64)
    theta = SPIRAL_TURNS * t + arm * np.pi
    return np.stack([t * np.sin(theta), t * np.cos(theta)], axis=-1)


def _gen_wiggle(n: int, rng: np.random.Generator) -> Dataset:
    x = WIGGLE_X_MEAN + WIGGLE_X_STD * rng.standard_normal(n)
    y = wiggle_mean(x) + WIGGLE_NOISE_STD * rng.standard_normal(n)
    return Dataset(x[:, None], y[:, None], REGRESSION, name="wiggle")


def _cluster_uniform(n: int, edges, rng: np.random.Generator) -> np.ndarray:
    sizes = [n // len(edges)] * len(edges)
    for i in range(n - sum(sizes)):
        sizes[i] += 1
    parts = [rng.uniform(lo, hi, size=s) for (lo, hi), s in zip(edges, sizes)]
    return np.concatenate(parts)


def _gen_simple1d(n: int, rng: np.random.Generator) -> Dataset:
    x = _cluster_uniform(n, [(-2.0, -1.2), (-0.4, 0.4), (1.2, 2.0)], rng)
    y = simple1d_mean(x) + 0.05 * rng.standard_normal(n)
    return Dataset(x[:, None], y[:, None], REGRESSION, name="simple1d")


def _gen_matern(n: int, rng: np.random.Generator) -> Dataset:
    """One function draw from a Matern-5/2 GP on a uniform grid, plus noise."""
    lengthscale, signal_var, noise_std = 0.5, 1.0, 0.05
    x = np.linspace(-3.0, 3.0, n)
    r = np.abs(x[:, None] - x[None, :]) / lengthscale
    s5 = np.sqrt(5.0) * r
    k = signal_var * (1.0 + s5 + 5.0 * r * r / 3.0) * np.exp(-s5)
    k[np.diag_indices(n)] += 1e-8
    f = np.linalg.cholesky(k) @ rng.standard_normal(n)
    y = f + noise_std * rng.standard_normal(n)
    return Dataset(x[:, None], y[:, None], REGRESSION, name="matern")


def _gen_spirals(n: int, rng: np.random.Generator) -> Dataset:
    xs, labels = [], []
    for arm, count in ((0, n - n // 2), (1, n // 2)):
        t = 1.0 - rng.random(count)
        pts = spiral_arm_point(t, arm) + SPIRAL_NOISE_STD * rng.standard_normal((count, 2))
        xs.append(pts)
        labels.append(np.full(count, arm, dtype=np.int64))
    return Dataset(np.concatenate(xs), np.concatenate(labels), CLASSIFICATION, name="spirals")


def _gen_fixture(name: str, n: int, rng: np.random.Generator) -> Dataset:
    path = FIXTURE_DIR / f"{name}.csv"
    ds = load_csv(path, name=name)
    if n > ds.n:
        raise ValueError(f"{name} fixture holds {ds.n} rows; cannot draw {n}")
    idx = rng.permutation(ds.n)[:n]
    return Dataset(ds.x[idx], ds.y[idx], REGRESSION, name=name)


def generate_toy(name: str, n: int, seed: int) -> Dataset:
    """Sample one of the toy datasets; deterministic given (name, n, seed)."""
    if n < 2:
        raise ValueError("need n >= 2")
    rng = np.random.default_rng(seed)
    if name == "wiggle":
        return _gen_wiggle(n, rng)
    if name == "simple1d":
        return _gen_simple1d(n, rng)
    if name == "matern":
        return _gen_matern(n, rng)
    if name == "spirals":
        return _gen_spirals(n, rng)
    if name in ("clusters", "foong"):
        return _gen_fixture(name, n, rng)
    raise ValueError(f"unknown dataset {name!r}; valid names: {', '.join(TOY_NAMES)}")


def load_csv(path, target_column: int = -1, has_header: bool = True, task: str = REGRESSION, name: str = "") -> Dataset:
    """Parse a numeric CSV into a Dataset; the target column defaults to the last."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if has_header and rows:
        rows = rows[1:]
    if not rows:
        raise ValueError(f"{path}: no data rows")
    width = len(rows[0])
    values = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ValueError(f"{path}: ragged row {i + 1} ({len(row)} cells, expected {width})")
        for j, cell in enumerate(row):
            try:
                values[i, j] = float(cell)
            except ValueError:
                raise ValueError(f"{path}: non-numeric cell {cell!r} at row {i + 1} col {j + 1}") from None
    target = target_column if target_column >= 0 else width + target_column
    if not 0 <= target < width:
        raise ValueError(f"target column {target_column} out of range")
    keep = [j for j in range(width) if j != target]
    x = values[:, keep]
    if task == CLASSIFICATION:
        y = values[:, target].astype(np.int64)
    else:
        y = values[:, target : target + 1]
    return Dataset(x, y, task, name=name or Path(path).stem)


def write_csv(ds: Dataset, path) -> None:
    """Write columns x1..xd,y at full precision (round-trips exactly)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x{i + 1}" for i in range(ds.input_dim)] + ["y"])
        y = ds.y if ds.task == CLASSIFICATION else ds.y[:, 0]
        for i in range(ds.n):
            row = [format(v, ".17g") for v in ds.x[i]]
            row.append(str(int(y[i])) if ds.task == CLASSIFICATION else format(float(y[i]), ".17g"))
            writer.writerow(row)


def _column_stats(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = a.mean(axis=0)
    std = a.std(axis=0)
    if np.any(std == 0.0):
        warnings.warn("constant column left unscaled during normalization")
        std = np.where(std == 0.0, 1.0, std)
    return mean, std


def normalize(ds: Dataset) -> Dataset:
    """Standardize inputs (and regression targets) with training-split statistics."""
    x_train, y_train = ds.train()
    if x_train.shape[0] == 0:
        raise ValueError("empty train split")
    x_mean, x_scale = _column_stats(x_train)
    out = replace(ds, x=(ds.x - x_mean) / x_scale, x_mean=x_mean, x_scale=x_scale)
    if ds.task == REGRESSION:
        y_mean, y_scale = _column_stats(y_train)
        out = replace(out, y=(ds.y - y_mean) / y_scale, y_mean=y_mean, y_scale=y_scale)
    return out


def denormalize(ds: Dataset) -> Dataset:
    """Undo `normalize`; identity when no statistics are stored."""
    out = ds
    if ds.x_mean is not None:
        out = replace(out, x=ds.x * ds.x_scale + ds.x_mean, x_mean=None, x_scale=None)
    if ds.y_mean is not None:
        out = replace(out, y=out.y * ds.y_scale + ds.y_mean, y_mean=None, y_scale=None)
    return out


def split(ds: Dataset, spec: SplitSpec) -> Dataset:
    """Assign train/test masks: uniform-random or middle-tercile gap split."""
    n = ds.n
    if spec.kind == "standard":
        perm = np.random.default_rng(spec.seed).permutation(n)
        n_test = int(round(spec.test_fraction * n))
        return replace(ds, test_idx=np.sort(perm[:n_test]), train_idx=np.sort(perm[n_test:]))
    feature = ds.x[:, spec.gap_feature]
    if feature.max() == feature.min():
        raise ValueError(f"gap feature {spec.gap_feature} is constant")
    order = np.argsort(feature, kind="stable")
    lo, hi = n // 3, n - n // 3
    test = order[lo:hi]
    train = np.concatenate([order[:lo], order[hi:]])
    return replace(ds, test_idx=np.sort(test), train_idx=np.sort(train))
