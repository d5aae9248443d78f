"""Experiment configuration: flat `key = value` files with `#` comments.

Unknown keys are rejected with the offending line number; referenced files
must exist at load time. The full key list is documented in the README.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from dun.blocks import CLASSIFICATION, REGRESSION, ArchitectureConfig
from dun.data import TOY_NAMES, Dataset, SplitSpec, generate_toy, load_csv, normalize, split

METHODS = ("dun_vi", "dun_mll", "vanilla", "ensemble", "depth_ensemble", "dropout")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    method: str = "dun_vi"
    dataset: str = "wiggle"
    n: int = 300
    data_seed: int = 0
    csv_path: str = ""
    target_col: int = -1
    has_header: bool = True
    task: str = ""
    normalize: bool = False
    split: str = "none"
    test_fraction: float = 0.1
    gap_feature: int = 0
    split_seed: int = 0
    hidden_width: int = 100
    max_depth: int = 5
    residual: bool = True
    batchnorm: bool = True
    dropout_p: float = 0.0
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 0.0
    epochs: int = 1000
    batch_size: int = 0
    q_freeze_epochs: int = 0
    seeds: list[int] = field(default_factory=lambda: [0])
    ensemble_size: int = 5
    ensemble_depth_min: int = 0
    mc_samples: int = 100
    depth_min: int = 0
    depth_max: int = 5
    out_dir: str = "runs"


_BOOL_VALUES = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def _coerce(name: str, kind, raw: str):
    if kind is bool:
        if raw.lower() not in _BOOL_VALUES:
            raise ValueError(f"expected boolean for {name}, got {raw!r}")
        return _BOOL_VALUES[raw.lower()]
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    if kind is str:
        return raw
    return [int(part) for part in raw.split(",") if part.strip() != ""]


def parse_config(path) -> ExperimentConfig:
    """Read and validate an experiment config file."""
    defaults = ExperimentConfig()
    kinds = {}
    for f in fields(ExperimentConfig):
        value = getattr(defaults, f.name)
        kinds[f.name] = bool if isinstance(value, bool) else type(value)
    cfg = ExperimentConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {line.strip()!r}")
        key, _, raw = stripped.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in kinds:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            setattr(cfg, key, _coerce(key, kinds[key], raw))
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from None
    _validate(cfg, path)
    return cfg


def _validate(cfg: ExperimentConfig, path) -> None:
    if cfg.method not in METHODS:
        raise ConfigError(f"{path}: unknown method {cfg.method!r}")
    if cfg.dataset != "csv" and cfg.dataset not in TOY_NAMES:
        raise ConfigError(f"{path}: unknown dataset {cfg.dataset!r}")
    if cfg.dataset == "csv":
        if not cfg.csv_path:
            raise ConfigError(f"{path}: dataset = csv requires csv_path")
        if not Path(cfg.csv_path).exists():
            raise ConfigError(f"{path}: csv_path {cfg.csv_path!r} does not exist")
    if cfg.split not in ("none", "standard", "gap"):
        raise ConfigError(f"{path}: unknown split {cfg.split!r}")
    if not cfg.seeds:
        raise ConfigError(f"{path}: seeds must be non-empty")
    if cfg.method == "dropout" and cfg.dropout_p == 0.0:
        cfg.dropout_p = 0.1


def dataset_task(cfg: ExperimentConfig) -> str:
    if cfg.task:
        return cfg.task
    return CLASSIFICATION if cfg.dataset == "spirals" else REGRESSION


def build_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.dataset == "csv":
        ds = load_csv(cfg.csv_path, target_column=cfg.target_col, has_header=cfg.has_header, task=dataset_task(cfg))
    else:
        ds = generate_toy(cfg.dataset, cfg.n, cfg.data_seed)
    if cfg.split != "none":
        ds = split(ds, SplitSpec(cfg.split, cfg.test_fraction, cfg.gap_feature, cfg.split_seed))
    if cfg.normalize:
        ds = normalize(ds)
    return ds


def architecture(cfg: ExperimentConfig, ds: Dataset, max_depth: int | None = None) -> ArchitectureConfig:
    return ArchitectureConfig(
        input_dim=ds.input_dim,
        hidden_width=cfg.hidden_width,
        max_depth=cfg.max_depth if max_depth is None else max_depth,
        output_dim=ds.output_dim,
        residual=cfg.residual,
        batchnorm=cfg.batchnorm,
        task=ds.task,
        dropout_p=cfg.dropout_p,
    )
