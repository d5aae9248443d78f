"""Command-line front end: train, eval, compare-objectives, sweep-depth, gen-data.

Exit codes: 0 success, 2 usage/config errors, 3 numerical failure. With
``--threads 1`` every emitted trace is byte-reproducible (the wall-time column
is zeroed in that mode; real timings land in the report's batch_time_s).
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from dun.baselines import dropout_predict_mc, ensemble_predict, train_ensemble
from dun.blocks import CLASSIFICATION, REGRESSION
from dun.checkpoint import load_checkpoint, load_ensemble, save_checkpoint, save_ensemble
from dun.config import ConfigError, ExperimentConfig, architecture, build_dataset, dataset_task, parse_config
from dun.data import Dataset, generate_toy, write_csv
from dun.metrics import (
    CalibrationReport,
    brier,
    ece,
    gaussian_cdf_values,
    rce,
    tce,
    write_report,
)
from dun.model import DunModel, build_dun, compute_exact_posterior, predict_marginal
from dun.objectives import LOG_PROB_FLOOR, loglik_gaussian
from dun.pruning import PruneStrategy, predict_truncated, select_depth
from dun.svgplot import Panel, Series, render_grid
from dun.training import DivergenceError, OptimizerState, train_dun_mll, train_dun_vi, train_vanilla, write_trace

_THREAD_LIMITS = []


def _apply_threads(threads: int | None) -> int | None:
    if threads is None:
        env = os.environ.get("DUN_THREADS", "")
        threads = int(env) if env.strip() else None
    if threads is not None and threads > 0:
        try:
            import threadpoolctl

            _THREAD_LIMITS.append(threadpoolctl.threadpool_limits(limits=threads))
        except ImportError:
            pass
    return threads


def _optimizer(cfg: ExperimentConfig) -> OptimizerState:
    return OptimizerState(cfg.lr, cfg.momentum, cfg.weight_decay)


def _eval_arrays(ds: Dataset):
    if ds.test_idx is not None:
        return ds.test()
    return ds.train()


def _denorm(ds: Dataset, mean, var):
    if ds.y_scale is None:
        return mean, var
    scale = ds.y_scale
    return mean * scale + ds.y_mean, var * scale * scale


def evaluate_model(predict, ds: Dataset, method: str, dataset_name: str, seed: int) -> CalibrationReport:
    """Compute the calibration report for a prediction function on the eval split."""
    x_eval, y_eval = _eval_arrays(ds)
    t0 = time.perf_counter()
    batch = x_eval[: min(512, x_eval.shape[0])]
    predict(batch)
    batch_time = time.perf_counter() - t0
    pred = predict(x_eval)
    if ds.task == CLASSIFICATION:
        probs = pred
        labels = np.asarray(y_eval, dtype=int)
        picked = probs[np.arange(probs.shape[0]), labels]
        ll = float(np.mean(np.maximum(np.log(np.maximum(picked, 1e-300)), LOG_PROB_FLOOR)))
        err = float(np.mean(probs.argmax(axis=1) != labels))
        return CalibrationReport(
            method, dataset_name, seed, ll=ll, brier=brier(probs, labels), ece=ece(probs, labels), err=err,
            batch_time_s=batch_time,
        )
    mean, var = _denorm(ds, pred.mean, pred.variance)
    y_true = y_eval * ds.y_scale + ds.y_mean if ds.y_scale is not None else y_eval
    std = np.sqrt(var)
    ll = float(np.mean(loglik_gaussian(mean, y_true, std)))
    rmse = float(np.sqrt(np.mean((mean - y_true) ** 2)))
    cdf = gaussian_cdf_values(y_true, mean, std).ravel()
    return CalibrationReport(
        method, dataset_name, seed, ll=ll, rmse=rmse, tce=tce(cdf), rce=rce(cdf), batch_time_s=batch_time,
    )


def _train_one(cfg: ExperimentConfig, ds: Dataset, seed: int):
    """Train one model per the configured method; returns (artifact, record, predict)."""
    arch = architecture(cfg, ds)
    opt = _optimizer(cfg)
    if cfg.method in ("ensemble", "depth_ensemble"):
        kind = "standard" if cfg.method == "ensemble" else "depth"
        ens, records = train_ensemble(
            kind, cfg.ensemble_size, arch, ds, opt, cfg.epochs, seed,
            batch_size=cfg.batch_size, depth_min=cfg.ensemble_depth_min,
        )
        return ens, records[0], lambda x: ensemble_predict(ens, x)
    model = build_dun(arch, seed)
    if cfg.method == "dun_vi":
        model, record = train_dun_vi(
            model, ds, opt, cfg.epochs, batch_size=cfg.batch_size,
            q_freeze_epochs=cfg.q_freeze_epochs, seed=seed,
        )
    elif cfg.method == "dun_mll":
        model, record = train_dun_mll(model, ds, opt, cfg.epochs, batch_size=cfg.batch_size, seed=seed)
    else:  # vanilla, dropout
        model, record = train_vanilla(model, ds, opt, cfg.epochs, batch_size=cfg.batch_size, seed=seed)
    return model, record, _model_predictor(model, cfg.mc_samples)


def _model_predictor(model: DunModel, mc_samples: int):
    if model.config.dropout_p > 0.0:
        return lambda x: dropout_predict_mc(model, x, mc_samples, seed=model.seed)
    return lambda x: predict_marginal(model, x)


def cmd_train(args) -> int:
    cfg = parse_config(args.config)
    _override(cfg, args)
    ds = build_dataset(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    zero_wall = args.threads == 1
    for seed in cfg.seeds:
        artifact, record, predict = _train_one(cfg, ds, seed)
        write_trace(out / f"trace_{seed}.csv", record, zero_wall=zero_wall)
        if hasattr(artifact, "members"):
            save_ensemble(artifact, out / f"model_{seed}.ckpt")
        else:
            save_checkpoint(artifact, out / f"model_{seed}.ckpt")
        report = evaluate_model(predict, ds, cfg.method, cfg.dataset, seed)
        write_report(out / f"report_{seed}.csv", [report])
    return 0


def cmd_compare_objectives(args) -> int:
    cfg = parse_config(args.config)
    _override(cfg, args)
    ds = build_dataset(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    zero_wall = args.threads == 1
    arch = architecture(cfg, ds)
    for seed in cfg.seeds:
        base = build_dun(arch, seed)
        mll_model, mll_rec = train_dun_mll(base.copy(), ds, _optimizer(cfg), cfg.epochs, cfg.batch_size, seed)
        vi_model, vi_rec = train_dun_vi(
            base.copy(), ds, _optimizer(cfg), cfg.epochs, cfg.batch_size, cfg.q_freeze_epochs, seed
        )
        write_trace(out / f"trace_mll_{seed}.csv", mll_rec, zero_wall=zero_wall)
        write_trace(out / f"trace_vi_{seed}.csv", vi_rec, zero_wall=zero_wall)
        _write_combined(out / f"combined_trace_{seed}.csv", mll_rec, vi_rec, zero_wall)
        (out / f"compare_{seed}.svg").write_text(_compare_svg(mll_rec, vi_rec))
        save_checkpoint(mll_model, out / f"model_mll_{seed}.ckpt")
        save_checkpoint(vi_model, out / f"model_vi_{seed}.ckpt")
    return 0


def _write_combined(path, mll_rec, vi_rec, zero_wall: bool) -> None:
    import csv as _csv

    n_depths = len(mll_rec.rows[0].q)
    header = ["run", "epoch", "mll", "elbo", "loss"] + [f"q{i}" for i in range(n_depths)] + ["wall_s"]
    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(header)
        for name, rec in (("mll", mll_rec), ("vi", vi_rec)):
            for row in rec.rows:
                wall = 0.0 if zero_wall else row.wall_s
                writer.writerow(
                    [name, row.epoch, format(row.mll, ".17g"), format(row.elbo, ".17g"), format(row.loss, ".17g")]
                    + [format(v, ".17g") for v in row.q]
                    + [format(wall, ".17g")]
                )


def _posterior_panel(title: str, rec) -> Panel:
    epochs = rec.column("epoch")
    qs = np.stack([row.q for row in rec.rows])
    series = [Series(epochs, qs[:, d], label=f"d={d}") for d in range(qs.shape[1])]
    return Panel(title, series, x_label="epoch")


def _compare_svg(mll_rec, vi_rec) -> str:
    epochs_m = mll_rec.column("epoch")
    epochs_v = vi_rec.column("epoch")
    panels = [
        Panel("marginal log-lik training", [Series(epochs_m, mll_rec.column("mll"), label="MLL")], x_label="epoch"),
        Panel(
            "variational training",
            [Series(epochs_v, vi_rec.column("mll"), label="MLL"), Series(epochs_v, vi_rec.column("elbo"), label="ELBO")],
            x_label="epoch",
        ),
        _posterior_panel("exact posterior (MLL run)", mll_rec),
        _posterior_panel("variational posterior (VI run)", vi_rec),
    ]
    return render_grid(panels, cols=2)


def cmd_sweep_depth(args) -> int:
    cfg = parse_config(args.config)
    _override(cfg, args)
    if cfg.depth_max < cfg.depth_min:
        raise ConfigError(f"{args.config}: depth_max must be >= depth_min")
    ds = build_dataset(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg.seeds[0]
    rows = []
    for depth in range(cfg.depth_min, cfg.depth_max + 1):
        model = build_dun(architecture(cfg, ds, max_depth=depth), seed)
        model, _ = train_vanilla(model, ds, _optimizer(cfg), cfg.epochs, cfg.batch_size, seed)
        report = evaluate_model(_model_predictor(model, cfg.mc_samples), ds, "vanilla", cfg.dataset, seed)
        write_report(out / f"report_ddn_{depth}.csv", [report])
        err = report.err if ds.task == CLASSIFICATION else report.rmse
        rows.append((depth, report.ll, err))

    dun_model = build_dun(architecture(cfg, ds), seed)
    dun_model, _ = train_dun_vi(dun_model, ds, _optimizer(cfg), cfg.epochs, cfg.batch_size, cfg.q_freeze_epochs, seed)
    dun_report = evaluate_model(_model_predictor(dun_model, cfg.mc_samples), ds, "dun_vi", cfg.dataset, seed)
    write_report(out / "report_dun.csv", [dun_report])
    save_checkpoint(dun_model, out / "model_dun.ckpt")

    with open(out / "sweep.csv", "w", newline="") as fh:
        fh.write("depth,test_ll,test_err\n")
        for depth, ll, err in rows:
            fh.write(f"{depth},{format(ll, '.17g')},{format(err, '.17g')}\n")
    q = dun_model.q().probs
    with open(out / "dun_posterior.csv", "w", newline="") as fh:
        fh.write("depth,q\n")
        for d, p in enumerate(q):
            fh.write(f"{d},{format(p, '.17g')}\n")
    with open(out / "dopt.csv", "w", newline="") as fh:
        fh.write("strategy,depth\n")
        for kind in ("argmax", "percentile95", "expected"):
            fh.write(f"{kind},{select_depth(dun_model.q(), PruneStrategy(kind))}\n")
    depths = np.array([r[0] for r in rows], dtype=float)
    panels = [
        Panel("depth posterior (DUN)", [Series(np.arange(len(q), dtype=float), q, kind="bar")], x_label="depth"),
        Panel("fixed-depth test LL", [Series(depths, np.array([r[1] for r in rows]))], x_label="depth"),
    ]
    (out / "sweep.svg").write_text(render_grid(panels, cols=2))
    return 0


def cmd_eval(args) -> int:
    path = Path(args.checkpoint)
    if not path.exists():
        raise ConfigError(f"checkpoint {path} does not exist")
    cfg = _eval_config(args)
    ds = build_dataset(cfg)
    if path.is_dir():
        ens = load_ensemble(path)
        if args.prune or args.exact_posterior:
            raise ConfigError("--prune / --exact-posterior apply to single-model checkpoints")
        if ens.members[0].config.input_dim != ds.input_dim:
            raise ConfigError(
                f"input dim mismatch: checkpoint {ens.members[0].config.input_dim}, dataset {ds.input_dim}"
            )
        predict = lambda x: ensemble_predict(ens, x)  # noqa: E731
        seed = ens.seeds[0]
        label = args.method_label or ens.kind + "_ensemble"
    else:
        model = load_checkpoint(path)
        if model.config.input_dim != ds.input_dim:
            raise ConfigError(f"input dim mismatch: checkpoint {model.config.input_dim}, dataset {ds.input_dim}")
        weights = model.q()
        if args.exact_posterior:
            x_train, y_train = ds.train()
            weights = compute_exact_posterior(
                model, x_train, y_train, bn_mode="train" if args.bn_train else "eval"
            )
        if args.prune:
            strategy = PruneStrategy(args.prune)
            d_opt = select_depth(weights, strategy)
            predict = lambda x: predict_truncated(model, x, d_opt, weights=weights)  # noqa: E731
        elif model.config.dropout_p > 0.0:
            predict = _model_predictor(model, args.mc_samples)
        else:
            predict = lambda x: predict_marginal(model, x, weights=weights)  # noqa: E731
        seed = model.seed
        label = args.method_label or "eval"
    report = evaluate_model(predict, ds, label, cfg.dataset, seed)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    write_report(out / args.report_name, [report])
    return 0


def _eval_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig(
        dataset=args.dataset,
        n=args.n,
        data_seed=args.data_seed,
        csv_path=args.csv_path or "",
        target_col=args.target_col,
        has_header=not args.no_header,
        normalize=args.normalize,
        split=args.split,
        test_fraction=args.test_fraction,
        gap_feature=args.gap_feature,
        split_seed=args.split_seed,
    )
    if cfg.dataset == "csv" and not Path(cfg.csv_path).exists():
        raise ConfigError(f"csv_path {cfg.csv_path!r} does not exist")
    return cfg


def cmd_gen_data(args) -> int:
    ds = generate_toy(args.name, args.n, args.seed)
    out = Path(args.path) if args.path else Path(args.out or ".") / f"{args.name}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(ds, out)
    return 0


def _override(cfg: ExperimentConfig, args) -> None:
    if args.out:
        cfg.out_dir = args.out
    if args.seed_override is not None:
        cfg.seeds = [args.seed_override]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dun", description="Depth-uncertainty network experiments")
    parser.add_argument("--threads", type=int, default=None, help="BLAS thread cap (DUN_THREADS as fallback)")
    parser.add_argument("--seed-override", type=int, default=None, help="replace the config's seed list")
    parser.add_argument("--out", type=str, default=None, help="override the output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one training per seed")
    p_train.add_argument("config")
    p_train.set_defaults(func=cmd_train)

    p_cmp = sub.add_parser("compare-objectives", help="paired MLL vs VI trainings from one init")
    p_cmp.add_argument("config")
    p_cmp.set_defaults(func=cmd_compare_objectives)

    p_sweep = sub.add_parser("sweep-depth", help="fixed-depth sweep plus one DUN")
    p_sweep.add_argument("config")
    p_sweep.set_defaults(func=cmd_sweep_depth)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p_eval.add_argument("checkpoint")
    p_eval.add_argument("--dataset", default="wiggle")
    p_eval.add_argument("--n", type=int, default=300)
    p_eval.add_argument("--data-seed", type=int, default=0)
    p_eval.add_argument("--csv-path", default=None)
    p_eval.add_argument("--target-col", type=int, default=-1)
    p_eval.add_argument("--no-header", action="store_true")
    p_eval.add_argument("--normalize", action="store_true")
    p_eval.add_argument("--split", default="none", choices=["none", "standard", "gap"])
    p_eval.add_argument("--test-fraction", type=float, default=0.1)
    p_eval.add_argument("--gap-feature", type=int, default=0)
    p_eval.add_argument("--split-seed", type=int, default=0)
    p_eval.add_argument("--exact-posterior", action="store_true", help="recompute depth weights on the train set")
    p_eval.add_argument("--bn-train", action="store_true", help="batch statistics for --exact-posterior")
    p_eval.add_argument("--prune", default=None, choices=["argmax", "percentile95", "expected"])
    p_eval.add_argument("--mc-samples", type=int, default=100)
    p_eval.add_argument("--method-label", default=None)
    p_eval.add_argument("--report-name", default="report_eval.csv")
    p_eval.set_defaults(func=cmd_eval)

    p_gen = sub.add_parser("gen-data", help="write a toy dataset as CSV")
    p_gen.add_argument("--name", required=True)
    p_gen.add_argument("--n", type=int, required=True)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--path", default=None, help="output file (default <name>.csv in --out)")
    p_gen.set_defaults(func=cmd_gen_data)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.threads = _apply_threads(args.threads)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
