"""Command-line entry point.

Every config key is also a flag (``--C 10``, ``--hidden 64,64``). A config
file passed with ``--config`` is read first; flags override it and the
``MMDGM_SEED`` environment variable overrides both.

Exit codes: 0 success, 1 usage or config error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, checkpoint_load, checkpoint_save
from .config import ALL_KEYS, ConfigError, RunConfig, format_config, parse_config, require
from .dataset import (
    DataConsistencyError,
    DataFormatError,
    binarize,
    load_idx,
    make_mask,
    parse_mask_spec,
    synth_toy,
)
from .experiments import run_baseline, run_csweep, run_mmva
from .imputation import classify_after_impute, classify_masked, impute_batch
from .mathcore import RngStream
from .reporting import emit_metrics, write_csv, write_pgm_grid
from .trainer import TrainConfig, TrainingError, evaluate, generate, mean_bound

log = logging.getLogger("mmdgm")

COMMANDS = ("train", "eval", "generate", "impute", "baseline", "csweep")
CHECKPOINT_NAME = "model.ckpt"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="mmdgm", description="Max-margin deep generative models (MLP, numpy).")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", dest="_config_file", default=None, help="key = value config file")
        p.add_argument("-v", "--verbose", dest="_verbose", action="store_true")
        for key in ALL_KEYS:
            p.add_argument(f"--{key}", dest=key, default=argparse.SUPPRESS, metavar="VALUE")
    return parser


# ---------------------------------------------------------------- data

def load_data(cfg: RunConfig):
    """``(train, test)`` from IDX files or the synthetic toy generator."""
    seed = cfg.resolved_data_seed
    if cfg.train_images is not None:
        train = load_idx(cfg.train_images, cfg.train_labels, cfg.n_classes)
        test = load_idx(cfg.test_images, cfg.test_labels, train.n_classes) if cfg.test_images else None
    else:
        rng = RngStream(seed, "data")
        args = dict(n_classes=cfg.synth_classes, side=cfg.synth_side, noise=cfg.synth_noise, shift=cfg.synth_shift)
        train = synth_toy(rng.child(0), cfg.synth_per_class, **args)
        test = synth_toy(rng.child(1), cfg.synth_test_per_class, **args)
    brng = RngStream(seed, "binarize")
    train = binarize(train, brng.child(0), cfg.binarize)
    if test is not None:
        test = binarize(test, brng.child(1), cfg.binarize)
    return train, test


def _side(dataset):
    if dataset.side is not None:
        return dataset.side
    side = int(round(np.sqrt(dataset.dim)))
    if side * side != dataset.dim:
        raise DataConsistencyError(f"images of width {dataset.dim} are not square")
    return side


def _train_config_from_checkpoint(saved, cfg: RunConfig):
    if not saved:
        return cfg.train
    saved = {k: tuple(v) if isinstance(v, list) else v for k, v in saved.items()}
    return TrainConfig(**saved)


# ---------------------------------------------------------------- commands

def _write_run(out, cfg, state, train_cfg):
    emit_metrics(state.history, out / "metrics.csv")
    checkpoint_save(state, out / CHECKPOINT_NAME, train_cfg)


def cmd_train(cfg: RunConfig, out: Path):
    train_set, test_set = load_data(cfg)
    state = None
    if cfg.checkpoint is not None:
        state, _ = checkpoint_load(cfg.checkpoint)
        log.info("resuming from %s at epoch %d", cfg.checkpoint, state.epoch)
    eval_set = test_set if test_set is not None else train_set
    res = run_mmva(cfg.train, train_set, eval_set, state)
    _write_run(out, cfg, res.state, cfg.train)
    print(f"error_rate={res.test_error!r} lower_bound={res.lower_bound!r}")


def cmd_baseline(cfg: RunConfig, out: Path):
    train_set, test_set = load_data(cfg)
    eval_set = test_set if test_set is not None else train_set
    res = run_baseline(cfg.train, train_set, eval_set, cfg.pegasos)
    _write_run(out, cfg, res.state, replace(cfg.train, C=0.0))
    write_csv([{"error_rate": res.test_error, "lower_bound": res.lower_bound}], out / "result.csv",
              ("error_rate", "lower_bound"))
    print(f"error_rate={res.test_error!r} lower_bound={res.lower_bound!r}")


def cmd_csweep(cfg: RunConfig, out: Path):
    train_set, test_set = load_data(cfg)
    eval_set = test_set if test_set is not None else train_set
    columns = ("C", "error_rate", "lower_bound")

    def on_row(rows, res):
        c = rows[-1]["C"]
        if res is not None:
            cell = out / f"C_{c:g}"
            cell.mkdir(exist_ok=True)
            cell_cfg = replace(cfg, train=replace(cfg.train, C=c))
            (cell / "config.txt").write_text(format_config(cell_cfg))
            _write_run(cell, cell_cfg, res.state, cell_cfg.train)
        write_csv(rows, out / "csweep.csv", columns)

    rows = run_csweep(cfg.train, cfg.c_values, train_set, eval_set, cfg.pegasos, on_row)
    for row in rows:
        print(f"C={row['C']:g} error_rate={row['error_rate']!r} lower_bound={row['lower_bound']!r}")
    failed = [r for r in rows if "error" in r]
    if failed:
        raise TrainingError(f"{len(failed)} csweep cell(s) failed: " + "; ".join(r["error"] for r in failed))


def _load_checkpoint(cfg):
    require(cfg, "checkpoint")
    state, saved = checkpoint_load(cfg.checkpoint)
    return state, _train_config_from_checkpoint(saved, cfg)


def cmd_eval(cfg: RunConfig, out: Path):
    state, train_cfg = _load_checkpoint(cfg)
    train_set, test_set = load_data(cfg)
    data = test_set if test_set is not None else train_set
    err = evaluate(state, data)
    lb = -mean_bound(state, data, train_cfg)
    write_csv([{"error_rate": err, "lower_bound": lb}], out / "eval.csv", ("error_rate", "lower_bound"))
    print(f"error_rate={err!r} lower_bound={lb!r}")


def cmd_generate(cfg: RunConfig, out: Path):
    state, _ = _load_checkpoint(cfg)
    side = int(round(np.sqrt(state.theta.data_dim)))
    if side * side != state.theta.data_dim:
        raise DataConsistencyError(f"decoder output width {state.theta.data_dim} is not square")
    samples = generate(state, cfg.n_samples, RngStream(cfg.seed, "generate"))
    write_pgm_grid(samples, side, cfg.cols, out / "samples.pgm")
    print(f"wrote {cfg.n_samples} samples to {out / 'samples.pgm'}")


def cmd_impute(cfg: RunConfig, out: Path):
    state, _ = _load_checkpoint(cfg)
    train_set, test_set = load_data(cfg)
    data = test_set if test_set is not None else train_set
    data = data.subset(np.arange(min(cfg.n_impute, data.n)))
    side = _side(data)
    try:
        spec = parse_mask_spec(cfg.mask)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    mask_rng = RngStream(cfg.seed, "mask")
    masks = np.stack([make_mask(side=side, rng=mask_rng.child(i), **spec) for i in range(data.n)])
    rng = RngStream(cfg.seed, "impute")
    final, mse, mse_whole, _ = impute_batch(state, data.images, masks, cfg.T, rng, cfg.impute_init,
                                            cfg.impute_mode)
    rows = [
        {"t": t, "median_mse": float(np.nanmedian(mse[t])), "mean_mse": float(np.nanmean(mse[t])),
         "mean_mse_whole": float(np.mean(mse_whole[t]))}
        for t in range(cfg.T + 1)
    ]
    write_csv(rows, out / "impute_mse.csv", ("t", "median_mse", "mean_mse", "mean_mse_whole"))
    k = min(data.n, cfg.cols)
    shown = np.concatenate([data.images[:k], np.where(masks[:k], 0.0, data.images[:k]), final[:k]])
    write_pgm_grid(shown, side, k, out / "impute.pgm")
    err_imputed = classify_after_impute(state, data, masks, cfg.T, rng, cfg.impute_init, cfg.impute_mode)
    err_masked = classify_masked(state, data, masks)
    write_csv([{"error_imputed": err_imputed, "error_masked": err_masked}], out / "impute_error.csv",
              ("error_imputed", "error_masked"))
    print(f"mse_t0={rows[0]['median_mse']!r} mse_T={rows[-1]['median_mse']!r} "
          f"error_imputed={err_imputed!r} error_masked={err_masked!r}")


HANDLERS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "generate": cmd_generate,
    "impute": cmd_impute,
    "baseline": cmd_baseline,
    "csweep": cmd_csweep,
}
NEEDS_CHECKPOINT = ("eval", "generate", "impute")


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        overrides = {k: v for k, v in vars(args).items() if not k.startswith("_") and k != "command"}
        text = ""
        if args._config_file is not None:
            try:
                text = Path(args._config_file).read_text()
            except OSError as exc:
                raise ConfigError(f"cannot read config file {args._config_file}: {exc.strerror}") from None
        cfg = parse_config(text, overrides)
        if args.command in NEEDS_CHECKPOINT:
            require(cfg, "checkpoint")
        if args.command == "csweep" and list(cfg.c_values) != sorted(cfg.c_values):
            raise ConfigError("c_values must be sorted ascending")
    except (UsageError, ConfigError) as exc:
        print(f"mmdgm: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args._verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(f"# command: {args.command}\n" + format_config(cfg))
        HANDLERS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"mmdgm: error: {exc}", file=sys.stderr)
        return 1
    except (TrainingError, CheckpointError, DataFormatError, DataConsistencyError, OSError, ValueError) as exc:
        print(f"mmdgm: {args.command} failed: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
