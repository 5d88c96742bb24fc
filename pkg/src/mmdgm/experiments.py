"""Experiment drivers shared by the command line and the acceptance suite."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .maxmargin import pegasos_train
from .mathcore import RngStream
from .trainer import TrainConfig, TrainingError, evaluate, features, mean_bound, train

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PegasosConfig:
    reg: float = 1e-4
    iters: int = 200_000
    batch: int = 100


@dataclass
class RunResult:
    state: object
    test_error: float
    lower_bound: float  # minus the mean per-sample bound, on the evaluation set


def fit_pegasos(state, dataset, peg: PegasosConfig, seed):
    feats = features(state, dataset.images)
    return pegasos_train(feats, dataset.labels, peg.reg, peg.iters, peg.batch, RngStream(seed, "pegasos"),
                         dataset.n_classes)


def run_mmva(config: TrainConfig, train_set, test_set, state=None, on_epoch=None):
    state = train(config, train_set, state, on_epoch)
    return RunResult(state, evaluate(state, test_set), -mean_bound(state, test_set, config))


def run_baseline(config: TrainConfig, train_set, test_set, peg: PegasosConfig = PegasosConfig(), on_epoch=None):
    """Two-stage baseline: an unsupervised VAE (C = 0) for the same number of
    epochs, then a linear SVM fitted with Pegasos on its features."""
    va_config = replace(config, C=0.0)
    state = train(va_config, train_set, on_epoch=on_epoch)
    lam = fit_pegasos(state, train_set, peg, config.seed)
    state.cls = replace(state.cls, lam=lam)
    return RunResult(state, evaluate(state, test_set), -mean_bound(state, test_set, va_config))


def run_csweep(config: TrainConfig, values_of_C, train_set, test_set, peg: PegasosConfig = PegasosConfig(),
               on_row=None):
    """Train one model per C (same seeds). ``C = 0`` rows use the Pegasos
    classifier, since a C = 0 model has no trained max-margin weights.

    ``on_row(rows, result)`` is called after every cell; ``result`` is the
    :class:`RunResult` or ``None`` when the cell failed.
    """
    values = [float(c) for c in values_of_C]
    if values != sorted(values):
        raise ValueError("C values must be sorted ascending")
    rows = []
    for c in values:
        res = None
        try:
            if c == 0.0:
                res = run_baseline(config, train_set, test_set, peg)
            else:
                res = run_mmva(replace(config, C=c), train_set, test_set)
            row = {"C": c, "error_rate": res.test_error, "lower_bound": res.lower_bound}
        except TrainingError as exc:
            log.error("C=%g failed: %s", c, exc)
            row = {"C": c, "error_rate": float("nan"), "lower_bound": float("nan"), "error": str(exc)}
        rows.append(row)
        if on_row is not None:
            on_row(rows, res)
    return rows


def masked_mse_summary(mse):
    """Median over images at each iteration (NaN rows ignored)."""
    return np.nanmedian(mse, axis=1)
