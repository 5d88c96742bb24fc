"""Iterative missing-value imputation with a trained model.

Starting from random fill-ins, each round encodes the current image, samples a
latent code, decodes it, and overwrites only the missing pixels with the
decoder's Bernoulli means. Observed pixels are never touched.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mathcore import RngStream, sigmoid
from .networks import decoder_forward, encoder_forward
from .trainer import predict_labels
from .variational import reparam_sample

INIT_KINDS = ("uniform01", "gaussian")


@dataclass
class ImputationTrace:
    iterates: np.ndarray  # (T+1, D)
    mask: np.ndarray  # (D,) bool
    mse_per_iter: np.ndarray  # (T+1,), missing pixels only
    mse_whole_per_iter: np.ndarray  # (T+1,), all pixels

    @property
    def final(self):
        return self.iterates[-1]


def impute_mse(x_true, x_imputed, mask):
    """Mean squared error over the missing pixels only."""
    x_true = np.asarray(x_true, dtype=np.float64)
    x_imputed = np.asarray(x_imputed, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if x_true.shape != x_imputed.shape or x_true.shape != mask.shape:
        raise ValueError(f"shape mismatch: {x_true.shape}, {x_imputed.shape}, {mask.shape}")
    if not mask.any():
        raise ValueError("no missing pixels to score")
    d = (x_true - x_imputed)[mask]
    return float(np.mean(d * d))


def _init_fill(rng: RngStream, shape, init):
    if init == "uniform01":
        return rng.uniform(shape)
    if init == "gaussian":
        return rng.normal(shape)
    raise ValueError(f"init must be one of {INIT_KINDS}")


def _check_masks(masks):
    if np.any(masks.all(axis=1)):
        raise ValueError("every pixel is missing; imputation needs at least one observed pixel")


def impute_batch(state, x_true, masks, T, rng: RngStream, init="uniform01", mode="sample", keep_iterates=False):
    """Vectorised imputation of ``n`` images.

    Image ``i`` uses the sub-stream ``rng.child(i)``, so the result for a row
    matches :func:`impute` called on that row alone with ``rng.child(i)`` (to
    rounding: BLAS may order sums differently for different batch sizes).
    Returns ``(final, mse, mse_whole, iterates)``; the MSE arrays are
    ``(T+1, n)`` (NaN in ``mse`` for rows with nothing missing) and
    ``iterates`` is ``None`` unless requested.
    """
    n = np.atleast_2d(x_true).shape[0]
    return _impute_rows(state, x_true, masks, T, [rng.child(i) for i in range(n)], init, mode, keep_iterates)


def _impute_rows(state, x_true, masks, T, row_rngs, init, mode, keep_iterates):
    if T < 1:
        raise ValueError("T must be >= 1")
    if mode not in ("sample", "mean"):
        raise ValueError("mode must be 'sample' or 'mean'")
    x_true = np.atleast_2d(np.asarray(x_true, dtype=np.float64))
    masks = np.asarray(masks, dtype=bool)
    if masks.ndim == 1:
        masks = np.broadcast_to(masks, x_true.shape)
    if masks.shape != x_true.shape:
        raise ValueError(f"mask shape {masks.shape} != image shape {x_true.shape}")
    _check_masks(masks)
    n, D = x_true.shape
    K = state.phi.latent_dim
    fills = np.stack([_init_fill(r.child(0), D, init) for r in row_rngs])
    eps = np.stack([r.child(1).normal((T, K)) for r in row_rngs]) if mode == "sample" else None
    x = np.where(masks, fills, x_true)
    n_missing = masks.sum(axis=1)

    def scores(cur):
        sq = (cur - x_true) ** 2
        with np.errstate(invalid="ignore", divide="ignore"):
            missing = np.where(n_missing > 0, (sq * masks).sum(axis=1) / n_missing, np.nan)
        return missing, sq.mean(axis=1)

    mse = np.empty((T + 1, n))
    mse_whole = np.empty((T + 1, n))
    mse[0], mse_whole[0] = scores(x)
    iterates = [x] if keep_iterates else None
    for t in range(T):
        post, _ = encoder_forward(state.phi, x)
        z = post.mu if mode == "mean" else reparam_sample(post, eps[:, t, :])
        logits, _ = decoder_forward(state.theta, z)
        x = np.where(masks, sigmoid(logits), x)
        mse[t + 1], mse_whole[t + 1] = scores(x)
        if keep_iterates:
            iterates.append(x)
    return x, mse, mse_whole, (np.stack(iterates) if keep_iterates else None)


def impute(state, x_true, mask, T, rng: RngStream, init="uniform01", mode="sample"):
    x_true = np.asarray(x_true, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if x_true.ndim != 1 or mask.shape != x_true.shape:
        raise ValueError("impute expects one flat image and a mask of the same length")
    _, mse, mse_whole, iterates = _impute_rows(state, x_true[None], mask[None], T, [rng], init, mode, True)
    missing = mse[:, 0] if mask.any() else np.zeros(T + 1)
    return ImputationTrace(iterates[:, 0, :], mask, missing, mse_whole[:, 0])


def classify_after_impute(state, dataset, masks, T=100, rng: RngStream | None = None, init="uniform01",
                          mode="sample"):
    """Error rate after imputing each image for ``T`` rounds."""
    rng = RngStream(state.seed, "impute") if rng is None else rng
    final, *_ = impute_batch(state, dataset.images, masks, T, rng, init, mode)
    return float(np.mean(predict_labels(state, final) != dataset.labels))


def classify_masked(state, dataset, masks, fill=0.0):
    """Error rate when missing pixels are simply set to ``fill`` (no imputation)."""
    masks = np.broadcast_to(np.asarray(masks, dtype=bool), dataset.images.shape)
    x = np.where(masks, fill, dataset.images)
    return float(np.mean(predict_labels(state, x) != dataset.labels))
