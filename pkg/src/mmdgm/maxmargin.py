"""Multiclass max-margin layer on top of latent features.

The weight matrix ``lam`` has one row per class; the score of class ``y`` is
``lam[y] . feat``, which equals ``lam.ravel() . feature_map(y, feat, M)``.
The margin loss is the 0/1 loss: 1 for any wrong label, 0 for the true one.

All functions accept a single feature vector ``(d,)`` or a batch ``(n, d)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .mathcore import RngStream
from .networks import encoder_forward, encoder_hidden

FEATURE_MODES = ("mean_z", "concat_hidden")


@dataclass
class ClassifierState:
    lam: np.ndarray  # (M, d)
    prior_var: float = 1e3
    feature_mode: str = "mean_z"

    def __post_init__(self):
        if self.feature_mode not in FEATURE_MODES:
            raise ValueError(f"feature_mode must be one of {FEATURE_MODES}")

    @property
    def n_classes(self):
        return self.lam.shape[0]


@dataclass
class MarginLoss:
    value: np.ndarray | float
    violating_label: np.ndarray | int
    active: np.ndarray | bool


def _lam(cls):
    return cls.lam if isinstance(cls, ClassifierState) else np.asarray(cls, dtype=np.float64)


def _batch(feat, y=None):
    feat = np.asarray(feat, dtype=np.float64)
    single = feat.ndim == 1
    feat = np.atleast_2d(feat)
    if y is not None:
        y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    return feat, y, single


def feature_map(y, feat, n_classes):
    feat = np.asarray(feat, dtype=np.float64)
    if not 0 <= y < n_classes:
        raise ValueError(f"label {y} outside [0, {n_classes})")
    out = np.zeros((n_classes, feat.shape[-1]))
    out[y] = feat
    return out.ravel()


def scores(cls, feat):
    return np.atleast_2d(np.asarray(feat, dtype=np.float64)) @ _lam(cls).T


def predict(cls, feat):
    """``argmax_y lam[y] . feat``; the smallest label wins ties."""
    feat, _, single = _batch(feat)
    out = np.argmax(feat @ _lam(cls).T, axis=1)
    return int(out[0]) if single else out


def loss_augmented_predict(cls, feat, y_true):
    """``argmax_y [1{y != y_true} + lam[y] . feat]``.

    Ties go to ``y_true`` when it is among the maximisers (so a zero hinge
    always yields a zero subgradient), otherwise to the smallest label.
    """
    feat, y, single = _batch(feat, y_true)
    s = feat @ _lam(cls).T
    rows = np.arange(len(s))
    aug = s + 1.0
    aug[rows, y] -= 1.0
    best = np.argmax(aug, axis=1)
    best = np.where(aug[rows, y] >= aug[rows, best], y, best)
    return int(best[0]) if single else best


def hinge_loss(cls, feat, y_true):
    feat, y, single = _batch(feat, y_true)
    s = feat @ _lam(cls).T
    rows = np.arange(len(s))
    y_tilde = np.atleast_1d(loss_augmented_predict(cls, feat, y))
    value = (y_tilde != y) + s[rows, y_tilde] - s[rows, y]
    value = np.maximum(value, 0.0)
    if single:
        return MarginLoss(float(value[0]), int(y_tilde[0]), bool(y_tilde[0] != y[0]))
    return MarginLoss(value, y_tilde, y_tilde != y)


def hinge_subgrad(cls, feat, y_true):
    """Subgradient of the hinge wrt the weights and wrt the features.

    For a batch, ``g_lambda`` is summed over rows and ``g_feat`` is per row.
    """
    lam = _lam(cls)
    feat, y, single = _batch(feat, y_true)
    y_tilde = np.atleast_1d(loss_augmented_predict(lam, feat, y))
    active = y_tilde != y
    g_lambda = np.zeros_like(lam)
    np.add.at(g_lambda, y_tilde[active], feat[active])
    np.subtract.at(g_lambda, y[active], feat[active])
    g_feat = np.where(active[:, None], lam[y_tilde] - lam[y], 0.0)
    return g_lambda, (g_feat[0] if single else g_feat)


# ---------------------------------------------------------------- features

def features_from_encoder(post, enc_cache, mode):
    if mode == "mean_z":
        return post.mu
    if mode == "concat_hidden":
        return np.concatenate(encoder_hidden(enc_cache), axis=1)
    raise ValueError(f"unknown feature mode {mode!r}")


def feature_backward(mode, g_feat, enc_cache):
    """Split a feature gradient into (d_mu, per-trunk-layer gradients)."""
    if mode == "mean_z":
        return g_feat, None
    hidden = encoder_hidden(enc_cache)
    parts, start = [], 0
    for h in hidden:
        parts.append(g_feat[:, start:start + h.shape[1]])
        start += h.shape[1]
    return np.zeros((g_feat.shape[0], enc_cache.weights[0].shape[0])), parts


def feature_dim(phi, mode):
    if mode == "mean_z":
        return phi.latent_dim
    return sum(phi.trunk.widths)


def extract_features(phi, x, mode="mean_z"):
    post, cache = encoder_forward(phi, x)
    feat = features_from_encoder(post, cache, mode)
    return feat[0] if np.asarray(x).ndim == 1 else feat


# ---------------------------------------------------------------- Pegasos baseline

def pegasos_objective(lam, features, labels, reg):
    """``reg/2 ||lam||^2 + mean hinge``."""
    h = hinge_loss(lam, features, labels).value
    return 0.5 * reg * float(np.sum(lam * lam)) + float(np.mean(h))


def pegasos_train(features, labels, reg, iters, batch, rng: RngStream, n_classes=None):
    """Multiclass Pegasos with 1/(reg*t) steps and projection onto the
    ``||lam|| <= 1/sqrt(reg)`` ball. Batches are drawn with replacement."""
    if reg <= 0:
        raise ValueError("reg must be positive")
    features = np.ascontiguousarray(features, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    if n_classes is None:
        n_classes = int(labels.max()) + 1
    return kernels.pegasos(features, labels, int(n_classes), float(reg), int(iters), int(batch), np.uint64(rng.key))
