"""Monte Carlo estimates of the per-sample variational bound and its gradients.

The bound is reported as an upper bound on the negative log-likelihood,
``KL(q || N(0, I)) - E_q[log p(x | z)]``, with the KL term in closed form and
the reconstruction term averaged over ``L`` reparameterised samples.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mathcore import RngStream, sigmoid
from .maxmargin import loss_augmented_predict
from .networks import (
    GaussianPosterior,
    bernoulli_loglik,
    decoder_backward,
    decoder_forward,
    encoder_backward,
    encoder_forward,
)

LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class BoundEstimate:
    value: np.ndarray | float
    kl_part: np.ndarray | float
    recon_part: np.ndarray | float
    samples_used: int


def reparam_sample(post: GaussianPosterior, eps):
    """``z = mu + sigma * eps``; ``eps`` may carry an extra sample axis before K."""
    eps = np.asarray(eps, dtype=np.float64)
    mu, std = post.mu, post.std
    if eps.ndim == mu.ndim + 1:
        mu, std = mu[..., None, :], std[..., None, :]
    return mu + std * eps


def kl_standard_gaussian(post: GaussianPosterior):
    lv = post.log_var
    return 0.5 * np.sum(post.mu ** 2 + np.exp(lv) - 1.0 - lv, axis=-1)


def kl_standard_gaussian_grad(post: GaussianPosterior):
    """(d KL / d mu, d KL / d log_var)."""
    return post.mu.copy(), 0.5 * (np.exp(post.log_var) - 1.0)


def log_normal(z, mu, log_var):
    return -0.5 * np.sum(LOG_2PI + log_var + (z - mu) ** 2 / np.exp(log_var), axis=-1)


def _as_batch(x, eps):
    x = np.asarray(x, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
        if eps.ndim == 2:
            eps = eps[None]
    if eps.ndim == 2:  # (n, K) -> one sample per row
        eps = eps[:, None, :]
    return x, eps, single


@dataclass
class BoundPass:
    """Everything a forward evaluation of the bound leaves behind for backprop."""

    x: np.ndarray
    eps: np.ndarray  # (n, L, K)
    post: GaussianPosterior
    enc_cache: object
    z: np.ndarray  # (n, L, K)
    logits: np.ndarray  # (n*L, D)
    dec_cache: object
    recon: np.ndarray  # (n,) MC mean log-likelihood
    kl: np.ndarray  # (n,)

    @property
    def value(self):
        return self.kl - self.recon


def bound_forward(theta, phi, x, eps):
    x, eps, _ = _as_batch(x, eps)
    post, enc_cache = encoder_forward(phi, x)
    z = reparam_sample(post, eps)
    n, L, K = z.shape
    logits, dec_cache = decoder_forward(theta, z.reshape(n * L, K))
    recon = bernoulli_loglik(np.repeat(x, L, axis=0), logits).reshape(n, L).mean(axis=1)
    return BoundPass(x, eps, post, enc_cache, z, logits, dec_cache, recon, kl_standard_gaussian(post))


def bound_backward(theta, bp: BoundPass, weights=None):
    """Gradient of ``sum_n weights[n] * bound_n``.

    Returns ``(g_theta, d_mu, d_log_var)``: decoder parameter gradients plus the
    upstream gradients on the posterior parameters, left for the caller to
    push through the encoder (possibly together with other terms).
    """
    n, L, K = bp.z.shape
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    x_rep = np.repeat(bp.x, L, axis=0)
    row_w = np.repeat(w / L, L)[:, None]
    d_logits = (sigmoid(bp.logits) - x_rep) * row_w
    g_theta, d_z = decoder_backward(theta, bp.dec_cache, d_logits)
    d_z = d_z.reshape(n, L, K)
    kl_mu, kl_lv = kl_standard_gaussian_grad(bp.post)
    d_mu = d_z.sum(axis=1) + w[:, None] * kl_mu
    d_lv = 0.5 * bp.post.std * (d_z * bp.eps).sum(axis=1) + w[:, None] * kl_lv
    return g_theta, d_mu, d_lv


def bound_terms(theta, phi, x, eps):
    bp = bound_forward(theta, phi, x, eps)
    return BoundEstimate(bp.value, bp.kl, bp.recon, bp.eps.shape[1])


def bound_estimate(theta, phi, x, L, rng: RngStream):
    """Per-sample bound with ``L`` fresh samples per row from ``rng``."""
    if L < 1:
        raise ValueError("L must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    n = 1 if single else x.shape[0]
    eps = rng.normal((n, L, phi.latent_dim))
    est = bound_terms(theta, phi, x.reshape(n, -1), eps)
    if single:
        return BoundEstimate(float(est.value[0]), float(est.kl_part[0]), float(est.recon_part[0]), L)
    return est


def bound_gradients(theta, phi, x, eps_batch):
    """Pathwise gradients of the (summed) bound wrt decoder and encoder params.

    ``eps_batch`` is ``(L, K)`` for a single image or ``(n, L, K)`` for a batch.
    """
    bp = bound_forward(theta, phi, x, eps_batch)
    g_theta, d_mu, d_lv = bound_backward(theta, bp)
    g_phi = encoder_backward(phi, bp.enc_cache, d_mu, d_lv)
    return g_theta, g_phi


def pathwise_head_terms(theta, phi, x, eps):
    """Per-sample pathwise gradients wrt (mu, log_var) for one image.

    Returns two ``(L, K)`` arrays whose row means are what
    :func:`bound_gradients` pushes into the encoder heads.
    """
    bp = bound_forward(theta, phi, x, eps)
    _, L, K = bp.z.shape
    d_logits = sigmoid(bp.logits) - np.repeat(bp.x, L, axis=0)
    _, d_z = decoder_backward(theta, bp.dec_cache, d_logits)
    kl_mu, kl_lv = kl_standard_gaussian_grad(bp.post)
    a = d_z + kl_mu
    b = 0.5 * bp.post.std * d_z * bp.eps[0] + kl_lv
    return a, b


def score_function_head_terms(theta, phi, lam, C, x, y, z_batch):
    """Per-sample score-function terms wrt (mu, log_var) for one image.

    Each sample contributes ``[log q - log p(x, z) - C * margin(z)] * grad log q``
    where ``margin(z) = (lam[y] - lam[y_tilde]) . z``; this is the gradient of
    ``bound + C * hinge`` (the quantity being minimised). ``y_tilde`` is the
    loss-augmented label under the sample-averaged features.
    """
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    z = np.asarray(z_batch, dtype=np.float64)
    post, _ = encoder_forward(phi, x)
    mu, lv = post.mu[0], post.log_var[0]
    var = np.exp(lv)
    logits, _ = decoder_forward(theta, z)
    log_p = log_normal(z, 0.0, np.zeros_like(mu)) + bernoulli_loglik(np.repeat(x, len(z), axis=0), logits)
    log_q = log_normal(z, mu, lv)
    bracket = log_q - log_p
    if C != 0.0 and lam is not None:
        y_tilde = loss_augmented_predict(lam, z.mean(axis=0), y)
        bracket = bracket - C * (z @ (lam[y] - lam[y_tilde]))
    diff = z - mu
    a = bracket[:, None] * diff / var
    b = bracket[:, None] * 0.5 * (diff ** 2 / var - 1.0)
    return a, b


def score_function_grad_phi(theta, phi, lam, C, x, y, z_batch):
    """Score-function (likelihood-ratio) estimate of the encoder gradient.

    Serves as an independent check on the pathwise estimator; the training
    loop never calls it.
    """
    a, b = score_function_head_terms(theta, phi, lam, C, x, y, z_batch)
    _, enc_cache = encoder_forward(phi, np.asarray(x, dtype=np.float64).reshape(1, -1))
    return encoder_backward(phi, enc_cache, a.mean(axis=0, keepdims=True), b.mean(axis=0, keepdims=True))
