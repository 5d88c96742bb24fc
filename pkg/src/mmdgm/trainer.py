"""Joint training of the variational autoencoder and the max-margin classifier.

One step of the doubly stochastic subgradient method:

1. take the next mini-batch of ``m`` rows from a per-epoch permutation;
2. draw ``eps ~ N(0, I)`` for ``L`` latent samples per row;
3. evaluate ``(N/m) sum bound + ||lam||^2 / (2 sigma2) + (N C / m) sum hinge``
   and its subgradient over (decoder, encoder, classifier);
4. apply one AdaM update per parameter group.

The first ``pretrain_epochs`` epochs run with ``C = 0`` (plain VAE).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import minibatch_iter
from .mathcore import RngStream, sigmoid
from .maxmargin import (
    FEATURE_MODES,
    ClassifierState,
    feature_backward,
    feature_dim,
    features_from_encoder,
    hinge_loss,
    hinge_subgrad,
    predict,
)
from .networks import (
    decoder_forward,
    encoder_backward,
    encoder_forward,
    init_decoder,
    init_encoder,
    prefixed,
)
from .optimizer import AdamState, LrSchedule, adam_step, scheduled_lr
from .variational import bound_backward, bound_forward

log = logging.getLogger(__name__)

GROUPS = ("theta", "phi", "lambda")
_TINY = np.finfo(np.float64).tiny
_EPS53 = 2.0 ** -53


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    C: float = 15.0
    sigma2_eta: float = 1e3
    L: int = 1
    m: int = 100
    epochs: int = 100
    pretrain_epochs: int = 10
    base_lr: float = 3e-4
    decay_factor: float = 3.0
    decay_every: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    feature_mode: str = "mean_z"
    latent_dim: int = 50
    hidden: tuple = (500, 500)
    activation: str = "softplus"
    seed: int = 0
    eval_samples: int = 1
    update_groups: tuple = GROUPS

    def __post_init__(self):
        if self.C < 0:
            raise ValueError("C must be >= 0")
        if self.L < 1:
            raise ValueError("L must be >= 1")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.sigma2_eta <= 0:
            raise ValueError("sigma2_eta must be > 0")
        if self.feature_mode not in FEATURE_MODES:
            raise ValueError(f"feature_mode must be one of {FEATURE_MODES}")
        if self.epochs < 0 or self.pretrain_epochs < 0:
            raise ValueError("epoch counts must be >= 0")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "update_groups", tuple(self.update_groups))
        bad = set(self.update_groups) - set(GROUPS)
        if bad:
            raise ValueError(f"unknown parameter groups {sorted(bad)}")

    @property
    def total_epochs(self):
        return self.pretrain_epochs + self.epochs

    @property
    def schedule(self):
        return LrSchedule(self.base_lr, self.decay_factor, self.decay_every)

    def rng(self, stream):
        return RngStream(self.seed, stream)


@dataclass
class ModelState:
    theta: object  # DecoderParams; the N(0, I) prior has no parameters
    phi: object  # EncoderParams
    cls: ClassifierState
    adam: dict  # group -> AdamState
    epoch: int = 0
    seed: int = 0
    history: list = field(default_factory=list)

    def group_params(self, group):
        if group == "theta":
            return self.theta.params()
        if group == "phi":
            return self.phi.params()
        if group == "lambda":
            return {"cls.lambda": self.cls.lam}
        raise KeyError(group)

    def with_group_params(self, group, values):
        if group == "theta":
            return replace(self, theta=self.theta.with_params(values))
        if group == "phi":
            return replace(self, phi=self.phi.with_params(values))
        if group == "lambda":
            return replace(self, cls=replace(self.cls, lam=values["cls.lambda"]))
        raise KeyError(group)

    def all_params(self):
        out = {}
        for g in GROUPS:
            out.update(self.group_params(g))
        return out


def init_model(config: TrainConfig, data_dim, n_classes):
    rng = config.rng("init")
    phi = init_encoder(rng.child(0), data_dim, config.hidden, config.latent_dim, config.activation)
    theta = init_decoder(rng.child(1), config.latent_dim, tuple(reversed(config.hidden)), data_dim, config.activation)
    lam = np.zeros((n_classes, feature_dim(phi, config.feature_mode)))
    cls = ClassifierState(lam, config.sigma2_eta, config.feature_mode)
    state = ModelState(theta, phi, cls, {}, 0, config.seed, [])
    hyper = dict(base_lr=config.base_lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps_adam)
    state.adam = {g: AdamState.for_params(state.group_params(g), **hyper) for g in GROUPS}
    return state


# ---------------------------------------------------------------- objective

@dataclass
class BatchResult:
    objective: float
    bound: np.ndarray  # per-sample bound
    hinge: np.ndarray  # per-sample hinge
    grads: dict | None  # group -> {name: array}


def _batch_pass(state: ModelState, x, y, config: TrainConfig, eps, n_total, C=None, need_grad=True):
    C = config.C if C is None else C
    lam = state.cls.lam
    m = x.shape[0]
    bp = bound_forward(state.theta, state.phi, x, eps)
    feat = features_from_encoder(bp.post, bp.enc_cache, state.cls.feature_mode)
    hinge = hinge_loss(lam, feat, y).value
    bound = bp.value
    scale = n_total / m
    objective = (
        scale * float(np.sum(bound))
        + float(np.sum(lam * lam)) / (2.0 * config.sigma2_eta)
        + scale * C * float(np.sum(hinge))
    )
    if not need_grad:
        return BatchResult(objective, bound, hinge, None)

    g_theta, d_mu, d_lv = bound_backward(state.theta, bp, np.full(m, scale))
    g_lam = lam / config.sigma2_eta
    d_hidden = None
    if C != 0.0:
        g_lam_h, g_feat = hinge_subgrad(lam, feat, y)
        g_lam = g_lam + scale * C * g_lam_h
        f_mu, d_hidden = feature_backward(state.cls.feature_mode, scale * C * g_feat, bp.enc_cache)
        d_mu = d_mu + f_mu
    g_phi = encoder_backward(state.phi, bp.enc_cache, d_mu, d_lv, d_hidden)
    grads = {
        "theta": prefixed(g_theta, "dec"),
        "phi": prefixed(g_phi, "enc"),
        "lambda": {"cls.lambda": g_lam},
    }
    return BatchResult(objective, bound, hinge, grads)


def _unpack(batch):
    if hasattr(batch, "images"):
        return batch.images, batch.labels
    return batch


def minibatch_objective(state, batch, config: TrainConfig, eps, n_total, C=None):
    """``(N/m) sum bound + ||lam||^2/(2 sigma2) + (N C/m) sum hinge`` on a batch.

    ``batch`` is a :class:`~mmdgm.dataset.MiniBatch` or an ``(images, labels)``
    pair; ``eps`` is ``(m, L, K)``.
    """
    x, y = _unpack(batch)
    return _batch_pass(state, x, y, config, eps, n_total, C, need_grad=False).objective


def minibatch_subgradient(state, batch, config: TrainConfig, eps, n_total, C=None):
    """Subgradient of :func:`minibatch_objective` as ``{group: {name: array}}``."""
    x, y = _unpack(batch)
    return _batch_pass(state, x, y, config, eps, n_total, C).grads


# ---------------------------------------------------------------- training loop

def _first_nonfinite(state, grads=None):
    for g in GROUPS:
        for name, arr in state.group_params(g).items():
            if not np.all(np.isfinite(arr)):
                return g, name, "parameter"
    if grads is not None:
        for g in GROUPS:
            for name, arr in grads[g].items():
                if not np.all(np.isfinite(arr)):
                    return g, name, "gradient"
    return None


def _raise_nonfinite(state, grads, where):
    found = _first_nonfinite(state, grads)
    if found is None:
        raise TrainingError(f"non-finite objective at {where}; all parameters and gradients are finite")
    group, name, kind = found
    raise TrainingError(f"non-finite objective at {where}: first non-finite {kind} in group '{group}' ({name})")


def eval_eps(config: TrainConfig, n):
    """Frozen noise for metric evaluation; identical at every epoch."""
    return config.rng("eval").normal((n, config.eval_samples, config.latent_dim))


def mean_bound(state, dataset, config: TrainConfig, chunk=1000):
    eps = eval_eps(config, dataset.n)
    total = 0.0
    for s in range(0, dataset.n, chunk):
        bp = bound_forward(state.theta, state.phi, dataset.images[s:s + chunk], eps[s:s + chunk])
        total += float(np.sum(bp.value))
    return total / dataset.n


def train(config: TrainConfig, dataset, state=None, on_epoch=None):
    """Run epochs ``state.epoch .. config.total_epochs - 1``.

    Passing a state restored from a checkpoint resumes training exactly where
    it stopped: every random draw is keyed by (seed, epoch, batch).
    """
    if dataset.n < 1:
        raise TrainingError("dataset is empty")
    if config.m > dataset.n:
        raise ValueError(f"batch size {config.m} exceeds dataset size {dataset.n}")
    if state is None:
        state = init_model(config, dataset.dim, dataset.n_classes)
    mb_rng = config.rng("minibatch")
    eps_rng = config.rng("epsilon")
    K = config.latent_dim

    while state.epoch < config.total_epochs:
        epoch = state.epoch
        lr = scheduled_lr(config.schedule, epoch)
        C = 0.0 if epoch < config.pretrain_epochs else config.C
        objectives = []
        for b, batch in enumerate(minibatch_iter(dataset, config.m, mb_rng, epoch)):
            eps = eps_rng.child(epoch, b).normal((len(batch.indices), config.L, K))
            res = _batch_pass(state, batch.images, batch.labels, config, eps, dataset.n, C)
            if not math.isfinite(res.objective):
                _raise_nonfinite(state, res.grads, f"epoch {epoch}, batch {b}")
            objectives.append(res.objective)
            for g in config.update_groups:
                adam, values = adam_step(state.adam[g], state.group_params(g), res.grads[g], lr)
                state.adam[g] = adam
                state = state.with_group_params(g, values)
            if _first_nonfinite(state) is not None:
                _raise_nonfinite(state, None, f"epoch {epoch}, batch {b} (after update)")
        state.epoch = epoch + 1
        row = {
            "epoch": epoch + 1,
            "objective": float(np.mean(objectives)),
            "bound_mean": mean_bound(state, dataset, config),
            "train_error": evaluate(state, dataset),
            "lr": lr,
            "lambda_norm": float(np.linalg.norm(state.cls.lam)),
        }
        state.history.append(row)
        log.info("epoch %d objective %.6g bound %.6g train_error %.4f", row["epoch"], row["objective"],
                 row["bound_mean"], row["train_error"])
        if on_epoch is not None:
            on_epoch(state, row)
    return state


# ---------------------------------------------------------------- inference

def features(state, images, chunk=2000):
    images = np.atleast_2d(images)
    out = []
    for s in range(0, images.shape[0], chunk):
        post, cache = encoder_forward(state.phi, images[s:s + chunk])
        out.append(features_from_encoder(post, cache, state.cls.feature_mode))
    return np.concatenate(out, axis=0)


def predict_labels(state, images, lam=None):
    lam = state.cls.lam if lam is None else lam
    return np.atleast_1d(predict(lam, features(state, images)))


def evaluate(state, dataset, lam=None):
    """Error rate of the max-margin prediction rule on ``dataset``."""
    return float(np.mean(predict_labels(state, dataset.images, lam) != dataset.labels))


def generate(state, n, rng: RngStream):
    """Ancestral samples: z ~ N(0, I), returned as Bernoulli means."""
    z = rng.normal((n, state.theta.latent_dim))
    logits, _ = decoder_forward(state.theta, z)
    # saturated logits round to exactly 0 or 1 in float64
    return np.clip(sigmoid(logits), _TINY, 1.0 - _EPS53)
