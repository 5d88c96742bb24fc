"""Feed-forward networks with hand-written backpropagation.

The recognition network maps pixels to a diagonal Gaussian over the latent
code; the generative network maps a code to Bernoulli pixel logits. Both work
on row-major batches: inputs are ``(n, width)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mathcore import ShapeError, activate, activate_grad, softplus, sigmoid


class StaleCacheError(RuntimeError):
    pass


@dataclass
class Layer:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    act: str = "linear"

    @property
    def n_in(self):
        return self.W.shape[1]

    @property
    def n_out(self):
        return self.W.shape[0]


@dataclass
class MlpParams:
    layers: list[Layer] = field(default_factory=list)

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.n_out != b.n_in:
                raise ShapeError(f"layer widths do not chain: {a.W.shape} then {b.W.shape}")

    @property
    def widths(self):
        return [layer.n_out for layer in self.layers]


@dataclass
class MlpCache:
    inputs: list  # input to each layer
    pre: list  # pre-activations
    weights: tuple  # the exact weight arrays used, to catch stale caches


def init_layer(rng, n_in, n_out, act):
    a = np.sqrt(6.0 / (n_in + n_out))
    W = (2.0 * rng.uniform((n_out, n_in)) - 1.0) * a
    return Layer(W, np.zeros(n_out), act)


def mlp_forward(params: MlpParams, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if params.layers and x.shape[1] != params.layers[0].n_in:
        raise ShapeError(f"input width {x.shape[1]} != first layer width {params.layers[0].n_in}")
    inputs, pre = [], []
    h = x
    for layer in params.layers:
        inputs.append(h)
        a = h @ layer.W.T + layer.b
        pre.append(a)
        h = activate(layer.act, a)
    return h, MlpCache(inputs, pre, tuple(layer.W for layer in params.layers))


def mlp_backward(params: MlpParams, cache: MlpCache, grad_output, grad_hidden=None):
    """Backpropagate ``grad_output`` (d loss / d output).

    ``grad_hidden`` optionally adds an extra upstream gradient at the output of
    each layer (``None`` entries are skipped); this is how losses that read
    intermediate activations enter. Returns ``([(dW, db), ...], grad_input)``,
    summed over the batch.
    """
    if len(cache.weights) != len(params.layers) or any(
        w is not layer.W for w, layer in zip(cache.weights, params.layers)
    ):
        raise StaleCacheError("cache was produced by a different set of parameters")
    g = np.asarray(grad_output, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    grads = [None] * len(params.layers)
    for i in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[i]
        if grad_hidden is not None and grad_hidden[i] is not None:
            g = g + grad_hidden[i]
        da = g * activate_grad(layer.act, cache.pre[i])
        grads[i] = (da.T @ cache.inputs[i], da.sum(axis=0))
        g = da @ layer.W
    return grads, g


# ---------------------------------------------------------------- encoder / decoder

@dataclass
class GaussianPosterior:
    mu: np.ndarray  # (n, K)
    log_var: np.ndarray  # (n, K)

    @property
    def var(self):
        return np.exp(self.log_var)

    @property
    def std(self):
        return np.exp(0.5 * self.log_var)


@dataclass
class EncoderParams:
    trunk: MlpParams
    head_mu: Layer
    head_logvar: Layer

    def __post_init__(self):
        width = self.trunk.widths[-1] if self.trunk.layers else None
        for head in (self.head_mu, self.head_logvar):
            if width is not None and head.n_in != width:
                raise ShapeError(f"head input {head.n_in} != trunk output {width}")

    @property
    def latent_dim(self):
        return self.head_mu.n_out

    def params(self, prefix="enc"):
        out = {}
        for i, layer in enumerate(self.trunk.layers):
            out[f"{prefix}.l{i}.W"] = layer.W
            out[f"{prefix}.l{i}.b"] = layer.b
        out[f"{prefix}.mu.W"] = self.head_mu.W
        out[f"{prefix}.mu.b"] = self.head_mu.b
        out[f"{prefix}.logvar.W"] = self.head_logvar.W
        out[f"{prefix}.logvar.b"] = self.head_logvar.b
        return out

    def with_params(self, values, prefix="enc"):
        trunk = MlpParams([
            Layer(values[f"{prefix}.l{i}.W"], values[f"{prefix}.l{i}.b"], layer.act)
            for i, layer in enumerate(self.trunk.layers)
        ])
        return EncoderParams(
            trunk,
            Layer(values[f"{prefix}.mu.W"], values[f"{prefix}.mu.b"]),
            Layer(values[f"{prefix}.logvar.W"], values[f"{prefix}.logvar.b"]),
        )


@dataclass
class DecoderParams:
    trunk: MlpParams
    head_logits: Layer

    @property
    def latent_dim(self):
        return self.trunk.layers[0].n_in if self.trunk.layers else self.head_logits.n_in

    @property
    def data_dim(self):
        return self.head_logits.n_out

    def params(self, prefix="dec"):
        out = {}
        for i, layer in enumerate(self.trunk.layers):
            out[f"{prefix}.l{i}.W"] = layer.W
            out[f"{prefix}.l{i}.b"] = layer.b
        out[f"{prefix}.out.W"] = self.head_logits.W
        out[f"{prefix}.out.b"] = self.head_logits.b
        return out

    def with_params(self, values, prefix="dec"):
        trunk = MlpParams([
            Layer(values[f"{prefix}.l{i}.W"], values[f"{prefix}.l{i}.b"], layer.act)
            for i, layer in enumerate(self.trunk.layers)
        ])
        return DecoderParams(trunk, Layer(values[f"{prefix}.out.W"], values[f"{prefix}.out.b"]))


def init_encoder(rng, data_dim, hidden, latent_dim, act="softplus"):
    layers, width = [], data_dim
    for i, h in enumerate(hidden):
        layers.append(init_layer(rng.child(i), width, h, act))
        width = h
    head_mu = init_layer(rng.child(100), width, latent_dim, "linear")
    head_logvar = init_layer(rng.child(101), width, latent_dim, "linear")
    return EncoderParams(MlpParams(layers), head_mu, head_logvar)


def init_decoder(rng, latent_dim, hidden, data_dim, act="softplus"):
    layers, width = [], latent_dim
    for i, h in enumerate(hidden):
        layers.append(init_layer(rng.child(i), width, h, act))
        width = h
    return DecoderParams(MlpParams(layers), init_layer(rng.child(100), width, data_dim, "linear"))


@dataclass
class EncoderCache:
    trunk: MlpCache
    hidden: np.ndarray  # trunk output
    weights: tuple


def encoder_forward(phi: EncoderParams, x):
    h, trunk_cache = mlp_forward(phi.trunk, x)
    if h.shape[1] != phi.head_mu.n_in:
        raise ShapeError(f"input width {h.shape[1]} does not match the encoder")
    mu = h @ phi.head_mu.W.T + phi.head_mu.b
    log_var = h @ phi.head_logvar.W.T + phi.head_logvar.b
    cache = EncoderCache(trunk_cache, h, (phi.head_mu.W, phi.head_logvar.W))
    return GaussianPosterior(mu, log_var), cache


def encoder_hidden(cache: EncoderCache):
    """Post-activation output of every trunk layer, in order."""
    return cache.trunk.inputs[1:] + [cache.hidden]


def encoder_backward(phi: EncoderParams, cache: EncoderCache, d_mu, d_log_var, d_hidden=None):
    """Gradients of the encoder parameters given upstream gradients on the
    posterior parameters and, optionally, on each trunk layer's output."""
    if cache.weights[0] is not phi.head_mu.W or cache.weights[1] is not phi.head_logvar.W:
        raise StaleCacheError("encoder cache was produced by different parameters")
    h = cache.hidden
    grads = {
        "mu.W": d_mu.T @ h,
        "mu.b": d_mu.sum(axis=0),
        "logvar.W": d_log_var.T @ h,
        "logvar.b": d_log_var.sum(axis=0),
    }
    d_h = d_mu @ phi.head_mu.W + d_log_var @ phi.head_logvar.W
    if phi.trunk.layers:
        layer_grads, _ = mlp_backward(phi.trunk, cache.trunk, d_h, d_hidden)
        for i, (dW, db) in enumerate(layer_grads):
            grads[f"l{i}.W"] = dW
            grads[f"l{i}.b"] = db
    return grads


@dataclass
class DecoderCache:
    trunk: MlpCache
    hidden: np.ndarray
    weights: np.ndarray


def decoder_forward(theta: DecoderParams, z):
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        z = z[None, :]
    if z.shape[1] != theta.latent_dim:
        raise ShapeError(f"latent width {z.shape[1]} != decoder input {theta.latent_dim}")
    h, trunk_cache = mlp_forward(theta.trunk, z)
    logits = h @ theta.head_logits.W.T + theta.head_logits.b
    return logits, DecoderCache(trunk_cache, h, theta.head_logits.W)


def decoder_backward(theta: DecoderParams, cache: DecoderCache, d_logits):
    """Returns (parameter gradients, gradient wrt z)."""
    if cache.weights is not theta.head_logits.W:
        raise StaleCacheError("decoder cache was produced by different parameters")
    h = cache.hidden
    grads = {"out.W": d_logits.T @ h, "out.b": d_logits.sum(axis=0)}
    d_h = d_logits @ theta.head_logits.W
    if theta.trunk.layers:
        layer_grads, d_z = mlp_backward(theta.trunk, cache.trunk, d_h)
        for i, (dW, db) in enumerate(layer_grads):
            grads[f"l{i}.W"] = dW
            grads[f"l{i}.b"] = db
    else:
        d_z = d_h
    return grads, d_z


def prefixed(grads, prefix):
    return {f"{prefix}.{k}": v for k, v in grads.items()}


# ---------------------------------------------------------------- likelihood

def bernoulli_loglik(x, logits):
    """Per-row Bernoulli log-likelihood, summed over pixels.

    Uses ``log sigma(l) = -softplus(-l)`` and ``log(1 - sigma(l)) = -softplus(-l) - l``.
    """
    x = np.asarray(x, dtype=np.float64)
    logits = np.asarray(logits, dtype=np.float64)
    return -np.sum(softplus(-logits) + (1.0 - x) * logits, axis=-1)


def bernoulli_loglik_grad(x, logits):
    """d loglik / d logits."""
    return np.asarray(x, dtype=np.float64) - sigmoid(logits)
