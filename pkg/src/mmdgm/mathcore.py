"""Dense linear algebra, nonlinearities and seeded random streams.

Tensors are plain ``float64`` numpy arrays. Randomness comes from a
counter-based generator: a draw is a pure function of
``(seed, stream, path, index)``, so any stochastic quantity can be replayed in
isolation without threading generator state through the code.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels


class ShapeError(ValueError):
    pass


def matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b


# ---------------------------------------------------------------- activations

def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _tanh_grad(x):
    t = np.tanh(x)
    return 1.0 - t * t


def _sigmoid_grad(x):
    s = sigmoid(x)
    return s * (1.0 - s)


_ACTIVATIONS = {
    "softplus": (softplus, sigmoid),
    "sigmoid": (sigmoid, _sigmoid_grad),
    "tanh": (np.tanh, _tanh_grad),
    "linear": (lambda x: np.array(x, dtype=np.float64), lambda x: np.ones_like(x, dtype=np.float64)),
}

ACTIVATION_KINDS = tuple(_ACTIVATIONS)


def _lookup(kind):
    try:
        return _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATION_KINDS}") from None


def activate(kind, x):
    return _lookup(kind)[0](np.asarray(x, dtype=np.float64))


def activate_grad(kind, x):
    """Elementwise derivative of ``activate(kind, .)`` evaluated at ``x``."""
    return _lookup(kind)[1](np.asarray(x, dtype=np.float64))


# ---------------------------------------------------------------- random streams

STREAM_IDS = {
    "init": 1,
    "minibatch": 2,
    "epsilon": 3,
    "mask": 4,
    "generate": 5,
    "data": 6,
    "binarize": 7,
    "impute": 8,
    "eval": 9,
    "pegasos": 10,
}


@dataclass(frozen=True)
class RngStream:
    """A named, splittable random stream.

    ``child(*keys)`` derives an independent sub-stream (for instance one per
    epoch and batch). Draw methods take an explicit ``offset`` into the stream;
    nothing is advanced implicitly.
    """

    seed: int
    stream_id: str
    path: tuple = ()

    def __post_init__(self):
        if self.stream_id not in STREAM_IDS:
            raise ValueError(f"unknown stream id {self.stream_id!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")

    @property
    def key(self):
        k = kernels.mix64(int(self.seed) ^ kernels.mix64(STREAM_IDS[self.stream_id] * kernels.GOLDEN_GAMMA))
        for part in self.path:
            k = kernels.mix64(k + kernels.mix64((int(part) + 1) * kernels.GOLDEN_GAMMA))
        return k

    def child(self, *keys):
        return RngStream(self.seed, self.stream_id, self.path + tuple(int(k) for k in keys))

    def uniform(self, shape, offset=0):
        shape = _as_shape(shape)
        n = int(np.prod(shape, dtype=np.int64))
        return kernels.uniform(np.uint64(self.key), np.uint64(offset), n).reshape(shape)

    def normal(self, shape, offset=0):
        shape = _as_shape(shape)
        n = int(np.prod(shape, dtype=np.int64))
        return kernels.normal(np.uint64(self.key), np.uint64(offset), n).reshape(shape)

    def permutation(self, n):
        # argsort of iid uniforms; stable sort settles the (measure-zero) ties
        return np.argsort(self.uniform(n), kind="stable")

    def integers(self, high, shape, offset=0):
        """Uniform integers in ``[0, high)``."""
        u = self.uniform(shape, offset)
        return np.minimum((u * high).astype(np.int64), high - 1)


def _as_shape(shape):
    if isinstance(shape, (int, np.integer)):
        return (int(shape),)
    return tuple(int(s) for s in shape)


def draw_standard_normal(rng: RngStream, shape, offset=0):
    return rng.normal(shape, offset)
