"""Hot inner loops, in two flavours.

Every kernel exists as a loop-style ``*_nb`` function (compiled by numba when
the JIT is enabled) and a vectorised ``*_np`` function. The public names at the
bottom pick one according to :mod:`mmdgm._accel`. Uniform draws are
bit-identical between the two; anything involving libm (``log``, ``cos``) or a
different summation order agrees to rounding only.
"""
import math

import numpy as np

from ._accel import USE_NUMBA, njit

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

_G = np.uint64(GOLDEN_GAMMA)
_M1 = np.uint64(_MIX1)
_M2 = np.uint64(_MIX2)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_TWO = np.uint64(2)
_INV53 = 1.0 / 9007199254740992.0  # 2**-53
_TWO_PI = 2.0 * math.pi


def mix64(x):
    """SplitMix64 finaliser on a Python int (used for key derivation)."""
    x &= MASK64
    x = ((x ^ (x >> 30)) * _MIX1) & MASK64
    x = ((x ^ (x >> 27)) * _MIX2) & MASK64
    return x ^ (x >> 31)


# ---------------------------------------------------------------- numba side

@njit(cache=True)
def _hash_nb(key, counter):
    z = key + (counter + _ONE) * _G
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True)
def _u01_nb(key, counter):
    return (float(_hash_nb(key, counter) >> _S11) + 0.5) * _INV53


@njit(cache=True)
def uniform_nb(key, offset, n):
    out = np.empty(n)
    for i in range(n):
        out[i] = _u01_nb(key, offset + np.uint64(i))
    return out


@njit(cache=True)
def normal_nb(key, offset, n):
    out = np.empty(n)
    for i in range(n):
        k = offset + np.uint64(i)
        pair = k // _TWO
        u1 = _u01_nb(key, _TWO * pair)
        u2 = _u01_nb(key, _TWO * pair + _ONE)
        r = math.sqrt(-2.0 * math.log(u1))
        if k % _TWO == 0:
            out[i] = r * math.cos(_TWO_PI * u2)
        else:
            out[i] = r * math.sin(_TWO_PI * u2)
    return out


@njit(cache=True)
def pegasos_nb(features, labels, n_classes, reg, iters, batch, key):
    n, d = features.shape
    lam = np.zeros((n_classes, d))
    grad = np.zeros((n_classes, d))
    radius = 1.0 / math.sqrt(reg)
    counter = np.uint64(0)
    for t in range(1, iters + 1):
        eta = 1.0 / (reg * t)
        grad[:, :] = 0.0
        for b in range(batch):
            idx = int(_u01_nb(key, counter) * n)
            counter += _ONE
            if idx >= n:
                idx = n - 1
            y = labels[idx]
            best = -1
            best_score = 0.0
            for c in range(n_classes):
                s = 0.0
                for j in range(d):
                    s += lam[c, j] * features[idx, j]
                if c != y:
                    s += 1.0
                if best < 0 or s > best_score:
                    best = c
                    best_score = s
            if best != y:
                for j in range(d):
                    grad[best, j] += features[idx, j]
                    grad[y, j] -= features[idx, j]
        shrink = 1.0 - eta * reg
        step = eta / batch
        sq = 0.0
        for c in range(n_classes):
            for j in range(d):
                lam[c, j] = shrink * lam[c, j] - step * grad[c, j]
                sq += lam[c, j] * lam[c, j]
        norm = math.sqrt(sq)
        if norm > radius:
            scale = radius / norm
            for c in range(n_classes):
                for j in range(d):
                    lam[c, j] *= scale
    return lam


# ---------------------------------------------------------------- numpy side

def _hash_np(key, counters):
    with np.errstate(over="ignore"):
        z = np.uint64(key) + (counters + _ONE) * _G
        z = (z ^ (z >> _S30)) * _M1
        z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def _u01_np(key, counters):
    return ((_hash_np(key, counters) >> _S11).astype(np.float64) + 0.5) * _INV53


def uniform_np(key, offset, n):
    counters = np.uint64(offset) + np.arange(n, dtype=np.uint64)
    return _u01_np(key, counters)


def normal_np(key, offset, n):
    k = np.uint64(offset) + np.arange(n, dtype=np.uint64)
    pair = k // _TWO
    u1 = _u01_np(key, _TWO * pair)
    u2 = _u01_np(key, _TWO * pair + _ONE)
    r = np.sqrt(-2.0 * np.log(u1))
    return np.where(k % _TWO == 0, r * np.cos(_TWO_PI * u2), r * np.sin(_TWO_PI * u2))


def pegasos_np(features, labels, n_classes, reg, iters, batch, key):
    n, d = features.shape
    lam = np.zeros((n_classes, d))
    radius = 1.0 / math.sqrt(reg)
    draws = np.minimum((uniform_np(key, 0, iters * batch) * n).astype(np.int64), n - 1)
    draws = draws.reshape(iters, batch)
    rows = np.arange(batch)
    for t in range(1, iters + 1):
        idx = draws[t - 1]
        x = features[idx]
        y = labels[idx]
        scores = x @ lam.T + 1.0
        scores[rows, y] -= 1.0
        y_hat = np.argmax(scores, axis=1)
        grad = np.zeros_like(lam)
        active = y_hat != y
        np.add.at(grad, y_hat[active], x[active])
        np.subtract.at(grad, y[active], x[active])
        eta = 1.0 / (reg * t)
        lam = (1.0 - eta * reg) * lam - (eta / batch) * grad
        norm = math.sqrt(float(np.sum(lam * lam)))
        if norm > radius:
            lam *= radius / norm
    return lam


if USE_NUMBA:
    uniform = uniform_nb
    normal = normal_nb
    pegasos = pegasos_nb
else:
    uniform = uniform_np
    normal = normal_np
    pegasos = pegasos_np
