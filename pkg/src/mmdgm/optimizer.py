"""AdaM, plain SGD and the step-decay learning-rate schedule.

Parameters and gradients are ``{name: array}`` dicts. Updates return new dicts
and never modify their inputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class OptimizerContractError(ValueError):
    pass


@dataclass
class AdamState:
    base_lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params, **hyper):
        state = cls(**hyper)
        state.m = {k: np.zeros_like(p) for k, p in params.items()}
        state.v = {k: np.zeros_like(p) for k, p in params.items()}
        return state


def _check(params, grads, state=None):
    if set(params) != set(grads):
        raise OptimizerContractError(f"parameter/gradient names differ: {sorted(set(params) ^ set(grads))}")
    for k, p in params.items():
        if np.shape(grads[k]) != np.shape(p):
            raise OptimizerContractError(f"{k}: gradient shape {np.shape(grads[k])} != parameter shape {np.shape(p)}")
        if state is not None and (k not in state.m or state.m[k].shape != np.shape(p)):
            raise OptimizerContractError(f"{k}: optimizer state does not mirror the parameter")


def adam_step(state: AdamState, params, grads, lr=None):
    _check(params, grads, state)
    lr = state.base_lr if lr is None else lr
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_m, new_v, new_p = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        m = b1 * state.m[k] + (1.0 - b1) * g
        v = b2 * state.v[k] + (1.0 - b2) * g * g
        new_p[k] = p - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new_m[k] = m
        new_v[k] = v
    new_state = AdamState(state.base_lr, b1, b2, state.eps, t, new_m, new_v)
    return new_state, new_p


def sgd_step(params, grads, lr):
    _check(params, grads)
    return {k: p - lr * grads[k] for k, p in params.items()}


@dataclass(frozen=True)
class LrSchedule:
    base_lr: float = 3e-4
    decay_factor: float = 3.0
    decay_every: int = 100

    def __post_init__(self):
        if self.base_lr <= 0 or self.decay_factor <= 0 or self.decay_every < 1:
            raise ValueError("learning-rate schedule needs positive base_lr/decay_factor and decay_every >= 1")


def scheduled_lr(schedule: LrSchedule, epoch):
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return schedule.base_lr / schedule.decay_factor ** (epoch // schedule.decay_every)
