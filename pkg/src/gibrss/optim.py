"""AdamW with decoupled weight decay, plus the cosine learning-rate schedule."""

import math

import numpy as np

from .errors import ContractError, NumericError


class OptimizerState:
    """Per-parameter first/second moment buffers and the shared step count."""

    def __init__(self, lr=5e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        # lr 0 is a valid frozen optimizer (schedules hit it at the end)
        if lr < 0:
            raise ContractError(f"lr must be nonnegative, got {lr}")
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {}
        self.v = {}


def adamw_step(params, grads, state, lr=None):
    """One AdamW update over a name -> array parameter dict, in place.

    Decay is decoupled: each parameter first shrinks by lr * wd * param,
    then the bias-corrected moment update is applied. `lr` overrides
    state.lr for this step (used by the schedule).
    """
    lr = state.lr if lr is None else lr
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.betas
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if np.isnan(g).any():
            raise NumericError(f"NaN gradient for parameter '{name}'")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        if state.weight_decay:
            p -= lr * state.weight_decay * p
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def cosine_lr(step, total_steps, lr_max):
    """Cosine decay from lr_max at step 0 to 0 at total_steps."""
    if total_steps <= 0:
        raise ContractError(f"total_steps must be positive, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise ContractError(f"step {step} outside [0, {total_steps}]")
    return lr_max * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


class AdamW:
    """Optimizer over a model's named Tensor parameters."""

    def __init__(self, params, lr=5e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = params
        self.state = OptimizerState(lr, betas, eps, weight_decay)

    def step(self, lr=None):
        arrays = {name: t.data for name, t in self.params.items()}
        grads = {name: t.grad for name, t in self.params.items()}
        adamw_step(arrays, grads, self.state, lr=lr)

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None
