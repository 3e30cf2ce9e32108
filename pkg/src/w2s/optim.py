"""Minibatch Adam: the one optimizer every training stage shares."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import Rng


@dataclass(frozen=True)
class OptimizerConfig:
    """Adam hyperparameters and the minibatch schedule."""

    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self) -> None:
        if not (np.isfinite(self.lr) and self.lr > 0):
            raise ValueError("optimizer.lr must be positive")
        if self.batch_size < 1:
            raise ValueError("optimizer.batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("optimizer.epochs must be >= 1")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ValueError("optimizer.beta1 and optimizer.beta2 must lie in [0, 1)")
        if not (np.isfinite(self.eps) and self.eps > 0):
            raise ValueError("optimizer.eps must be positive")


@dataclass
class AdamState:
    """First/second moment accumulators for one flat parameter vector."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, opt: OptimizerConfig | None = None) -> "AdamState":
        opt = opt or OptimizerConfig()
        return cls(np.zeros(n), np.zeros(n), lr=opt.lr, beta1=opt.beta1,
                   beta2=opt.beta2, eps=opt.eps)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState):
    """One bias-corrected Adam update, applied to params in place."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError("parameter, gradient, and state shapes must match")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * grads
    state.v *= b2
    state.v += (1.0 - b2) * (grads * grads)
    m_hat = state.m / (1.0 - b1 ** state.t)
    v_hat = state.v / (1.0 - b2 ** state.t)
    params -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


def minibatches(n: int, batch_size: int, epochs: int, rng: Rng):
    """Yield index batches, reshuffling with a fresh permutation every epoch."""
    if n < 1:
        raise ValueError("need at least one sample")
    for _ in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            yield perm[start:start + batch_size]
