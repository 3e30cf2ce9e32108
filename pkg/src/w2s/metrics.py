"""Population-distance estimation and per-task evaluation records.

The distance between two predictors f, g is the mean squared gap
E[(f(x) - g(x))^2] under the input marginal; everything here estimates it by
Monte Carlo on fresh draws from a dedicated stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .heads import predictor, train_head
from .rng import Rng


@dataclass(frozen=True)
class DataDistribution:
    """Isotropic Gaussian input marginal N(0, sigma^2 I) on R^dim."""

    dim: int
    sigma: float

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ValueError("data.dim must be >= 1")
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError("data.sigma must be positive")

    def sample(self, n: int, rng: Rng) -> np.ndarray:
        if n < 1:
            raise ValueError("sample size must be >= 1")
        return rng.normal(0.0, self.sigma, size=(n, self.dim))


def _sq_gap(f, g, X: np.ndarray):
    """Mean squared gap of two predictors on a fixed sample, with its
    Monte-Carlo standard error. Identical objects short-circuit to (0, 0)."""
    if f is g:
        return 0.0, 0.0
    n = X.shape[0]
    fx = np.asarray(f(X), dtype=np.float64).ravel()
    gx = np.asarray(g(X), dtype=np.float64).ravel()
    if fx.shape != (n,) or gx.shape != (n,):
        raise ValueError("predictors must return one value per input row")
    if not np.isfinite(fx).all() or not np.isfinite(gx).all():
        raise ValueError("predictor returned non-finite values")
    sq = fx - gx
    sq *= sq
    est = float(sq.mean())
    se = float(sq.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return est, se


def estimate_dp(f, g, dist: DataDistribution, n: int, rng: Rng) -> float:
    """Monte-Carlo estimate of E[(f(x) - g(x))^2] over n fresh draws.

    The same function object on both sides returns exactly 0.0 without
    sampling; non-finite predictor output raises rather than propagating NaN.
    """
    if f is g:
        return 0.0
    return _sq_gap(f, g, dist.sample(n, rng))[0]


@dataclass
class EvalRecord:
    """One task's evaluation triplet plus bookkeeping.

    ``gain`` is stored as exactly ``weak_true_err - w2s_true_err`` (the same
    floating-point expression, not a re-derivation). ``se_*`` are the
    Monte-Carlo standard errors of the three distance estimates when known.
    """

    task_id: int
    weak_true_err: float
    w2s_true_err: float
    misfit: float
    gain: float
    n_eval: int
    weak_model_id: str = ""
    seed: int = 0
    epsilon_hat: float | None = None
    se_weak: float | None = None
    se_w2s: float | None = None
    se_misfit: float | None = None

    def __post_init__(self) -> None:
        for name in ("weak_true_err", "w2s_true_err", "misfit"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and nonnegative")
        if self.gain != self.weak_true_err - self.w2s_true_err:
            raise ValueError("gain must equal weak_true_err - w2s_true_err exactly")
        if self.n_eval < 1:
            raise ValueError("n_eval must be >= 1")
        if self.epsilon_hat is not None and (not np.isfinite(self.epsilon_hat) or self.epsilon_hat < 0):
            raise ValueError("epsilon_hat must be finite and nonnegative")

    @classmethod
    def from_distances(cls, task_id: int, weak_true_err: float, w2s_true_err: float,
                       misfit: float, n_eval: int, **kw) -> "EvalRecord":
        return cls(task_id, weak_true_err, w2s_true_err, misfit,
                   gain=weak_true_err - w2s_true_err, n_eval=n_eval, **kw)


def evaluate_triplet(true_fn, weak_fn, w2s_fn, dist: DataDistribution, n_eval: int,
                     rng: Rng, *, shared_sample: bool = False, task_id: int = 0,
                     weak_model_id: str = "", seed: int = 0,
                     epsilon_hat: float | None = None) -> EvalRecord:
    """Estimate the weak model's true error, the weakly supervised strong
    model's true error, and the misfit between the two.

    By default each of the three distances is estimated on its own fresh
    sample (child streams 0, 1, 2 of ``rng``); shared_sample=True evaluates
    all three on a single draw, which makes exact identities testable.
    """
    if shared_sample:
        X = dist.sample(n_eval, rng.child(0))
        a, se_a = _sq_gap(w2s_fn, true_fn, X)
        b, se_b = _sq_gap(weak_fn, true_fn, X)
        c, se_c = _sq_gap(w2s_fn, weak_fn, X)
    else:
        a, se_a = _sq_gap(w2s_fn, true_fn, dist.sample(n_eval, rng.child(0)))
        b, se_b = _sq_gap(weak_fn, true_fn, dist.sample(n_eval, rng.child(1)))
        c, se_c = _sq_gap(w2s_fn, weak_fn, dist.sample(n_eval, rng.child(2)))
    return EvalRecord.from_distances(
        task_id, b, a, c, n_eval, weak_model_id=weak_model_id, seed=seed,
        epsilon_hat=epsilon_hat, se_weak=se_b, se_w2s=se_a, se_misfit=se_c)


def estimate_epsilon(strong_rep, true_fn, dist: DataDistribution, n_fit: int,
                     n_eval: int, rng: Rng, *, bias: bool = True) -> float:
    """Achievable true-task error of the best linear head on the strong
    representation: fit by least squares on n_fit truly-labeled fresh points,
    then estimate its distance to the truth on n_eval more."""
    X = dist.sample(n_fit, rng.child(0))
    y = np.asarray(true_fn(X), dtype=np.float64).ravel()
    best = train_head(strong_rep, X, y, kind="linear", method="closed_form",
                      bias=bias, on_singular="damp")
    return estimate_dp(predictor(best, strong_rep), true_fn, dist, n_eval, rng.child(1))
