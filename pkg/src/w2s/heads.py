"""Task and finetuning heads: linear functionals on representation features,
optionally squashed by a fixed scalar activation.

Plain linear heads form a convex function class (closed under averaging), so
least squares computes the exact projection onto it. The squashed variants
(sigmoid, tanh, relu) are non-convex classes and can only be fit by gradient
descent.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from .linalg import solve_least_squares
from .optim import AdamState, OptimizerConfig, adam_step, minibatches
from .rng import Rng

HEAD_KINDS = ("linear", "sigmoid", "tanh", "relu")


def value_and_slope(kind: str, pre: np.ndarray):
    """Activation value and derivative at the pre-activations.

    Returns (value, slope); slope is None for the linear kind (identically 1).
    The relu slope at exactly 0 is taken to be 1 (the right-continuous
    subgradient), so a head whose parameters start at zero still receives a
    gradient on the first optimizer step.
    """
    if kind == "linear":
        return pre, None
    if kind == "sigmoid":
        s = expit(pre)
        return s, s * (1.0 - s)
    if kind == "tanh":
        t = np.tanh(pre)
        return t, 1.0 - t * t
    if kind == "relu":
        m = pre > 0.0
        return pre * m, (pre >= 0.0).astype(np.float64)
    raise ValueError(f"unknown head kind {kind!r}")


@dataclass
class Head:
    """A function on representation space: phi(w . z + b).

    ``bias_enabled`` distinguishes a head that genuinely has no intercept
    (ground-truth tasks) from one whose trained intercept happens to be 0.
    ``trained_by`` records how the head was produced ("closed_form", "gd",
    or None for sampled/constructed heads); it never affects the values.
    """

    kind: str
    weights: np.ndarray
    bias: float = 0.0
    bias_enabled: bool = True
    trained_by: str | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if self.kind not in HEAD_KINDS:
            raise ValueError(f"unknown head kind {self.kind!r}")
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 1 or self.weights.size < 1:
            raise ValueError("weights must be a non-empty vector")
        if not np.isfinite(self.weights).all():
            raise ValueError("weights must be finite")
        self.bias = float(self.bias)
        if not np.isfinite(self.bias):
            raise ValueError("bias must be finite")
        if not self.bias_enabled and self.bias != 0.0:
            raise ValueError("a disabled bias must be 0")

    @property
    def dim(self) -> int:
        return self.weights.size

    @property
    def is_convex_class(self) -> bool:
        return self.kind == "linear"

    def __call__(self, z):
        Z = np.asarray(z, dtype=np.float64)
        single = Z.ndim == 1
        if single:
            Z = Z[None, :]
        if Z.ndim != 2 or Z.shape[1] != self.dim:
            raise ValueError(f"expected features of dimension {self.dim}, got shape {Z.shape}")
        pre = Z @ self.weights
        if self.bias_enabled:
            pre += self.bias
        value, _ = value_and_slope(self.kind, pre)
        return float(value[0]) if single else value


def apply_head(head: Head, z):
    """Evaluate a head on one feature vector or a batch of them."""
    return head(z)


def sample_linear_task(dim: int, rng: Rng, *, kind: str = "linear") -> Head:
    """Random task head: i.i.d. standard normal weights, no intercept.

    ``kind`` composes the sampled linear functional with a squashing
    activation, for experiments whose function class is non-convex.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    w = rng.normal(0.0, 1.0, size=dim)
    return Head(kind, w, 0.0, bias_enabled=False)


def predictor(head: Head, rep):
    """Compose head after a representation into one callable on raw inputs."""
    def fn(x):
        return head(rep.forward(x))
    return fn


def train_head(rep, data_x, data_y, *, kind: str = "linear", method: str = "gd",
               opt: OptimizerConfig | None = None, rng: Rng | None = None,
               bias: bool = True, features: np.ndarray | None = None,
               on_singular: str = "raise") -> Head:
    """Fit a head on top of a frozen representation.

    method "closed_form" solves the least-squares problem exactly and is only
    defined for linear heads; "gd" runs minibatch Adam from zero-initialized
    parameters with the representation held fixed, and needs ``rng`` for the
    epoch shuffles. Pass ``features`` to reuse a precomputed rep(data_x).
    ``on_singular`` is forwarded to the closed-form solver: a degenerate
    design raises by default, "damp" retries with a tiny ridge (deep relu
    representations routinely have collinear features, so pipeline callers
    opt in).
    """
    y = np.asarray(data_y, dtype=np.float64).ravel()
    if y.size < 1:
        raise ValueError("empty training set")
    if not np.isfinite(y).all():
        raise ValueError("training targets must be finite")
    if features is None:
        features = rep.forward(data_x)
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if features.shape[0] != y.size:
        raise ValueError("features and targets disagree on sample count")
    k = features.shape[1]

    if method == "closed_form":
        if kind != "linear":
            raise ValueError("closed-form fitting is only defined for linear heads")
        if bias:
            design = np.column_stack([features, np.ones(y.size)])
            coef = solve_least_squares(design, y, on_singular=on_singular)
            return Head("linear", coef[:-1].copy(), float(coef[-1]), True,
                        trained_by="closed_form")
        coef = solve_least_squares(features, y, on_singular=on_singular)
        return Head("linear", coef, 0.0, False, trained_by="closed_form")

    if method != "gd":
        raise ValueError(f"unknown training method {method!r}")
    if rng is None:
        raise ValueError("gd training needs an rng for the epoch shuffles")
    opt = opt or OptimizerConfig()
    opt.validate()

    params = np.zeros(k + 1 if bias else k)
    state = AdamState.zeros(params.size, opt)
    grad = np.empty_like(params)
    for idx in minibatches(y.size, opt.batch_size, opt.epochs, rng):
        fb = features[idx]
        pre = fb @ params[:k]
        if bias:
            pre += params[k]
        value, slope = value_and_slope(kind, pre)
        r = (2.0 / idx.size) * (value - y[idx])
        if slope is not None:
            r *= slope
        grad[:k] = fb.T @ r
        if bias:
            grad[k] = r.sum()
        adam_step(params, grad, state)
    return Head(kind, params[:k].copy(), float(params[k]) if bias else 0.0,
                bias, trained_by="gd")


def head_to_doc(head: Head) -> dict:
    """JSON-safe document with hex-encoded floats for bit-exact round trips."""
    return {
        "kind": head.kind,
        "weights": [float(v).hex() for v in head.weights],
        "bias": float(head.bias).hex(),
        "bias_enabled": bool(head.bias_enabled),
    }


def head_from_doc(doc: dict) -> Head:
    return Head(
        doc["kind"],
        np.array([float.fromhex(s) for s in doc["weights"]], dtype=np.float64),
        float.fromhex(doc["bias"]),
        bool(doc["bias_enabled"]),
    )


def with_kind(head: Head, kind: str) -> Head:
    """Same affine part, different squashing activation."""
    return replace(head, kind=kind)
