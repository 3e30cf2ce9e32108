"""Dense float64 linear algebra and the closed-form least-squares oracle."""

from __future__ import annotations

import logging

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .rng import Rng

log = logging.getLogger(__name__)

# Squared pivot ratio below which the Cholesky factor of the (equilibrated)
# normal equations is treated as numerically rank deficient.
_PIVOT_RATIO_FLOOR = 1e-12


class RankDeficientError(np.linalg.LinAlgError):
    """The normal equations are singular and no damping was permitted."""


def gaussian_matrix(rows: int, cols: int, mean: float, std: float, rng: Rng) -> np.ndarray:
    """Sample a rows x cols matrix of i.i.d. Normal(mean, std^2) entries."""
    if rows < 1 or cols < 1:
        raise ValueError("matrix dimensions must be at least 1x1")
    if not np.isfinite(mean) or not np.isfinite(std) or std < 0:
        raise ValueError("mean must be finite and std finite and nonnegative")
    out = rng.normal(mean, std, size=(rows, cols))
    return np.ascontiguousarray(out, dtype=np.float64)


def solve_least_squares(design, targets, *, ridge: float = 0.0, on_singular: str = "raise") -> np.ndarray:
    """Coefficients minimizing the mean squared residual of design @ w ~ targets.

    Solves the normal equations with a Cholesky factorization after scaling
    every design column to unit Euclidean norm, so the factorization sees a
    well-conditioned system even when feature scales differ by orders of
    magnitude. ``ridge`` adds damping to the diagonal in the scaled space.

    A numerically singular system raises :class:`RankDeficientError` when
    ridge is 0. Passing ``on_singular="damp"`` instead retries once with
    ridge 1e-10 and logs a warning.
    """
    X = np.asarray(design, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64).ravel()
    if X.ndim != 2:
        raise ValueError("design must be a 2-D matrix")
    n, p = X.shape
    if y.shape[0] != n:
        raise ValueError(f"design has {n} rows but targets has {y.shape[0]} entries")
    if n < p:
        raise ValueError(f"need at least as many rows ({n}) as columns ({p})")
    if not np.isfinite(X).all() or not np.isfinite(y).all():
        raise ValueError("design and targets must be finite")
    if not np.isfinite(ridge) or ridge < 0:
        raise ValueError("ridge must be finite and nonnegative")
    if on_singular not in ("raise", "damp"):
        raise ValueError(f"unknown on_singular mode {on_singular!r}")

    scale = np.sqrt((X * X).sum(axis=0))
    scale[scale == 0.0] = 1.0  # an all-zero column stays zero and fails the pivot check
    Xs = X / scale
    gram = Xs.T @ Xs
    if ridge > 0.0:
        gram[np.diag_indices_from(gram)] += ridge
    rhs = Xs.T @ y

    def factorize(matrix):
        try:
            factor = cho_factor(matrix, lower=True, check_finite=False)
        except LinAlgError:
            return None
        diag = np.abs(np.diag(factor[0]))
        if (diag.min() / diag.max()) ** 2 < _PIVOT_RATIO_FLOOR:
            return None
        return factor

    factor = factorize(gram)
    if factor is None:
        if on_singular != "damp":
            raise RankDeficientError("design has numerically dependent columns")
        log.warning("singular normal equations; damping with ridge=1e-10")
        damped = gram.copy()
        damped[np.diag_indices_from(damped)] += 1e-10
        factor = factorize(damped)
        if factor is None:
            raise RankDeficientError("normal equations remain singular after damping")

    # Two rounds of iterative refinement against the undamped system. When the
    # factor carries fallback damping it acts only as a preconditioner here, so
    # the fitted values keep least-squares residual orthogonality at rounding
    # level rather than at the damping level; refinement also cleans up
    # marginally conditioned non-singular solves.
    coef_s = cho_solve(factor, rhs, check_finite=False)
    for _ in range(2):
        residual = rhs - gram @ coef_s
        coef_s += cho_solve(factor, residual, check_finite=False)

    coef = coef_s / scale
    if not np.isfinite(coef).all():
        raise RankDeficientError("least-squares solve produced non-finite coefficients")
    return coef
