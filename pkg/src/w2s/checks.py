"""Executable checks of the gain-vs-misfit bound and its projection structure.

Verdicts compare the achieved slack of an inequality against a tolerance that
reflects Monte-Carlo noise in the estimated distances. Checks on runs whose
assumptions don't hold exactly (non-realizable strong class) are reported as
informational rather than hard failures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .heads import Head, train_head
from .metrics import EvalRecord

VERDICT_HOLDS = "holds"
VERDICT_WITHIN_TOL = "holds_within_tol"
VERDICT_VIOLATED = "violated"


@dataclass(frozen=True)
class BoundReport:
    """Outcome of one inequality check on one record.

    slack is rhs - lhs (nonnegative means the bound holds outright);
    ``budget`` is any configured allowance already folded into rhs, and
    ``required_slack`` the allowance that would have been needed without it.
    """

    task_id: int
    lhs: float
    rhs: float
    slack: float
    tolerance: float
    verdict: str
    kind: str = "realizable"
    informational: bool = False
    budget: float = 0.0
    required_slack: float = 0.0


def _verdict(slack: float, tolerance: float) -> str:
    if slack >= 0:
        return VERDICT_HOLDS
    if slack >= -tolerance:
        return VERDICT_WITHIN_TOL
    return VERDICT_VIOLATED


def mc_tolerance(record: EvalRecord, n_sigma: float = 6.0) -> float:
    """n-sigma propagated Monte-Carlo error of the slack (b - c) - a.

    Falls back to 0 when the record carries no standard errors.
    """
    ses = (record.se_weak, record.se_w2s, record.se_misfit)
    if any(s is None for s in ses):
        return 0.0
    return n_sigma * math.sqrt(sum(s * s for s in ses))


def check_realizable_bound(record: EvalRecord, tol: float | None = None, *,
                           realizable: bool = True, n_sigma: float = 6.0) -> BoundReport:
    """Check w2s_true_err <= weak_true_err - misfit on one record.

    Equivalently: the weak-to-strong gain covers the misfit. ``tol`` defaults
    to the record's propagated Monte-Carlo tolerance. Records from runs where
    the strong class isn't known to contain the truth are downgraded to
    informational, since extra approximation terms are expected there.
    """
    lhs = record.w2s_true_err
    rhs = record.weak_true_err - record.misfit
    slack = rhs - lhs
    if tol is None:
        tol = mc_tolerance(record, n_sigma)
    return BoundReport(record.task_id, lhs, rhs, slack, tol, _verdict(slack, tol),
                       kind="realizable", informational=not realizable)


def check_nonrealizable_skeleton(record: EvalRecord, *, k1: float = 1.0,
                                 kn: float = 0.0, tol: float | None = None,
                                 n_sigma: float = 6.0) -> BoundReport:
    """Informational bound check with a configured approximation budget.

    The rhs gets an extra k1 * sqrt(epsilon_hat) + kn, a stand-in for the
    slack a non-realizable strong class is entitled to; constants are budget
    knobs, not derived quantities. ``required_slack`` records how much
    allowance the record actually needed beyond the plain bound.
    """
    if record.epsilon_hat is None:
        raise ValueError("record has no epsilon_hat; rerun with epsilon estimation enabled")
    budget = k1 * math.sqrt(record.epsilon_hat) + kn
    lhs = record.w2s_true_err
    rhs = record.weak_true_err - record.misfit + budget
    slack = rhs - lhs
    if tol is None:
        tol = mc_tolerance(record, n_sigma)
    required = max(0.0, record.w2s_true_err - (record.weak_true_err - record.misfit))
    return BoundReport(record.task_id, lhs, rhs, slack, tol, _verdict(slack, tol),
                       kind="skeleton", informational=True, budget=budget,
                       required_slack=required)


def _closed_form_fit(weak_labels: np.ndarray, features: np.ndarray, bias: bool) -> Head:
    return train_head(None, None, weak_labels, features=features,
                      kind="linear", method="closed_form", bias=bias,
                      on_singular="damp")


def check_pythagorean(weak_fn, strong_rep, probe, X: np.ndarray, *,
                      w2s_head: Head | None = None, bias: bool = True) -> float:
    """Empirical cross term <probe - f_sw, f_sw - weak> on one shared sample.

    f_sw must be the least-squares projection of the weak labels onto the
    strong head class over exactly this sample; by default it is fit here,
    and a supplied head is refused unless it was produced by closed_form
    (a gradient-descent head is only near the projection, so the residual
    orthogonality this check relies on wouldn't hold).

    ``probe`` is any head on the strong representation. For the exact
    projection the cross term vanishes up to rounding for every probe.
    """
    if w2s_head is not None and w2s_head.trained_by != "closed_form":
        raise ValueError("cross-term check needs a closed-form (exact projection) head")
    features = strong_rep.forward(X)
    weak_labels = np.asarray(weak_fn(X), dtype=np.float64).ravel()
    head = w2s_head if w2s_head is not None else _closed_form_fit(weak_labels, features, bias)
    proj = head(features)
    probe_vals = probe(features) if isinstance(probe, Head) else np.asarray(probe(X), dtype=np.float64).ravel()
    return float(np.mean((probe_vals - proj) * (proj - weak_labels)))


def pythagorean_identity(true_fn, weak_fn, strong_rep, X: np.ndarray, *,
                         bias: bool = True):
    """In-sample distances (a, b, c) with f_sw the exact projection on X.

    When the truth lies in the strong head class, b = a + c exactly (up to
    rounding): the projection residual is orthogonal to the class.
    Returns (a, b, c, f_sw).
    """
    features = strong_rep.forward(X)
    true_vals = np.asarray(true_fn(X), dtype=np.float64).ravel()
    weak_vals = np.asarray(weak_fn(X), dtype=np.float64).ravel()
    head = _closed_form_fit(weak_vals, features, bias)
    proj = head(features)
    a = float(np.mean((true_vals - proj) ** 2))
    b = float(np.mean((true_vals - weak_vals) ** 2))
    c = float(np.mean((proj - weak_vals) ** 2))
    return a, b, c, head


def check_triangle(f, g, h, X: np.ndarray, *, rtol: float = 1e-12) -> bool:
    """Triangle inequality for the root-mean-square distance on one sample:
    rms(f, g) <= rms(f, h) + rms(h, g), with rtol slack for rounding."""
    fx = np.asarray(f(X), dtype=np.float64).ravel()
    gx = np.asarray(g(X), dtype=np.float64).ravel()
    hx = np.asarray(h(X), dtype=np.float64).ravel()
    d_fg = math.sqrt(float(np.mean((fx - gx) ** 2)))
    d_fh = math.sqrt(float(np.mean((fx - hx) ** 2)))
    d_hg = math.sqrt(float(np.mean((hx - gx) ** 2)))
    return d_fg <= d_fh + d_hg + rtol * (1.0 + d_fg)


@dataclass(frozen=True)
class RankEntry:
    """Aggregates for one weak model across records."""

    weak_model_id: str
    mean_gap: float        # mean of weak_true_err - misfit
    std_gap: float
    mean_true_err: float   # mean of the weakly supervised strong model's error
    std_true_err: float
    count: int


def heuristic_rank(groups: dict[str, list[EvalRecord]]):
    """Rank weak supervisors by mean (weak error - misfit), ascending.

    The gap is an observable proxy for the error the strong student will end
    up with; no true labels are needed to compute it. Returns (entries,
    coincides) where coincides says whether the gap-minimizing weak model is
    also the one whose student has the smallest mean true error.
    """
    if not groups:
        raise ValueError("no weak-model groups to rank")
    entries = []
    for wid, records in groups.items():
        if not records:
            raise ValueError(f"weak model {wid!r} has no records")
        gaps = np.array([r.weak_true_err - r.misfit for r in records])
        errs = np.array([r.w2s_true_err for r in records])
        entries.append(RankEntry(
            weak_model_id=wid,
            mean_gap=float(gaps.mean()),
            std_gap=float(gaps.std(ddof=1)) if gaps.size > 1 else 0.0,
            mean_true_err=float(errs.mean()),
            std_true_err=float(errs.std(ddof=1)) if errs.size > 1 else 0.0,
            count=len(records),
        ))
    entries.sort(key=lambda e: (e.mean_gap, e.weak_model_id))
    best_err = min(entries, key=lambda e: (e.mean_true_err, e.weak_model_id))
    return entries, entries[0].weak_model_id == best_err.weak_model_id
