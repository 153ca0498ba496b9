"""Second-stage conformal risk control on the selected subset.

Both solvers compute the infimum lambda2 in [0, 1] whose empirical loss sum
stays within an integer budget:

* counting rule on the selected subset of size m:
      sum of losses  <=  ceil((m + 1) * alpha) - 1,
  feasible iff that budget is > 0, which needs roughly m >= ceil(1/alpha) - 1;
* augmented rule over all n calibration points, where unselected points
  contribute zero loss:
      sum of selected losses  <=  ceil((n + 1) * alpha * xi_lcb) - 1,
  feasible iff (n + 1) * alpha * xi_lcb >= 1.

Because every shipped loss is a step function of lambda2 with known drop
points (see sets.loss_step_points), the infimum is found exactly by a sorted
scan over those points -- no grid, no tolerance.  A generic bisection solver
is provided for externally supplied monotone losses and doubles as an
independent cross-check in the tests.  Every solve re-evaluates the
constraint at the returned threshold so a violation can never leak out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import InfeasibleError, ValidationError
from .sets import LossKind, loss_step_points, pointwise_losses

#: Absolute slack so that decimal-intent products like (m+1)*alpha = 2.5
#: survive binary floating point when pushed through ceil.
BUDGET_EPS = 1e-9

#: Tolerance for comparing real-valued loss sums against integer budgets.
SUM_TOL = 1e-9


@dataclass(frozen=True)
class StageTwoResult:
    """Outcome of one second-stage solve.

    ``lambda2_hat`` is None exactly when the budget was infeasible; ``m`` is
    the selected calibration count the solve saw.
    """

    lambda2_hat: float | None
    m: int
    budget: int
    feasible: bool


def m_min(alpha: float) -> int:
    """Minimum selected count for a usable budget: ceil(1/alpha) - 1."""
    return int(math.ceil(1.0 / alpha - BUDGET_EPS)) - 1


def crc_budget(m: int, alpha: float) -> int:
    """Counting-rule budget ceil((m + 1) * alpha) - 1."""
    return int(math.ceil((m + 1) * alpha - BUDGET_EPS)) - 1


def augmented_budget(n: int, alpha: float, xi_lcb: float) -> int:
    """Augmented-loss budget ceil((n + 1) * alpha * xi_lcb) - 1."""
    return int(math.ceil((n + 1) * alpha * xi_lcb - BUDGET_EPS)) - 1


def _solve_step_infimum(event_t: np.ndarray, event_delta: np.ndarray,
                        initial_sum: float, budget: float) -> float:
    """Infimum lambda2 with sum of step losses <= budget.

    ``event_t``/``event_delta`` list every point where the total drops (the
    delta applies at t, closed).  Falls back to 1.0 if even the final level
    exceeds the budget, which for the shipped losses can only happen with a
    negative budget.
    """
    if initial_sum <= budget + SUM_TOL:
        return 0.0
    t = event_t.ravel()
    order = np.argsort(t, kind="stable")
    t_sorted = t[order]
    cum = initial_sum + np.cumsum(event_delta.ravel()[order])
    # evaluate the running sum after ALL events tied at each unique t
    uniq = np.unique(t_sorted)
    last = np.searchsorted(t_sorted, uniq, side="right") - 1
    feasible = cum[last] <= budget + SUM_TOL
    idx = np.argmax(feasible)
    if not feasible[idx]:
        return 1.0
    return float(uniq[idx])


def _check_solution(probs, labels_idx, lam2: float, budget: float, loss: LossKind) -> None:
    total = float(pointwise_losses(probs, labels_idx, lam2, loss).sum())
    if total > budget + SUM_TOL:
        raise AssertionError(
            f"solver returned lambda2={lam2} with loss sum {total} > budget {budget}"
        )


def crc_lambda2(selected_probs, selected_labels_idx, alpha: float,
                loss: LossKind) -> StageTwoResult:
    """Counting-rule threshold on a selected subset.

    ``selected_probs`` is the (m, K) probability matrix of the selected
    calibration points, ``selected_labels_idx`` their 0-based labels.
    Raises InfeasibleError when the budget is not positive (too few selected
    points for the target alpha); callers either skip the candidate or grow
    the selection.
    """
    probs = np.atleast_2d(np.asarray(selected_probs, dtype=float))
    labels = np.asarray(selected_labels_idx)
    m = probs.shape[0] if probs.size else 0
    if m < 1:
        raise ValidationError("need at least one selected calibration point")
    budget = crc_budget(m, alpha)
    if budget <= 0:
        raise InfeasibleError(
            f"budget {budget} <= 0 for m={m}, alpha={alpha} (need m > {m_min(alpha)})",
            m=m, budget=budget,
        )
    t, delta = loss_step_points(probs, labels, loss)
    lam2 = _solve_step_infimum(t, delta, float(m), budget)
    _check_solution(probs, labels, lam2, budget, loss)
    return StageTwoResult(lambda2_hat=lam2, m=m, budget=budget, feasible=True)


def augmented_crc_lambda2(probs, labels_idx, selected_mask, alpha: float,
                          xi_lcb: float, loss: LossKind) -> StageTwoResult:
    """Augmented-loss threshold over all n calibration points.

    Unselected points contribute zero loss at every lambda2, so only the
    selected rows generate drop events; the budget, however, is set by n and
    the conservative selection-rate bound xi_lcb.  Raises InfeasibleError
    when (n + 1) * alpha * xi_lcb < 1.
    """
    probs = np.atleast_2d(np.asarray(probs, dtype=float))
    labels = np.asarray(labels_idx)
    mask = np.asarray(selected_mask, dtype=bool)
    n = probs.shape[0]
    if n < 1:
        raise ValidationError("need at least one calibration point")
    if mask.shape != (n,):
        raise ValidationError(f"selected_mask shape {mask.shape} != ({n},)")
    m = int(mask.sum())
    budget = augmented_budget(n, alpha, xi_lcb)
    if (n + 1) * alpha * xi_lcb < 1.0 - BUDGET_EPS:
        raise InfeasibleError(
            f"(n+1)*alpha*xi_lcb = {(n + 1) * alpha * xi_lcb:.6f} < 1 "
            f"(n={n}, alpha={alpha}, xi_lcb={xi_lcb}); "
            "increase the calibration size, alpha, or delta",
            m=m, budget=budget,
        )
    budget = max(budget, 0)
    if m == 0:
        # zero augmented loss everywhere; callers flag the degenerate run
        return StageTwoResult(lambda2_hat=0.0, m=0, budget=budget, feasible=True)
    sel_probs = probs[mask]
    sel_labels = labels[mask]
    t, delta = loss_step_points(sel_probs, sel_labels, loss)
    lam2 = _solve_step_infimum(t, delta, float(m), budget)
    _check_solution(sel_probs, sel_labels, lam2, budget, loss)
    return StageTwoResult(lambda2_hat=lam2, m=m, budget=budget, feasible=True)


def crc_lambda2_bisect(loss_sum, budget: float, tol: float = 1e-9) -> float:
    """Generic infimum search for a non-increasing loss-sum callable.

    For monotone losses without known drop points: bisect to ``tol`` and
    round up conservatively, so the returned value always satisfies the
    constraint when re-evaluated.
    """
    if loss_sum(0.0) <= budget + SUM_TOL:
        return 0.0
    if loss_sum(1.0) > budget + SUM_TOL:
        return 1.0
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if loss_sum(mid) <= budget + SUM_TOL:
            hi = mid
        else:
            lo = mid
    return hi
