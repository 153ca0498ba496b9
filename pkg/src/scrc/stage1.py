"""First-stage selection control: coverage thresholds and DKW machinery.

The empirical first-stage risk

    R(lambda1) = (1/N) * #{i : g_i < 1 - lambda1}

is a step function of lambda1 with jumps only where 1 - lambda1 crosses an
observed confidence, so the infimum over a continuous lambda1 in [0, 1] is
attained exactly at an order statistic: with k = floor(N * (1 - xi)), the
threshold is max(0, 1 - g_(k+1)) where g_(k+1) is the (k+1)-th smallest of
the N pooled confidences.  No grid is involved.

The transductive threshold pools the n calibration confidences with the one
test confidence (N = n + 1) and is symmetric in all N inputs; the
calibration-only threshold uses the n calibration points alone (N = n).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._numeric import complement_threshold
from .core import OutOfRangeError, ValidationError

#: Absolute slack added before integer truncation so that decimal-intent
#: targets (e.g. xi = 0.8 with N = 5) are not pushed across an integer
#: boundary by binary floating-point representation.
COUNT_EPS = 1e-9

MODE_TRANSDUCTIVE = "transductive"
MODE_CALIBRATION_ONLY = "calibration-only"


@dataclass(frozen=True)
class StageOneResult:
    """First-stage threshold plus, for the calibration-only mode, the
    empirical selection rate and its DKW-deflated lower bound."""

    lambda1_hat: float
    mode: str
    xi_hat: float | None = None
    epsilon: float | None = None
    xi_lcb: float | None = None

    def __post_init__(self):
        if self.mode not in (MODE_TRANSDUCTIVE, MODE_CALIBRATION_ONLY):
            raise ValidationError(f"unknown stage-1 mode {self.mode!r}")
        if self.mode == MODE_CALIBRATION_ONLY:
            if self.xi_hat is None or self.epsilon is None or self.xi_lcb is None:
                raise ValidationError("calibration-only result requires xi_hat, epsilon, xi_lcb")


def stage1_loss(g: float, lambda1: float) -> int:
    """Indicator 1{g < 1 - lambda1}; the boundary g = 1 - lambda1 counts as
    selected (loss 0). Non-increasing in lambda1."""
    return 1 if g < 1.0 - lambda1 else 0


def select(g, lambda1: float):
    """Selection rule g >= 1 - lambda1 (closed inequality), elementwise."""
    g_arr = np.asarray(g, dtype=float)
    out = g_arr >= 1.0 - lambda1
    return bool(out) if out.ndim == 0 else out


def max_rejections(n_pooled: int, xi: float) -> int:
    """Largest rejection count compatible with coverage xi: floor(N*(1-xi))."""
    return int(math.floor(n_pooled * (1.0 - xi) + COUNT_EPS))


def _lambda1_from_sorted(g_sorted: np.ndarray, xi: float) -> float:
    n = g_sorted.size
    k = max_rejections(n, xi)
    if k >= n:
        return 0.0
    return max(0.0, complement_threshold(float(g_sorted[k])))


def transductive_lambda1(cal_g, test_g: float, xi: float) -> float:
    """Smallest lambda1 whose pooled rejection count stays within 1 - xi.

    Pools the calibration confidences with the single test confidence, so
    the result is symmetric in all n + 1 inputs; this symmetry is what
    preserves exchangeability of the selected subset.
    """
    cal = np.asarray(cal_g, dtype=float)
    if cal.size < 1:
        raise ValidationError("need at least one calibration confidence")
    pooled = np.sort(np.append(cal, float(test_g)))
    return _lambda1_from_sorted(pooled, xi)


def calibration_only_lambda1(cal_g, xi: float) -> float:
    """Same counting rule as the transductive threshold, over the n
    calibration confidences only (reusable across test points)."""
    cal = np.sort(np.asarray(cal_g, dtype=float))
    if cal.size < 1:
        raise ValidationError("need at least one calibration confidence")
    return _lambda1_from_sorted(cal, xi)


def transductive_lambda1_batch(cal_g_sorted: np.ndarray, test_g, xi: float) -> np.ndarray:
    """Per-test-point transductive thresholds against one sorted calibration
    vector.

    Equivalent to calling transductive_lambda1 per test point: inserting one
    value t into n sorted confidences moves the (k+1)-th pooled order
    statistic to median(c_(k), t, c_(k+1)), so each threshold is a clamp
    rather than a re-sort.
    """
    c = np.asarray(cal_g_sorted, dtype=float)
    t = np.atleast_1d(np.asarray(test_g, dtype=float))
    n = c.size
    k = max_rejections(n + 1, xi)
    if k >= n + 1:
        return np.zeros_like(t)
    lo = c[k - 1] if k >= 1 else -np.inf
    hi = c[k] if k < n else np.inf
    pooled_stat = np.minimum(np.maximum(t, lo), hi)
    return np.maximum(0.0, complement_threshold(pooled_stat))


def dkw_half_width(n: int, delta: float) -> float:
    """DKW half-width sqrt(log(2 / delta) / (2 n))."""
    if n < 1:
        raise ValidationError(f"need n >= 1 calibration points, got {n}")
    if not 0.0 < delta < 1.0:
        raise OutOfRangeError(f"delta {delta} outside (0, 1)")
    return math.sqrt(math.log(2.0 / delta) / (2.0 * n))


def xi_lower_bound(xi_hat: float, epsilon: float) -> float:
    """Conservative selection-rate lower bound max(xi_hat - epsilon, 0)."""
    if not 0.0 <= xi_hat <= 1.0:
        raise OutOfRangeError(f"xi_hat {xi_hat} outside [0, 1]")
    if epsilon < 0.0:
        raise OutOfRangeError(f"epsilon must be >= 0, got {epsilon}")
    return max(xi_hat - epsilon, 0.0)


def calibration_only_stage1(cal_g, xi: float, delta: float) -> StageOneResult:
    """Full calibration-only stage 1: threshold, empirical selection rate,
    DKW half-width, and the lower confidence bound fed to stage 2."""
    cal = np.asarray(cal_g, dtype=float)
    lam1 = calibration_only_lambda1(cal, xi)
    xi_hat = float(np.mean(select(cal, lam1)))
    eps = dkw_half_width(cal.size, delta)
    return StageOneResult(
        lambda1_hat=lam1,
        mode=MODE_CALIBRATION_ONLY,
        xi_hat=xi_hat,
        epsilon=eps,
        xi_lcb=xi_lower_bound(xi_hat, eps),
    )
