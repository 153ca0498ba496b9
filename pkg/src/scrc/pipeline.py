"""End-to-end calibration: SCRC-T, SCRC-I, and the CRC-ALL / RAND baselines.

All four methods share one search skeleton: pick a first-stage starting
threshold, sweep lambda1 over {start, start + eta, ...} with the endpoint
1.0 always appended (so select-everything is always in the search space),
solve the second stage at each feasible grid point, and keep the point that
optimizes the chosen objective:

* ``set-size`` (default): smallest empirical mean prediction-set size over
  the selected calibration subset -- the ERM choice;
* ``lambda2``: smallest second-stage threshold.

Ties go to the earlier grid point, i.e. toward smaller lambda1 (more
selective), then smaller lambda2.

The second stage at a grid point depends on the calibration set only
through the selected subset, and the selected subset is an upper level set
of the confidence score, so it is fully determined by its size m.  Solves
are therefore cached per (m, budget); repeated per-test-point transductive
calibrations against the same calibration set hit the same cache entries
and stay cheap while remaining bit-identical to the uncached computation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    METHOD_CRC_ALL,
    METHOD_RAND,
    METHOD_SCRC_I,
    METHOD_SCRC_T,
    InfeasibleError,
    NoFeasibleGridPointError,
    RiskSpec,
    ScoredExample,
    SelectiveOutput,
    ThresholdPair,
    ValidationError,
)
from .sets import LossKind, loss_step_points, prediction_set
from .stage1 import (
    calibration_only_stage1,
    dkw_half_width,
    transductive_lambda1_batch,
    xi_lower_bound,
)
from .stage2 import (
    BUDGET_EPS,
    _check_solution,
    _solve_step_infimum,
    augmented_budget,
    crc_budget,
    m_min,
)

OBJECTIVE_MIN_SET_SIZE = "set-size"
OBJECTIVE_MIN_LAMBDA2 = "lambda2"
ALL_OBJECTIVES = (OBJECTIVE_MIN_SET_SIZE, OBJECTIVE_MIN_LAMBDA2)

RAND_MAX_RETRIES = 10

GRID_TIE_EPS = 1e-12


@dataclass(frozen=True)
class GridPoint:
    """One lambda1 candidate from the sweep: the selected calibration count,
    the stage-2 solution (None when the candidate was skipped), and the mean
    set size over the selected subset used for the ERM objective."""

    lambda1: float
    m: int
    lambda2: float | None
    mean_set_size: float | None
    feasible: bool


@dataclass(frozen=True)
class CalibrationOutcome:
    thresholds: ThresholdPair
    grid_trace: tuple[GridPoint, ...]
    objective: str


def lambda1_grid(start: float, eta: float, no_sweep: bool = False) -> list[float]:
    """Sweep values {start, start + eta, ...} with 1.0 appended.

    ``no_sweep`` reproduces the single-threshold construction: only the
    starting value is examined.
    """
    start = min(max(start, 0.0), 1.0)
    if no_sweep:
        return [start]
    vals = []
    j = 0
    while True:
        v = start + j * eta
        if v >= 1.0 - GRID_TIE_EPS:
            break
        vals.append(v)
        j += 1
    vals.append(1.0)
    return vals


class CalibrationData:
    """Read-only calibration table, sorted once by confidence.

    Rows are ordered by descending confidence so that the subset selected by
    any threshold is a prefix; stage-2 solves against a prefix are cached by
    (prefix length, budget).
    """

    def __init__(self, probs: np.ndarray, labels_idx: np.ndarray, confidence: np.ndarray,
                 loss: LossKind):
        probs = np.atleast_2d(np.asarray(probs, dtype=float))
        labels_idx = np.asarray(labels_idx, dtype=int)
        g = np.asarray(confidence, dtype=float)
        n = probs.shape[0]
        if labels_idx.shape != (n,) or g.shape != (n,):
            raise ValidationError("probs, labels, confidence must agree in length")
        if n < 1:
            raise ValidationError("need at least one calibration point")
        order = np.argsort(-g, kind="stable")
        self.probs = probs[order]
        self.labels_idx = labels_idx[order]
        self.g_desc = g[order]
        self.g_asc = self.g_desc[::-1].copy()
        self.loss = loss
        self.n = n
        self._cache: dict[tuple[int, int], tuple[float, float]] = {}

    @classmethod
    def from_examples(cls, cal: Sequence[ScoredExample], loss: LossKind) -> "CalibrationData":
        probs = np.asarray([e.probs for e in cal], dtype=float)
        if any(e.label is None for e in cal):
            raise ValidationError("calibration examples must carry labels")
        labels_idx = np.asarray([e.label - 1 for e in cal], dtype=int)
        g = np.asarray([e.confidence for e in cal], dtype=float)
        return cls(probs, labels_idx, g, loss)

    def selected_count(self, lambda1: float) -> int:
        """Size of {i : g_i >= 1 - lambda1}."""
        return int(self.n - np.searchsorted(self.g_asc, 1.0 - lambda1, side="left"))

    def solve_prefix(self, m: int, budget: int) -> tuple[float, float]:
        """Infimum lambda2 for the top-m subset under ``budget``, plus the
        mean prediction-set size of that subset at the solution."""
        key = (m, budget)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        probs = self.probs[:m]
        labels = self.labels_idx[:m]
        t, delta = loss_step_points(probs, labels, self.loss)
        lam2 = _solve_step_infimum(t, delta, float(m), budget)
        _check_solution(probs, labels, lam2, budget, self.loss)
        mean_size = float((probs >= 1.0 - lam2).sum(axis=1).mean())
        out = (lam2, mean_size)
        self._cache[key] = out
        return out


def _as_caldata(cal, loss: LossKind) -> CalibrationData:
    if isinstance(cal, CalibrationData):
        if cal.loss != loss:
            raise ValidationError("CalibrationData was built for a different loss")
        return cal
    return CalibrationData.from_examples(cal, loss)


def _improves(candidate: GridPoint, best: GridPoint | None, objective: str) -> bool:
    if best is None:
        return True
    if objective == OBJECTIVE_MIN_LAMBDA2:
        return candidate.lambda2 < best.lambda2
    return candidate.mean_set_size < best.mean_set_size


def _sweep(data: CalibrationData, start: float, spec: RiskSpec, objective: str,
           method: str, no_sweep: bool) -> CalibrationOutcome:
    """Shared lambda1 sweep for the counting-rule (SCRC-T) and augmented
    (SCRC-I) second stages; the two differ only in budget and feasibility."""
    if objective not in ALL_OBJECTIVES:
        raise ValidationError(f"unknown objective {objective!r}")
    alpha = spec.risk_target
    n = data.n
    skip_below = m_min(alpha)
    eps = dkw_half_width(n, spec.confidence_delta) if method == METHOD_SCRC_I else None
    trace: list[GridPoint] = []
    best: GridPoint | None = None
    best_xi_lcb: float | None = None
    for lam1 in lambda1_grid(start, spec.grid_step, no_sweep):
        m = data.selected_count(lam1)
        if method == METHOD_SCRC_T:
            if m <= skip_below:
                trace.append(GridPoint(lam1, m, None, None, False))
                continue
            budget = crc_budget(m, alpha)
            xi_lcb = None
        else:
            xi_lcb = xi_lower_bound(m / n, eps)
            if (n + 1) * alpha * xi_lcb < 1.0 - BUDGET_EPS:
                trace.append(GridPoint(lam1, m, None, None, False))
                continue
            budget = max(augmented_budget(n, alpha, xi_lcb), 0)
        lam2, mean_size = data.solve_prefix(m, budget)
        point = GridPoint(lam1, m, lam2, mean_size, True)
        trace.append(point)
        if _improves(point, best, objective):
            best = point
            best_xi_lcb = xi_lcb
    if best is None:
        if method == METHOD_SCRC_T:
            raise NoFeasibleGridPointError(
                f"every grid point leaves m <= m_min = {skip_below} "
                f"(n={n}, alpha={alpha}); increase n or alpha"
            )
        raise InfeasibleError(
            f"(n+1)*alpha*xi_lcb < 1 at every grid point "
            f"(n={n}, alpha={alpha}, delta={spec.confidence_delta}); "
            "increase the calibration size, alpha, or delta"
        )
    thresholds = ThresholdPair(
        lambda1=best.lambda1,
        lambda2=best.lambda2,
        method=method,
        xi_lcb=best_xi_lcb,
    )
    return CalibrationOutcome(thresholds=thresholds, grid_trace=tuple(trace), objective=objective)


def scrc_t_calibrate(cal, test_g: float, spec: RiskSpec, loss: LossKind,
                     objective: str = OBJECTIVE_MIN_SET_SIZE,
                     no_sweep: bool = False) -> CalibrationOutcome:
    """Transductive calibration for one test confidence.

    The sweep starts at the pooled-quantile threshold (symmetric in the
    n + 1 confidences) and candidates with m <= m_min selected calibration
    points are skipped.
    """
    data = _as_caldata(cal, loss)
    outcomes = scrc_t_calibrate_batch(data, [test_g], spec, loss, objective, no_sweep)
    return outcomes[0]


def scrc_t_calibrate_batch(cal, test_g, spec: RiskSpec, loss: LossKind,
                           objective: str = OBJECTIVE_MIN_SET_SIZE,
                           no_sweep: bool = False) -> list[CalibrationOutcome]:
    """Per-test-point transductive calibration for a batch of confidences.

    Each test point gets exactly the thresholds scrc_t_calibrate would give
    it; the pooled first-stage threshold takes at most a handful of distinct
    values against a fixed calibration set, so sweeps are shared across test
    points (and stage-2 solves are cached) without changing any result.
    """
    data = _as_caldata(cal, loss)
    test_g = np.atleast_1d(np.asarray(test_g, dtype=float))
    lam1_starts = transductive_lambda1_batch(data.g_asc, test_g, spec.coverage_target)
    by_start: dict[float, CalibrationOutcome] = {}
    for start in np.unique(lam1_starts):
        by_start[float(start)] = _sweep(
            data, float(start), spec, objective, METHOD_SCRC_T, no_sweep
        )
    return [by_start[float(s)] for s in lam1_starts]


def scrc_i_calibrate(cal, spec: RiskSpec, loss: LossKind,
                     objective: str = OBJECTIVE_MIN_SET_SIZE,
                     no_sweep: bool = False) -> CalibrationOutcome:
    """Calibration-only thresholds, reusable across all future test points.

    Stage 1 uses the n calibration confidences alone; stage 2 controls the
    augmented loss with the DKW-deflated budget.  The sweep re-derives the
    empirical selection rate, its lower bound, and the budget at every grid
    point; ``no_sweep`` keeps only the minimal threshold.
    """
    data = _as_caldata(cal, loss)
    s1 = calibration_only_stage1(data.g_asc, spec.coverage_target, spec.confidence_delta)
    return _sweep(data, s1.lambda1_hat, spec, objective, METHOD_SCRC_I, no_sweep)


def crc_all_calibrate(cal, spec: RiskSpec, loss: LossKind,
                      objective: str = OBJECTIVE_MIN_SET_SIZE) -> CalibrationOutcome:
    """Baseline: select everything (lambda1 = 1), control risk on all n."""
    data = _as_caldata(cal, loss)
    budget = crc_budget(data.n, spec.risk_target)
    if budget <= 0:
        raise InfeasibleError(
            f"budget {budget} <= 0 for n={data.n}, alpha={spec.risk_target}",
            m=data.n, budget=budget,
        )
    lam2, mean_size = data.solve_prefix(data.n, budget)
    point = GridPoint(1.0, data.n, lam2, mean_size, True)
    thresholds = ThresholdPair(lambda1=1.0, lambda2=lam2, method=METHOD_CRC_ALL)
    return CalibrationOutcome(thresholds=thresholds, grid_trace=(point,), objective=objective)


def rand_calibrate(cal, spec: RiskSpec, loss: LossKind, rng_seed: int,
                   objective: str = OBJECTIVE_MIN_SET_SIZE,
                   max_retries: int = RAND_MAX_RETRIES) -> CalibrationOutcome:
    """Baseline: select each calibration point with probability xi, then run
    the counting rule on the random subset.

    Test-time selection is an equally uninformed coin flip, encoded as
    lambda1 = xi against a fresh uniform draw (see ``apply``).  Subsets too
    small for a positive budget are redrawn up to ``max_retries`` times.
    """
    data = _as_caldata(cal, loss)
    xi, alpha = spec.coverage_target, spec.risk_target
    rng = np.random.default_rng(rng_seed)
    for _ in range(max_retries):
        mask = rng.random(data.n) < xi
        m = int(mask.sum())
        budget = crc_budget(m, alpha)
        if m >= 1 and budget > 0:
            break
    else:
        raise InfeasibleError(
            f"random selection at rate xi={xi} never reached a positive budget "
            f"in {max_retries} draws (n={data.n}, alpha={alpha})",
            m=m, budget=budget,
        )
    probs = data.probs[mask]
    labels = data.labels_idx[mask]
    t, delta = loss_step_points(probs, labels, loss)
    lam2 = _solve_step_infimum(t, delta, float(m), budget)
    _check_solution(probs, labels, lam2, budget, loss)
    mean_size = float((probs >= 1.0 - lam2).sum(axis=1).mean())
    point = GridPoint(xi, m, lam2, mean_size, True)
    thresholds = ThresholdPair(lambda1=xi, lambda2=lam2, method=METHOD_RAND)
    return CalibrationOutcome(thresholds=thresholds, grid_trace=(point,), objective=objective)


def apply(thresholds: ThresholdPair, example: ScoredExample,
          rng: np.random.Generator | None = None) -> SelectiveOutput:
    """Apply calibrated thresholds to one example.

    Abstains when the confidence misses 1 - lambda1; RAND thresholds ignore
    the confidence and flip a coin at rate lambda1 (= xi), so they require
    an rng.
    """
    if thresholds.method == METHOD_RAND:
        if rng is None:
            raise ValidationError("RAND thresholds need an rng for the selection coin flip")
        selected = float(rng.random()) >= 1.0 - thresholds.lambda1
    else:
        selected = example.confidence >= 1.0 - thresholds.lambda1
    if not selected:
        return SelectiveOutput.abstain()
    return SelectiveOutput.prediction(prediction_set(example.probs, thresholds.lambda2))
