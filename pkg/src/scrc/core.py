"""Domain types shared by every stage of the selective risk-control pipeline.

Conventions fixed here and relied on everywhere else:

* class indices are 1-based (``{1..K}``) in all external formats and in the
  per-example types below; array-backed internals convert once at ingestion,
* probability vectors must lie on the simplex within ``SIMPLEX_ATOL`` after
  renormalization,
* an abstention serializes to the literal token ``"ABSTAIN"``; prediction
  sets serialize to sorted 1-based index lists.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

SIMPLEX_ATOL = 1e-9

ABSTAIN_TOKEN = "ABSTAIN"

#: Calibration method tags used in threshold records and result tables.
METHOD_SCRC_T = "SCRC-T"
METHOD_SCRC_I = "SCRC-I"
METHOD_CRC_ALL = "CRC-ALL"
METHOD_RAND = "RAND"
ALL_METHODS = (METHOD_SCRC_T, METHOD_SCRC_I, METHOD_CRC_ALL, METHOD_RAND)


class ValidationError(ValueError):
    """A domain-type invariant was violated."""


class NonSimplexError(ValidationError):
    """Probability vector does not sum to one within tolerance."""


class OutOfRangeError(ValidationError):
    """A confidence, label, or spec parameter is outside its legal interval."""


class NonFiniteError(ValidationError):
    """An input contained NaN or infinity."""


class InfeasibleError(RuntimeError):
    """No threshold satisfies the risk budget for the given inputs.

    Carries enough context (``m``, ``budget``) for callers to decide whether
    to grow the selection, relax the target, or flag the run.
    """

    def __init__(self, message: str, m: int | None = None, budget: int | None = None):
        super().__init__(message)
        self.m = m
        self.budget = budget


class NoFeasibleGridPointError(InfeasibleError):
    """Every first-stage grid candidate left too few selected points."""


@dataclass(frozen=True)
class ScoredExample:
    """One example as seen by the calibrator: class probabilities, a
    confidence score in [0, 1], and optionally a 1-based true label.

    Raw logits may be carried along for score functions that need them
    (energy); they are never required by the thresholding math.
    """

    probs: tuple[float, ...]
    confidence: float
    label: int | None = None
    logits: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        if self.logits is not None:
            object.__setattr__(self, "logits", tuple(float(z) for z in self.logits))

    @property
    def n_classes(self) -> int:
        return len(self.probs)


def validate_example(e: ScoredExample) -> ScoredExample:
    """Check all ScoredExample invariants; return the example unchanged.

    Raises NonSimplexError when the probabilities do not sum to 1 within
    ``SIMPLEX_ATOL``, and OutOfRangeError for a confidence outside [0, 1],
    a probability outside [0, 1], or a label outside {1..K}.
    """
    p = np.asarray(e.probs, dtype=float)
    if p.ndim != 1 or p.size < 2:
        raise ValidationError(f"probs must be a vector of K >= 2 entries, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise NonFiniteError("probs contains non-finite entries")
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise OutOfRangeError("probs entries must lie in [0, 1]")
    if abs(float(p.sum()) - 1.0) > SIMPLEX_ATOL:
        raise NonSimplexError(f"probs sum to {p.sum():.12f}, expected 1 within {SIMPLEX_ATOL:g}")
    if not np.isfinite(e.confidence):
        raise NonFiniteError("confidence is non-finite")
    if not 0.0 <= e.confidence <= 1.0:
        raise OutOfRangeError(f"confidence {e.confidence} outside [0, 1]")
    if e.label is not None and not 1 <= e.label <= p.size:
        raise OutOfRangeError(f"label {e.label} outside {{1..{p.size}}}")
    return e


@dataclass(frozen=True)
class RiskSpec:
    """Calibration targets: coverage xi, risk alpha, confidence delta for the
    calibration-only variant, and the first-stage grid step eta."""

    coverage_target: float
    risk_target: float
    confidence_delta: float = 0.05
    grid_step: float = 0.01

    def __post_init__(self):
        if not 0.0 < self.coverage_target <= 1.0:
            raise OutOfRangeError(f"coverage_target {self.coverage_target} outside (0, 1]")
        if not 0.0 < self.risk_target < 1.0:
            raise OutOfRangeError(f"risk_target {self.risk_target} outside (0, 1)")
        if not 0.0 < self.confidence_delta < 1.0:
            raise OutOfRangeError(f"confidence_delta {self.confidence_delta} outside (0, 1)")
        if not 0.0 < self.grid_step <= 1.0:
            raise OutOfRangeError(f"grid_step {self.grid_step} outside (0, 1]")


@dataclass(frozen=True)
class ThresholdPair:
    """Calibrated thresholds: lambda1 gates selection, lambda2 sizes the
    prediction set.  ``xi_lcb`` is carried only by the calibration-only
    method, where it records the conservative selection-rate lower bound
    that set the second-stage budget."""

    lambda1: float
    lambda2: float
    method: str
    xi_lcb: float | None = None

    def __post_init__(self):
        if self.method not in ALL_METHODS:
            raise ValidationError(f"unknown method tag {self.method!r}")
        if not 0.0 <= self.lambda1 <= 1.0:
            raise OutOfRangeError(f"lambda1 {self.lambda1} outside [0, 1]")
        if not 0.0 <= self.lambda2 <= 1.0:
            raise OutOfRangeError(f"lambda2 {self.lambda2} outside [0, 1]")
        if (self.xi_lcb is not None) != (self.method == METHOD_SCRC_I):
            raise ValidationError("xi_lcb must be present exactly for SCRC-I thresholds")
        if self.xi_lcb is not None and not 0.0 <= self.xi_lcb <= 1.0:
            raise OutOfRangeError(f"xi_lcb {self.xi_lcb} outside [0, 1]")


@dataclass(frozen=True)
class SelectiveOutput:
    """Either an abstention or a sorted set of 1-based class indices.

    ``labels is None`` encodes abstention; construct through ``abstain()``
    and ``prediction()`` rather than directly.
    """

    labels: tuple[int, ...] | None

    @classmethod
    def abstain(cls) -> "SelectiveOutput":
        return cls(labels=None)

    @classmethod
    def prediction(cls, labels) -> "SelectiveOutput":
        idx = tuple(sorted(int(k) for k in labels))
        if len(set(idx)) != len(idx):
            raise ValidationError(f"duplicate class indices in prediction set: {idx}")
        if idx and idx[0] < 1:
            raise OutOfRangeError(f"class indices must be >= 1, got {idx}")
        return cls(labels=idx)

    @property
    def is_abstain(self) -> bool:
        return self.labels is None

    def set_size(self) -> int:
        if self.labels is None:
            raise ValidationError("abstention has no set size")
        return len(self.labels)

    def to_token(self) -> str:
        """Serialize: 'ABSTAIN' or a JSON list of sorted indices."""
        if self.labels is None:
            return ABSTAIN_TOKEN
        return json.dumps(list(self.labels))

    @classmethod
    def from_token(cls, token: str) -> "SelectiveOutput":
        if token == ABSTAIN_TOKEN:
            return cls.abstain()
        labels = json.loads(token)
        if not isinstance(labels, list):
            raise ValidationError(f"cannot parse selective output token {token!r}")
        return cls.prediction(labels)


@dataclass(frozen=True)
class TrialMetrics:
    """Empirical summary of one method on one test split.

    ``selective_risk`` and ``mean_set_size_selected`` are ``None`` when no
    test point was selected (the conditional quantities are undefined; they
    are flagged, never fabricated as zero).  ``mean_set_size_rejected`` is
    ``None`` when nothing was rejected.  ``feasible`` is False when the
    calibration itself failed, in which case every metric is ``None``.
    """

    selective_coverage: float
    selective_risk: float | None
    mean_set_size_selected: float | None
    mean_set_size_rejected: float | None
    n_selected: int
    feasible: bool = True

    @property
    def zero_selected(self) -> bool:
        return self.feasible and self.n_selected == 0
