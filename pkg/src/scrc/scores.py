"""Class-probability and confidence scores derived from raw logits.

The selection machinery only ever uses the *ordering* of a confidence score,
but the type contract requires g(x) in [0, 1].  Scores that are naturally
unbounded or lower-is-better are therefore remapped monotonically:

* entropy  -> 1 - H(p)/log K           (higher = more confident),
* energy   -> negated, then min-max rescaled over a calibration collection
              and clipped to [0, 1].

Any strictly monotone remap preserves which examples a threshold selects, so
the guarantees are unaffected; only the numeric lambda1 values change.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import NonFiniteError, OutOfRangeError, ValidationError

SCORE_MSP = "msp"
SCORE_MARGIN = "margin"
SCORE_ENTROPY = "entropy"
SCORE_ENERGY = "energy"
ALL_SCORES = (SCORE_MSP, SCORE_MARGIN, SCORE_ENTROPY, SCORE_ENERGY)


@dataclass(frozen=True)
class ScoreKind:
    """Which confidence score to use, plus the softmax/energy temperature."""

    tag: str
    temperature: float = 1.0

    def __post_init__(self):
        if self.tag not in ALL_SCORES:
            raise ValidationError(f"unknown score tag {self.tag!r}; expected one of {ALL_SCORES}")
        if not self.temperature > 0.0:
            raise OutOfRangeError(f"temperature must be > 0, got {self.temperature}")


def temperature_softmax(logits, temperature: float = 1.0) -> np.ndarray:
    """Temperature-scaled softmax, computed with max-subtraction.

    Accepts a single K-vector or an (n, K) batch; softmax is taken along the
    last axis.  Shift-invariant in the logits by construction.
    """
    z = np.asarray(logits, dtype=float)
    if z.shape[-1] < 2:
        raise ValidationError(f"need K >= 2 classes, got {z.shape[-1]}")
    if not temperature > 0.0:
        raise OutOfRangeError(f"temperature must be > 0, got {temperature}")
    if not np.all(np.isfinite(z)):
        raise NonFiniteError("logits contain non-finite entries")
    z = z / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def msp(probs) -> np.ndarray | float:
    """Maximum softmax probability: max_k p_k."""
    p = np.asarray(probs, dtype=float)
    out = p.max(axis=-1)
    return float(out) if out.ndim == 0 else out


def margin(probs) -> np.ndarray | float:
    """Difference between the two largest probabilities, p_(1) - p_(2).

    Ties are resolved by value, so equal top entries give margin 0.
    """
    p = np.asarray(probs, dtype=float)
    if p.shape[-1] < 2:
        raise ValidationError(f"margin needs K >= 2 classes, got {p.shape[-1]}")
    top2 = np.partition(p, -2, axis=-1)[..., -2:]
    out = top2[..., 1] - top2[..., 0]
    return float(out) if out.ndim == 0 else out


def entropy_confidence(probs) -> np.ndarray | float:
    """Entropy flipped and normalized into [0, 1]: 1 - H(p) / log K.

    Uses the 0 * log 0 = 0 convention; a point mass scores 1, the uniform
    distribution scores 0.
    """
    p = np.asarray(probs, dtype=float)
    k = p.shape[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0.0, p * np.log(p), 0.0)
    h = -plogp.sum(axis=-1)
    out = np.clip(1.0 - h / np.log(k), 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def raw_energy(logits, temperature: float = 1.0) -> np.ndarray | float:
    """Unnormalized energy E(x) = -T * log sum_k exp(logit_k / T)."""
    z = np.asarray(logits, dtype=float) / temperature
    m = z.max(axis=-1, keepdims=True)
    lse = m + np.log(np.exp(z - m).sum(axis=-1, keepdims=True))
    out = -temperature * lse[..., 0]
    return float(out) if out.ndim == 0 else out


class EnergyScorer:
    """Energy score rescaled to a [0, 1] confidence via min-max over a
    calibration collection of logit vectors.

    Lower energy means higher confidence, so the negated energy is mapped
    through the calibration range and clipped: a test point at the
    calibration minimum energy scores 1.0, anything beyond the calibration
    range clips to 0 or 1.  If all calibration energies coincide the range
    is degenerate and every input scores the constant 0.5 (a warning is
    emitted once at fit time and ``degenerate`` is set).
    """

    def __init__(self, calib_logits, temperature: float = 1.0):
        cal = np.atleast_2d(np.asarray(calib_logits, dtype=float))
        if cal.size == 0:
            raise ValidationError("energy score needs a nonempty calibration collection")
        self.temperature = float(temperature)
        neg = -np.asarray(raw_energy(cal, self.temperature), dtype=float)
        self._lo = float(neg.min())
        self._hi = float(neg.max())
        self.degenerate = self._hi <= self._lo
        if self.degenerate:
            warnings.warn(
                "all calibration energies are equal; energy confidence degenerates to 0.5",
                RuntimeWarning,
                stacklevel=2,
            )

    def __call__(self, logits) -> np.ndarray | float:
        neg = np.asarray(raw_energy(logits, self.temperature), dtype=float)
        neg = -neg
        if self.degenerate:
            out = np.full_like(neg, 0.5)
        else:
            out = np.clip((neg - self._lo) / (self._hi - self._lo), 0.0, 1.0)
        return float(out) if out.ndim == 0 else out


def energy_confidence(logits, temperature, calib_logits) -> np.ndarray | float:
    """One-shot energy confidence; see EnergyScorer for the rescaling rule."""
    return EnergyScorer(calib_logits, temperature)(logits)


def confidence_from_logits(kind: ScoreKind, logits_cal: np.ndarray, logits_test: np.ndarray):
    """Compute the confidence score for calibration and test logits.

    Probability-based scores are plain per-example functions; the energy
    score is fitted (min-max range) on the calibration collection and then
    applied to both splits, which keeps it reusable for future test points.
    Returns ``(g_cal, g_test)`` arrays.
    """
    if kind.tag == SCORE_ENERGY:
        scorer = EnergyScorer(logits_cal, kind.temperature)
        return np.asarray(scorer(logits_cal)), np.asarray(scorer(logits_test))
    p_cal = temperature_softmax(logits_cal, kind.temperature)
    p_test = temperature_softmax(logits_test, kind.temperature)
    fn = {SCORE_MSP: msp, SCORE_MARGIN: margin, SCORE_ENTROPY: entropy_confidence}[kind.tag]
    return np.asarray(fn(p_cal)), np.asarray(fn(p_test))
