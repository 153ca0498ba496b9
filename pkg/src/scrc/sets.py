"""Prediction-set construction and the bounded, monotone set losses.

The set rule is a closed probability threshold,

    C(x; lambda2) = {k : p_k >= 1 - lambda2},

which is nested in lambda2, so every loss defined here is non-increasing in
lambda2 and bounded in [0, 1] -- the two properties the second-stage risk
control needs.  Empty sets are legal (small lambda2) and carry loss 1.

Scalar functions below work on explicit sets with 1-based class indices;
the ``*_losses`` / ``set_sizes`` helpers are the vectorized equivalents used
by the calibrators, operating on (n, K) probability matrices and 0-based
label arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._numeric import complement_threshold
from .core import OutOfRangeError, ValidationError

LOSS_MISCOVERAGE = "miscoverage"
LOSS_ORDINAL = "ordinal"
ALL_LOSSES = (LOSS_MISCOVERAGE, LOSS_ORDINAL)


def linear_ordinal_weights(n_classes: int) -> tuple[float, ...]:
    """Default ordinal weight table w(d) = d / (K - 1)."""
    if n_classes < 2:
        raise ValidationError(f"need K >= 2 classes, got {n_classes}")
    return tuple(d / (n_classes - 1) for d in range(n_classes))


@dataclass(frozen=True)
class LossKind:
    """Loss selector for the second stage.

    ``ordinal_weights`` maps ordinal distance d in {0..K-1} to a penalty,
    non-decreasing with w(0) = 0 and max 1; required for (and only for) the
    ordinal loss.
    """

    tag: str
    ordinal_weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.tag not in ALL_LOSSES:
            raise ValidationError(f"unknown loss tag {self.tag!r}; expected one of {ALL_LOSSES}")
        if self.tag == LOSS_MISCOVERAGE:
            if self.ordinal_weights is not None:
                raise ValidationError("miscoverage loss takes no weight table")
            return
        if self.ordinal_weights is None:
            raise ValidationError("ordinal loss requires a weight table (see linear_ordinal_weights)")
        w = tuple(float(x) for x in self.ordinal_weights)
        object.__setattr__(self, "ordinal_weights", w)
        if len(w) < 2:
            raise ValidationError("weight table needs at least 2 entries")
        if w[0] != 0.0:
            raise ValidationError(f"w(0) must be 0, got {w[0]}")
        if any(b < a for a, b in zip(w, w[1:])):
            raise ValidationError("weight table must be non-decreasing")
        if max(w) != 1.0:
            raise OutOfRangeError(f"max weight must be 1 to keep the loss in [0, 1], got {max(w)}")

    @classmethod
    def miscoverage(cls) -> "LossKind":
        return cls(LOSS_MISCOVERAGE)

    @classmethod
    def ordinal(cls, weights=None, n_classes: int | None = None) -> "LossKind":
        if weights is None:
            if n_classes is None:
                raise ValidationError("ordinal loss needs explicit weights or n_classes")
            weights = linear_ordinal_weights(n_classes)
        return cls(LOSS_ORDINAL, tuple(weights))


def prediction_set(probs, lambda2: float) -> tuple[int, ...]:
    """Classes whose probability clears the closed threshold 1 - lambda2.

    Returns sorted 1-based indices; nested in lambda2 (larger lambda2 never
    removes a class).
    """
    if not 0.0 <= lambda2 <= 1.0:
        raise OutOfRangeError(f"lambda2 {lambda2} outside [0, 1]")
    p = np.asarray(probs, dtype=float)
    return tuple(int(k) for k in np.flatnonzero(p >= 1.0 - lambda2) + 1)


def set_size(labels) -> int:
    """Cardinality of a prediction set."""
    return len(labels)


def miscoverage_loss(labels, y: int) -> float:
    """0/1 loss: 0 iff the true label y is in the set."""
    return 0.0 if y in labels else 1.0


def weighted_ordinal_loss(labels, y: int, weights) -> float:
    """w(min ordinal distance from y to the set); 1 for the empty set.

    Reduces to miscoverage when w is the 0/1 step.  Non-increasing as the
    set grows because the minimum distance can only shrink.
    """
    w = tuple(weights)
    if not labels:
        return 1.0
    d = min(abs(int(k) - int(y)) for k in labels)
    return float(w[d])


# ---------------------------------------------------------------------------
# Vectorized equivalents over (n, K) probability matrices, 0-based labels.
# ---------------------------------------------------------------------------


def set_sizes(probs: np.ndarray, lambda2) -> np.ndarray:
    """Per-example |C(x; lambda2)| for an (n, K) probability matrix.

    ``lambda2`` may be a scalar or an (n,) vector of per-example thresholds.
    """
    lam2 = np.asarray(lambda2, dtype=float)
    if lam2.ndim == 1:
        lam2 = lam2[:, None]
    return (np.asarray(probs, dtype=float) >= 1.0 - lam2).sum(axis=-1)


def ordinal_entry_thresholds(probs: np.ndarray, labels_idx: np.ndarray) -> np.ndarray:
    """Smallest lambda2 at which a class within distance d of the label enters.

    Returns an (n, K) matrix t with t[i, d] = 1 - max_{|k - y_i| <= d} p_ik,
    non-increasing in d.  The per-example ordinal loss at lambda2 is then
    w(first d with t[i, d] <= lambda2), or 1 if no window is included yet.
    """
    p = np.asarray(probs, dtype=float)
    y = np.asarray(labels_idx)
    n, k = p.shape
    rows = np.arange(n)
    best = p[rows, y].copy()
    t = np.empty((n, k))
    t[:, 0] = complement_threshold(best)
    for d in range(1, k):
        left = y - d
        right = y + d
        lv = np.where(left >= 0, p[rows, np.clip(left, 0, k - 1)], -np.inf)
        rv = np.where(right < k, p[rows, np.clip(right, 0, k - 1)], -np.inf)
        np.maximum(best, np.maximum(lv, rv), out=best)
        t[:, d] = complement_threshold(best)
    return t


def pointwise_losses(probs: np.ndarray, labels_idx: np.ndarray, lambda2,
                     loss: LossKind) -> np.ndarray:
    """Per-example loss of C(x; lambda2) against the true labels.

    ``lambda2`` may be a scalar or an (n,) vector of per-example thresholds.
    """
    p = np.asarray(probs, dtype=float)
    y = np.asarray(labels_idx)
    lam2 = np.asarray(lambda2, dtype=float)
    if loss.tag == LOSS_MISCOVERAGE:
        p_true = p[np.arange(p.shape[0]), y]
        return (p_true < 1.0 - lam2).astype(float)
    t = ordinal_entry_thresholds(p, y)
    w = np.asarray(loss.ordinal_weights, dtype=float)
    k = p.shape[1]
    if w.size != k:
        raise ValidationError(f"weight table has {w.size} entries for K={k} classes")
    if lam2.ndim == 1:
        lam2 = lam2[:, None]
    d_min = (t > lam2).sum(axis=1)
    return np.where(d_min >= k, 1.0, w[np.minimum(d_min, k - 1)])


def loss_step_points(probs: np.ndarray, labels_idx: np.ndarray, loss: LossKind):
    """Describe each example's loss as a step function of lambda2.

    Every loss here is piecewise constant in lambda2, starting at 1 (empty
    set) and dropping at known thresholds.  Returns ``(t, delta)`` arrays of
    equal shape: crossing lambda2 = t[i, j] (closed) adds delta[i, j] <= 0 to
    example i's loss.  Summing all deltas with t <= lambda2 on top of the
    initial total (= number of examples) reproduces the empirical loss sum
    exactly, which is what the threshold solver scans.
    """
    p = np.asarray(probs, dtype=float)
    y = np.asarray(labels_idx)
    n, k = p.shape
    if loss.tag == LOSS_MISCOVERAGE:
        t = complement_threshold(p[np.arange(n), y])[:, None]
        delta = np.full((n, 1), -1.0)
        return t, delta
    w = np.asarray(loss.ordinal_weights, dtype=float)
    if w.size != k:
        raise ValidationError(f"weight table has {w.size} entries for K={k} classes")
    t = ordinal_entry_thresholds(p, y)
    level_after = w[None, :]
    level_before = np.concatenate([w[1:], [1.0]])[None, :]
    delta = np.broadcast_to(level_after - level_before, (n, k)).copy()
    return t, delta
