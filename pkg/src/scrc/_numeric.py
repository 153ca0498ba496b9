"""Floating-point helper shared by the threshold solvers."""

from __future__ import annotations

import numpy as np


def complement_threshold(values):
    """Smallest float t such that 1.0 - t <= v holds in float arithmetic.

    The exact infimum of {t : v >= 1 - t} is 1 - v, but the rounded
    ``1.0 - v`` can land one ulp short, so that re-evaluating the closed
    predicate ``v >= 1.0 - t`` at the returned threshold fails.  Nudging up
    by ulps until the predicate holds keeps every solver candidate exactly
    consistent with the selection / set-membership comparisons.
    """
    v = np.asarray(values, dtype=float)
    t = 1.0 - v
    while True:
        bad = (1.0 - t) > v
        if not bad.any():
            break
        t = np.where(bad, np.nextafter(t, 1.0), t)
    return float(t) if t.ndim == 0 else t
