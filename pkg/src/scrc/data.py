"""Synthetic logit generation and logits-file ingestion.

The generator draws i.i.d. (logits, label) pairs with a controllable
coupling between how separable an example is and how confident any
logit-derived score will be: a ``hardness_mix`` fraction of examples gets
its true-class logit boost shrunk to 20% of ``signal_strength``, so
low-confidence examples are also the ones with diffuse probabilities.
That coupling is what makes selected examples carry smaller prediction sets
than rejected ones; pass hardness_mix=0 for a homogeneous population.

File format: CSV with header ``logit_1,...,logit_K,label``, labels 1-based,
UTF-8, LF line endings.  This is the bridge for real model logits.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .core import ValidationError

HARD_SIGNAL_FACTOR = 0.2


class LogitsParseError(ValidationError):
    """Logits file could not be parsed; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class InconsistentWidthError(LogitsParseError):
    """A row's logit count disagrees with the header."""


class LabelOutOfRangeError(LogitsParseError):
    """A label falls outside the 1-based range {1..K}."""


class EmptySplitError(ValidationError):
    """A requested split would leave a partition empty."""


@dataclass(frozen=True)
class SynthConfig:
    """Controls for the synthetic generator; deterministic given ``seed``."""

    n_classes: int = 10
    n_samples: int = 4000
    signal_strength: float = 4.0
    noise_scale: float = 1.5
    hardness_mix: float = 0.35
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValidationError(f"need K >= 2 classes, got {self.n_classes}")
        if self.n_samples < 1:
            raise ValidationError(f"need n_samples >= 1, got {self.n_samples}")
        if self.signal_strength < 0.0:
            raise ValidationError("signal_strength must be >= 0")
        if not self.noise_scale > 0.0:
            raise ValidationError("noise_scale must be > 0")
        if not 0.0 <= self.hardness_mix <= 1.0:
            raise ValidationError("hardness_mix must be in [0, 1]")


@dataclass(frozen=True)
class LogitRecords:
    """Array-backed (logits, label) records; labels are 1-based.

    Iterates as (logit_row, label) tuples so it can be consumed anywhere a
    plain list of pairs is expected.
    """

    logits: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        logits = np.asarray(self.logits, dtype=float)
        labels = np.asarray(self.labels, dtype=int)
        if logits.ndim != 2 or logits.shape[1] < 2:
            raise ValidationError(f"logits must be (n, K>=2), got shape {logits.shape}")
        if labels.shape != (logits.shape[0],):
            raise ValidationError("labels length must match the number of rows")
        if labels.size and (labels.min() < 1 or labels.max() > logits.shape[1]):
            raise LabelOutOfRangeError(
                f"labels must be in 1..{logits.shape[1]}, found range "
                f"[{labels.min()}, {labels.max()}]"
            )
        object.__setattr__(self, "logits", logits)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.labels.size

    def __iter__(self):
        for row, label in zip(self.logits, self.labels):
            yield row, int(label)

    @property
    def n_classes(self) -> int:
        return self.logits.shape[1]

    def subset(self, idx) -> "LogitRecords":
        return LogitRecords(self.logits[idx], self.labels[idx])


def generate(config: SynthConfig) -> LogitRecords:
    """Draw i.i.d. samples: uniform label, Gaussian logits, true-class boost.

    Draw order (labels, hardness flags, noise) is fixed so a seed pins the
    output byte-for-byte.
    """
    rng = np.random.default_rng(config.seed)
    n, k = config.n_samples, config.n_classes
    labels = rng.integers(1, k + 1, size=n)
    hard = rng.random(n) < config.hardness_mix
    logits = rng.normal(0.0, config.noise_scale, size=(n, k))
    boost = np.where(hard, HARD_SIGNAL_FACTOR * config.signal_strength, config.signal_strength)
    logits[np.arange(n), labels - 1] += boost
    return LogitRecords(logits=logits, labels=labels)


def save_logits(records: LogitRecords, path) -> None:
    """Write records in the CSV interchange format (1-based labels)."""
    k = records.n_classes
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"logit_{j}" for j in range(1, k + 1)] + ["label"])
        for row, label in records:
            writer.writerow([repr(float(v)) for v in row] + [label])


def load_logits(path) -> LogitRecords:
    """Parse a logits CSV; K is inferred from the header.

    Raises LogitsParseError (with the line number) on malformed numbers,
    InconsistentWidthError when a row's width disagrees with the header, and
    LabelOutOfRangeError for labels outside {1..K}.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise LogitsParseError("empty file", line=1) from None
        if len(header) < 3 or header[-1].strip().lower() != "label":
            raise LogitsParseError(
                f"expected header logit_1,...,logit_K,label, got {header!r}", line=1
            )
        k = len(header) - 1
        logits: list[list[float]] = []
        labels: list[int] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != k + 1:
                raise InconsistentWidthError(
                    f"expected {k} logits + label, got {len(row)} fields", line=lineno
                )
            try:
                values = [float(v) for v in row[:k]]
                label = int(row[k])
            except ValueError as exc:
                raise LogitsParseError(str(exc), line=lineno) from None
            if not 1 <= label <= k:
                raise LabelOutOfRangeError(
                    f"label {label} outside 1..{k}", line=lineno
                )
            logits.append(values)
            labels.append(label)
    if not labels:
        raise LogitsParseError("no data rows", line=2)
    return LogitRecords(logits=np.asarray(logits), labels=np.asarray(labels))


def split(records: LogitRecords, fractions: tuple[float, float], seed: int):
    """Disjoint uniformly random (calibration, test) subsets.

    ``fractions`` are the calibration and test shares; they must be positive
    and sum to at most 1.  Deterministic given the seed.
    """
    f_cal, f_test = fractions
    if f_cal <= 0.0 or f_test <= 0.0:
        raise EmptySplitError(f"fractions must be positive, got {fractions}")
    if f_cal + f_test > 1.0 + 1e-12:
        raise ValidationError(f"fractions sum to {f_cal + f_test} > 1")
    n = len(records)
    n_cal = int(round(f_cal * n))
    n_test = min(int(round(f_test * n)), n - n_cal)
    if n_cal < 1 or n_test < 1:
        raise EmptySplitError(
            f"split of {n} records into fractions {fractions} leaves an empty part"
        )
    perm = np.random.default_rng(seed).permutation(n)
    return records.subset(perm[:n_cal]), records.subset(perm[n_cal:n_cal + n_test])
