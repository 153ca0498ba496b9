"""Experiment driver: seeded Monte-Carlo sweeps over targets, methods, and
scores, with CSV/JSON emission.

Protocol per (sweep value, trial): draw or split a fresh dataset from the
trial seed, calibrate every requested method on the identical calibration
split, evaluate on the identical test split, and record one row per method.
Trial ``t`` uses seed ``base_seed + t`` for its data, so differences between
methods (and between sweep values) are paired.  Trials are independent
tasks; results are merged in (sweep value, trial, method) order, so the
worker count never changes the output bytes.

The transductive method is evaluated with its per-test-point semantics:
each test point gets the thresholds its own pooled calibration produces
(the reported lambda1/lambda2 for those rows are means across test points).
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .core import (
    ALL_METHODS,
    METHOD_CRC_ALL,
    METHOD_RAND,
    METHOD_SCRC_I,
    METHOD_SCRC_T,
    InfeasibleError,
    RiskSpec,
    ScoredExample,
    ThresholdPair,
    TrialMetrics,
    ValidationError,
)
from .data import LogitRecords, SynthConfig, generate, load_logits, split
from .pipeline import (
    OBJECTIVE_MIN_SET_SIZE,
    CalibrationData,
    crc_all_calibrate,
    rand_calibrate,
    scrc_i_calibrate,
    scrc_t_calibrate_batch,
)
from .scores import ScoreKind, confidence_from_logits, temperature_softmax
from .sets import ALL_LOSSES, LOSS_ORDINAL, LossKind, pointwise_losses, set_sizes

SWEEP_XI = "xi"
SWEEP_ALPHA = "alpha"
SWEEP_DELTA = "delta"
SWEEP_SCORE = "score"
ALL_SWEEPS = (SWEEP_XI, SWEEP_ALPHA, SWEEP_DELTA, SWEEP_SCORE)

#: Seed-stream offsets so that data generation, splitting, random selection,
#: and decoupled scores never share a bit stream within a trial.
_SPLIT_SEED_OFFSET = 1 << 32
_RAND_CAL_SEED_OFFSET = 2 << 32
_RAND_EVAL_SEED_OFFSET = 3 << 32
_DECOUPLE_SEED_OFFSET = 4 << 32

TRIAL_COLUMNS = (
    "method", "sweep_variable", "sweep_value", "trial", "n_selected",
    "selective_coverage", "selective_risk", "set_size_selected",
    "set_size_rejected", "lambda1", "lambda2", "feasible",
)

_AGG_METRICS = (
    "selective_coverage", "selective_risk", "set_size_selected",
    "set_size_rejected", "lambda1", "lambda2",
)

AGG_COLUMNS = ("method", "sweep_variable", "sweep_value", "n_trials") + tuple(
    f"{name}_{stat}" for name in _AGG_METRICS for stat in ("mean", "se")
)


class ZeroSelectedWarning(UserWarning):
    """A trial selected no test points; conditional metrics are undefined."""


@dataclass(frozen=True)
class SweepConfig:
    """One experiment: which variable is swept, over which values, with
    everything else held fixed.

    ``values`` holds floats (xi/alpha/delta sweeps) or score tags (score
    sweep); the corresponding field of ``base``/``score`` is replaced per
    value.  Data comes from the synthetic generator unless ``logits_path``
    is set, in which case per-trial random splits of the file are used.
    """

    sweep_variable: str
    values: tuple
    base: RiskSpec
    methods: tuple[str, ...] = ALL_METHODS
    n_trials: int = 100
    score: ScoreKind = ScoreKind("margin")
    loss_tag: str = "miscoverage"
    ordinal_weights: tuple[float, ...] | None = None
    objective: str = OBJECTIVE_MIN_SET_SIZE
    no_sweep: bool = False
    synth: SynthConfig = SynthConfig()
    logits_path: str | None = None
    n_cal: int = 2000
    n_test: int = 2000
    base_seed: int = 0
    decouple_g: bool = False

    def __post_init__(self):
        if self.sweep_variable not in ALL_SWEEPS:
            raise ValidationError(f"unknown sweep variable {self.sweep_variable!r}")
        if not self.values:
            raise ValidationError("need at least one sweep value")
        if not self.methods:
            raise ValidationError("need at least one method")
        for m in self.methods:
            if m not in ALL_METHODS:
                raise ValidationError(f"unknown method {m!r}")
        if self.loss_tag not in ALL_LOSSES:
            raise ValidationError(f"unknown loss {self.loss_tag!r}")
        if self.n_trials < 1:
            raise ValidationError("n_trials must be >= 1")


@dataclass(frozen=True)
class TrialRow:
    """One (method, sweep value, trial) result; metric fields are None when
    the trial was infeasible or the quantity undefined."""

    method: str
    sweep_variable: str
    sweep_value: object
    trial: int
    n_selected: int | None
    selective_coverage: float | None
    selective_risk: float | None
    set_size_selected: float | None
    set_size_rejected: float | None
    lambda1: float | None
    lambda2: float | None
    feasible: bool

    @property
    def metrics(self) -> TrialMetrics | None:
        if not self.feasible:
            return None
        return TrialMetrics(
            selective_coverage=self.selective_coverage,
            selective_risk=self.selective_risk,
            mean_set_size_selected=self.set_size_selected,
            mean_set_size_rejected=self.set_size_rejected,
            n_selected=self.n_selected,
            feasible=True,
        )


@dataclass(frozen=True)
class AggregateRow:
    method: str
    sweep_variable: str
    sweep_value: object
    n_trials: int
    stats: dict  # {metric: (mean | None, se | None)}


@dataclass(frozen=True)
class SweepResult:
    config: SweepConfig
    rows: tuple[TrialRow, ...]

    def aggregates(self) -> list[AggregateRow]:
        return aggregate_rows(self.rows)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def _metrics_from_arrays(selected: np.ndarray, probs: np.ndarray,
                         labels_idx: np.ndarray, lambda2, loss: LossKind) -> TrialMetrics:
    """Aggregate per-point selection flags into TrialMetrics.

    ``lambda2`` may be scalar or per-point; rejected points get the same
    (counterfactual) threshold applied for the size comparison.
    """
    n = selected.size
    n_sel = int(selected.sum())
    if n_sel == 0:
        warnings.warn("no test points selected; conditional metrics undefined",
                      ZeroSelectedWarning, stacklevel=2)
    sizes = set_sizes(probs, lambda2).astype(float)
    losses = pointwise_losses(probs, labels_idx, lambda2, loss)
    coverage = n_sel / n
    risk = float(losses[selected].mean()) if n_sel else None
    size_sel = float(sizes[selected].mean()) if n_sel else None
    size_rej = float(sizes[~selected].mean()) if n_sel < n else None
    return TrialMetrics(
        selective_coverage=coverage,
        selective_risk=risk,
        mean_set_size_selected=size_sel,
        mean_set_size_rejected=size_rej,
        n_selected=n_sel,
        feasible=True,
    )


def evaluate(thresholds: ThresholdPair, test: Sequence[ScoredExample], loss: LossKind,
             rng: np.random.Generator | None = None) -> TrialMetrics:
    """Empirical selective coverage, risk, and set sizes of fixed thresholds.

    RAND thresholds select by coin flip at rate lambda1 and need an rng.
    With zero selected points the conditional metrics are None (flagged, not
    fabricated); with zero rejected points the rejected size is None.
    """
    if not test:
        raise ValidationError("test set must be nonempty")
    if any(e.label is None for e in test):
        raise ValidationError("evaluation requires labeled test examples")
    probs = np.asarray([e.probs for e in test], dtype=float)
    labels_idx = np.asarray([e.label - 1 for e in test], dtype=int)
    g = np.asarray([e.confidence for e in test], dtype=float)
    if thresholds.method == METHOD_RAND:
        if rng is None:
            raise ValidationError("RAND thresholds need an rng for selection coin flips")
        selected = rng.random(g.size) >= 1.0 - thresholds.lambda1
    else:
        selected = g >= 1.0 - thresholds.lambda1
    return _metrics_from_arrays(selected, probs, labels_idx, thresholds.lambda2, loss)


# ---------------------------------------------------------------------------
# Per-trial execution
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _TrialData:
    probs_cal: np.ndarray
    labels_cal: np.ndarray  # 0-based
    g_cal: np.ndarray
    probs_test: np.ndarray
    labels_test: np.ndarray  # 0-based
    g_test: np.ndarray


def _prepare_trial_data(cfg: SweepConfig, score: ScoreKind, trial_seed: int,
                        records: LogitRecords | None) -> _TrialData:
    if records is None:
        total = cfg.n_cal + cfg.n_test
        synth = replace(cfg.synth, n_samples=total, seed=trial_seed)
        records = generate(synth)
    frac = (cfg.n_cal / len(records), cfg.n_test / len(records))
    cal, test = split(records, frac, seed=_SPLIT_SEED_OFFSET + trial_seed)
    g_cal, g_test = confidence_from_logits(score, cal.logits, test.logits)
    if cfg.decouple_g:
        rng = np.random.default_rng(_DECOUPLE_SEED_OFFSET + trial_seed)
        g_cal = rng.random(len(cal))
        g_test = rng.random(len(test))
    return _TrialData(
        probs_cal=temperature_softmax(cal.logits, score.temperature),
        labels_cal=cal.labels - 1,
        g_cal=g_cal,
        probs_test=temperature_softmax(test.logits, score.temperature),
        labels_test=test.labels - 1,
        g_test=g_test,
    )


def _resolve_loss(cfg: SweepConfig, n_classes: int) -> LossKind:
    if cfg.loss_tag == LOSS_ORDINAL:
        if cfg.ordinal_weights is not None:
            return LossKind.ordinal(cfg.ordinal_weights)
        return LossKind.ordinal(n_classes=n_classes)
    return LossKind.miscoverage()


def _infeasible_row(method: str, cfg: SweepConfig, value, trial: int) -> TrialRow:
    return TrialRow(
        method=method, sweep_variable=cfg.sweep_variable, sweep_value=value,
        trial=trial, n_selected=None, selective_coverage=None, selective_risk=None,
        set_size_selected=None, set_size_rejected=None, lambda1=None, lambda2=None,
        feasible=False,
    )


def _row_from_metrics(method: str, cfg: SweepConfig, value, trial: int,
                      metrics: TrialMetrics, lambda1: float, lambda2: float) -> TrialRow:
    return TrialRow(
        method=method, sweep_variable=cfg.sweep_variable, sweep_value=value,
        trial=trial, n_selected=metrics.n_selected,
        selective_coverage=metrics.selective_coverage,
        selective_risk=metrics.selective_risk,
        set_size_selected=metrics.mean_set_size_selected,
        set_size_rejected=metrics.mean_set_size_rejected,
        lambda1=lambda1, lambda2=lambda2, feasible=True,
    )


def _run_trial(cfg: SweepConfig, value, trial: int,
               records: LogitRecords | None) -> list[TrialRow]:
    trial_seed = cfg.base_seed + trial
    spec = cfg.base
    score = cfg.score
    if cfg.sweep_variable == SWEEP_XI:
        spec = replace(spec, coverage_target=float(value))
    elif cfg.sweep_variable == SWEEP_ALPHA:
        spec = replace(spec, risk_target=float(value))
    elif cfg.sweep_variable == SWEEP_DELTA:
        spec = replace(spec, confidence_delta=float(value))
    else:
        score = ScoreKind(str(value), cfg.score.temperature)

    data = _prepare_trial_data(cfg, score, trial_seed, records)
    loss = _resolve_loss(cfg, data.probs_cal.shape[1])
    caldata = CalibrationData(data.probs_cal, data.labels_cal, data.g_cal, loss)

    rows: list[TrialRow] = []
    for method in cfg.methods:
        try:
            if method == METHOD_SCRC_T:
                outcomes = scrc_t_calibrate_batch(
                    caldata, data.g_test, spec, loss, cfg.objective, cfg.no_sweep
                )
                lam1 = np.asarray([o.thresholds.lambda1 for o in outcomes])
                lam2 = np.asarray([o.thresholds.lambda2 for o in outcomes])
                selected = data.g_test >= 1.0 - lam1
                metrics = _metrics_from_arrays(
                    selected, data.probs_test, data.labels_test, lam2, loss
                )
                rows.append(_row_from_metrics(
                    method, cfg, value, trial, metrics,
                    float(lam1.mean()), float(lam2.mean()),
                ))
                continue
            if method == METHOD_SCRC_I:
                outcome = scrc_i_calibrate(caldata, spec, loss, cfg.objective, cfg.no_sweep)
            elif method == METHOD_CRC_ALL:
                outcome = crc_all_calibrate(caldata, spec, loss, cfg.objective)
            elif method == METHOD_RAND:
                outcome = rand_calibrate(
                    caldata, spec, loss, _RAND_CAL_SEED_OFFSET + trial_seed, cfg.objective
                )
            th = outcome.thresholds
            if method == METHOD_RAND:
                rng = np.random.default_rng(_RAND_EVAL_SEED_OFFSET + trial_seed)
                selected = rng.random(data.g_test.size) >= 1.0 - th.lambda1
            else:
                selected = data.g_test >= 1.0 - th.lambda1
            metrics = _metrics_from_arrays(
                selected, data.probs_test, data.labels_test, th.lambda2, loss
            )
            rows.append(_row_from_metrics(
                method, cfg, value, trial, metrics, th.lambda1, th.lambda2
            ))
        except InfeasibleError:
            rows.append(_infeasible_row(method, cfg, value, trial))
    return rows


def run_sweep(cfg: SweepConfig, workers: int = 1) -> SweepResult:
    """Run the full sweep; deterministic for a fixed config at any worker
    count (trials are merged in declaration order)."""
    records = load_logits(cfg.logits_path) if cfg.logits_path else None
    tasks = [(vi, trial) for vi in range(len(cfg.values)) for trial in range(cfg.n_trials)]
    results: dict[tuple[int, int], list[TrialRow]] = {}
    if workers <= 1:
        for vi, trial in tasks:
            results[(vi, trial)] = _run_trial(cfg, cfg.values[vi], trial, records)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {
                key: pool.submit(_run_trial, cfg, cfg.values[key[0]], key[1], records)
                for key in tasks
            }
            for key, fut in futures.items():
                results[key] = fut.result()
    rows: list[TrialRow] = []
    for key in tasks:
        rows.extend(results[key])
    return SweepResult(config=cfg, rows=tuple(rows))


# ---------------------------------------------------------------------------
# Aggregation and emission
# ---------------------------------------------------------------------------


def _mean_se(values: list[float]) -> tuple[float | None, float | None]:
    if not values:
        return None, None
    mean = float(np.mean(values))
    if len(values) < 2:
        return mean, None
    se = float(np.std(values, ddof=1) / math.sqrt(len(values)))
    return mean, se


def aggregate_rows(rows: Sequence[TrialRow]) -> list[AggregateRow]:
    """Per (method, sweep value) means and standard errors, computed over
    the trials where each metric is defined."""
    groups: dict[tuple, list[TrialRow]] = {}
    order: list[tuple] = []
    for row in rows:
        key = (row.method, row.sweep_variable, row.sweep_value)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(row)
    out = []
    for key in order:
        grp = groups[key]
        stats = {}
        for name in _AGG_METRICS:
            vals = [getattr(r, name) for r in grp if getattr(r, name) is not None]
            stats[name] = _mean_se(vals)
        out.append(AggregateRow(
            method=key[0], sweep_variable=key[1], sweep_value=key[2],
            n_trials=len(grp), stats=stats,
        ))
    return out


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _trial_record(row: TrialRow) -> dict:
    return {col: getattr(row, col) for col in TRIAL_COLUMNS}


def _agg_record(agg: AggregateRow) -> dict:
    rec = {
        "method": agg.method,
        "sweep_variable": agg.sweep_variable,
        "sweep_value": agg.sweep_value,
        "n_trials": agg.n_trials,
    }
    for name in _AGG_METRICS:
        mean, se = agg.stats[name]
        rec[f"{name}_mean"] = mean
        rec[f"{name}_se"] = se
    return rec


def agg_path_for(path: str) -> str:
    """Aggregate file written alongside the trial file: stem + '_agg'."""
    stem, dot, ext = str(path).rpartition(".")
    if not dot:
        return f"{path}_agg"
    return f"{stem}_agg.{ext}"


def emit(result: SweepResult, fmt: str, path: str) -> None:
    """Write trial rows to ``path`` and aggregates to the '_agg' sibling.

    CSV columns are fixed (`TRIAL_COLUMNS` / `AGG_COLUMNS`); JSON mirrors the
    same records as a list of objects.  Floats are written with repr so a
    parse recovers them exactly and aggregates are recomputable bit-for-bit.
    """
    fmt = fmt.lower()
    if fmt not in ("csv", "json"):
        raise ValidationError(f"unknown format {fmt!r}; expected csv or json")
    trial_records = [_trial_record(r) for r in result.rows]
    agg_records = [_agg_record(a) for a in result.aggregates()]
    if fmt == "csv":
        _write_csv(path, TRIAL_COLUMNS, trial_records)
        _write_csv(agg_path_for(path), AGG_COLUMNS, agg_records)
    else:
        _write_json(path, trial_records)
        _write_json(agg_path_for(path), agg_records)


def _write_csv(path, columns, records) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns)
            for rec in records:
                writer.writerow([_fmt(rec[c]) for c in columns])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def _write_json(path, records) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(records, fh, indent=1)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def read_trial_csv(path) -> list[dict]:
    """Parse a trial CSV back into typed records (inverse of emit)."""
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            parsed = dict(rec)
            for col in ("n_selected", "trial"):
                parsed[col] = int(rec[col]) if rec[col] != "" else None
            for col in ("selective_coverage", "selective_risk", "set_size_selected",
                        "set_size_rejected", "lambda1", "lambda2"):
                parsed[col] = float(rec[col]) if rec[col] != "" else None
            parsed["feasible"] = rec["feasible"] == "true"
            out.append(parsed)
    return out
