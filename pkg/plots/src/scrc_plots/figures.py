"""Render sweep aggregate CSVs into static figure panels.

Input contract: the aggregate CSV written by ``scrc sweep`` (the ``_agg``
file), with columns method, sweep_variable, sweep_value, n_trials and
``<metric>_mean`` / ``<metric>_se`` pairs.  One file may carry rows from
several sweeps; each panel filters the sweep variable it plots.  Error bars
are +/- 1 SE; coverage and risk panels draw a dashed reference line at the
target (the identity, since the target is the swept value).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

KIND_COVERAGE_VS_XI = "coverage-vs-xi"
KIND_RISK_VS_ALPHA = "risk-vs-alpha"
KIND_SET_SIZE = "set-size"
KIND_SCORE_COMPARISON = "score-comparison"
KIND_DELTA_TABLE = "delta-table"
ALL_KINDS = (
    KIND_COVERAGE_VS_XI,
    KIND_RISK_VS_ALPHA,
    KIND_SET_SIZE,
    KIND_SCORE_COMPARISON,
    KIND_DELTA_TABLE,
)

REQUIRED_COLUMNS = (
    "method", "sweep_variable", "sweep_value", "n_trials",
    "selective_coverage_mean", "selective_coverage_se",
    "selective_risk_mean", "selective_risk_se",
    "set_size_selected_mean", "set_size_selected_se",
    "set_size_rejected_mean", "set_size_rejected_se",
)

FIGSIZE = (7.0, 4.2)


class SchemaMismatchError(ValueError):
    """Input CSV does not carry the aggregate schema; lists missing columns."""

    def __init__(self, missing):
        self.missing = tuple(missing)
        super().__init__(f"aggregate CSV is missing columns: {', '.join(self.missing)}")


class EmptyPanelError(ValueError):
    """No aggregate rows match the requested panel."""


@dataclass(frozen=True)
class FigureSpec:
    input_csv: str
    kind: str
    output_path: str

    def __post_init__(self):
        if self.kind not in ALL_KINDS:
            raise ValueError(f"unknown panel kind {self.kind!r}; expected one of {ALL_KINDS}")


def load_aggregate(path: str) -> list[dict]:
    """Parse an aggregate CSV, enforcing the schema contract."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise SchemaMismatchError(missing)
        rows = []
        for rec in reader:
            row = dict(rec)
            for col in header:
                if col.endswith("_mean") or col.endswith("_se"):
                    row[col] = float(rec[col]) if rec[col] not in ("", None) else None
            rows.append(row)
    return rows


def _select(rows, sweep_variable):
    out = [r for r in rows if r["sweep_variable"] == sweep_variable]
    if not out:
        raise EmptyPanelError(f"no rows with sweep_variable={sweep_variable!r}")
    return out


def _methods(rows):
    seen = []
    for r in rows:
        if r["method"] not in seen:
            seen.append(r["method"])
    return seen


def _series(rows, method, metric):
    pts = [(float(r["sweep_value"]), r[f"{metric}_mean"], r[f"{metric}_se"])
           for r in rows if r["method"] == method and r[f"{metric}_mean"] is not None]
    pts.sort(key=lambda p: p[0])
    x = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    se = np.array([0.0 if p[2] is None else p[2] for p in pts])
    return x, y, se


def _target_line_panel(rows, sweep_variable, metric, ylabel, out):
    fig, ax = plt.subplots(figsize=FIGSIZE)
    for method in _methods(rows):
        x, y, se = _series(rows, method, metric)
        if x.size:
            ax.errorbar(x, y, yerr=se, marker="o", capsize=3, label=method)
    targets = sorted({float(r["sweep_value"]) for r in rows})
    ax.plot(targets, targets, linestyle="--", color="gray", label="target")
    ax.set_xlabel(sweep_variable)
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out)
    plt.close(fig)


def _render_coverage_vs_xi(rows, out):
    rows = _select(rows, "xi")
    _target_line_panel(rows, "xi", "selective_coverage", "selective coverage", out)


def _render_risk_vs_alpha(rows, out):
    rows = _select(rows, "alpha")
    _target_line_panel(rows, "alpha", "selective_risk", "selective risk", out)


def _render_set_size(rows, out):
    for variable in ("xi", "alpha"):
        matching = [r for r in rows if r["sweep_variable"] == variable]
        if matching:
            rows = matching
            break
    else:
        raise EmptyPanelError("no xi or alpha sweep rows for the set-size panel")
    fig, ax = plt.subplots(figsize=FIGSIZE)
    for method in _methods(rows):
        x, y, se = _series(rows, method, "set_size_selected")
        if x.size:
            line = ax.errorbar(x, y, yerr=se, marker="o", capsize=3,
                               label=f"{method} selected")
            xr, yr, ser = _series(rows, method, "set_size_rejected")
            if xr.size:
                ax.errorbar(xr, yr, yerr=ser, marker="s", capsize=3, linestyle="--",
                            color=line.lines[0].get_color(), label=f"{method} rejected")
    ax.set_xlabel(variable)
    ax.set_ylabel("mean prediction set size")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out)
    plt.close(fig)


def _render_score_comparison(rows, out):
    rows = _select(rows, "score")
    scores = []
    for r in rows:
        if r["sweep_value"] not in scores:
            scores.append(r["sweep_value"])
    methods = _methods(rows)
    fig, ax = plt.subplots(figsize=FIGSIZE)
    width = 0.8 / max(len(methods), 1)
    xs = np.arange(len(scores))
    for j, method in enumerate(methods):
        means, ses = [], []
        for s in scores:
            match = [r for r in rows if r["method"] == method and r["sweep_value"] == s]
            means.append(match[0]["set_size_selected_mean"] if match else np.nan)
            ses.append(match[0]["set_size_selected_se"] or 0.0 if match else 0.0)
        ax.bar(xs + (j - (len(methods) - 1) / 2) * width, means, width,
               yerr=ses, capsize=3, label=method)
    ax.set_xticks(xs)
    ax.set_xticklabels(scores)
    ax.set_xlabel("selection score")
    ax.set_ylabel("mean prediction set size (selected)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out)
    plt.close(fig)


def delta_table_cells(rows):
    """Cells for the delta-sensitivity table: 2 metric rows x one column per
    delta value, calibration-only method only."""
    rows = _select(rows, "delta")
    rows = [r for r in rows if r["method"] == "SCRC-I"] or rows
    deltas = sorted({float(r["sweep_value"]) for r in rows})
    by_delta = {float(r["sweep_value"]): r for r in rows}
    risk = [by_delta[d]["selective_risk_mean"] for d in deltas]
    size = [by_delta[d]["set_size_selected_mean"] for d in deltas]
    col_labels = [f"delta={d:g}" for d in deltas]
    row_labels = ["empirical risk", "prediction set size"]
    cells = [
        [f"{v:.4f}" if v is not None else "-" for v in risk],
        [f"{v:.3f}" if v is not None else "-" for v in size],
    ]
    return row_labels, col_labels, cells


def _render_delta_table(rows, out):
    row_labels, col_labels, cells = delta_table_cells(rows)
    fig, ax = plt.subplots(figsize=(6.0, 1.8))
    ax.axis("off")
    table = ax.table(cellText=cells, rowLabels=row_labels, colLabels=col_labels,
                     loc="center")
    table.scale(1.0, 1.4)
    fig.tight_layout()
    fig.savefig(out)
    plt.close(fig)


_RENDERERS = {
    KIND_COVERAGE_VS_XI: _render_coverage_vs_xi,
    KIND_RISK_VS_ALPHA: _render_risk_vs_alpha,
    KIND_SET_SIZE: _render_set_size,
    KIND_SCORE_COMPARISON: _render_score_comparison,
    KIND_DELTA_TABLE: _render_delta_table,
}


def render(spec: FigureSpec) -> str:
    """Render one panel; returns the output path."""
    rows = load_aggregate(spec.input_csv)
    if not rows:
        raise EmptyPanelError(f"{spec.input_csv} has no aggregate rows")
    _RENDERERS[spec.kind](rows, spec.output_path)
    return spec.output_path
