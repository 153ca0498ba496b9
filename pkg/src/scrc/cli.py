"""Command-line interface: ``scrc generate | calibrate | evaluate | sweep``.

Exit codes: 0 on success, 2 when every requested calibration was infeasible,
1 on any other error (including bad arguments).  A plain-text ``key=value``
config file (``--config``) can stand in for flags; explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .core import (
    METHOD_CRC_ALL,
    METHOD_RAND,
    METHOD_SCRC_I,
    METHOD_SCRC_T,
    InfeasibleError,
    RiskSpec,
    ScoredExample,
    ThresholdPair,
    ValidationError,
)
from .data import SynthConfig, generate, load_logits, save_logits
from .harness import ALL_SWEEPS, SweepConfig, emit, evaluate, run_sweep
from .pipeline import (
    ALL_OBJECTIVES,
    OBJECTIVE_MIN_SET_SIZE,
    CalibrationData,
    crc_all_calibrate,
    rand_calibrate,
    scrc_i_calibrate,
    scrc_t_calibrate,
)
from .scores import ALL_SCORES, ScoreKind, confidence_from_logits, temperature_softmax
from .sets import ALL_LOSSES, LOSS_ORDINAL, LossKind

METHOD_FLAGS = {
    "scrc-t": METHOD_SCRC_T,
    "scrc-i": METHOD_SCRC_I,
    "crc-all": METHOD_CRC_ALL,
    "rand": METHOD_RAND,
}


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad arguments; reclaim 2 for the
    infeasible-everything outcome by failing argument errors with 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _comma_floats(text: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in text.split(",") if tok.strip())


def _comma_strs(text: str) -> tuple[str, ...]:
    return tuple(tok.strip() for tok in text.split(",") if tok.strip())


def _add_target_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--xi", type=float, default=0.7, help="target selective coverage")
    p.add_argument("--alpha", type=float, default=0.1, help="target selective risk")
    p.add_argument("--delta", type=float, default=0.05,
                   help="confidence level for the calibration-only variant")
    p.add_argument("--eta", type=float, default=0.01, help="first-stage grid step")


def _add_score_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--score", choices=ALL_SCORES, default="margin")
    p.add_argument("--temperature", type=float, default=1.0)


def _add_loss_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--loss", choices=ALL_LOSSES, default="miscoverage")
    p.add_argument("--ordinal-weights", type=_comma_floats, default=None,
                   help="comma-separated w(0..K-1); default linear")


def _add_synth_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", type=int, default=10, help="number of classes")
    p.add_argument("--signal", type=float, default=4.0, help="true-class logit boost")
    p.add_argument("--noise", type=float, default=1.5, help="logit noise scale")
    p.add_argument("--hardness", type=float, default=0.35,
                   help="fraction of low-signal examples")


def build_parser() -> _Parser:
    parser = _Parser(prog="scrc", description=__doc__)
    parser.add_argument("--config", default=None,
                        help="key=value file supplying defaults for the flags below")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_gen = sub.add_parser("generate", help="write a synthetic logits CSV")
    _add_synth_flags(p_gen)
    p_gen.add_argument("--n", type=int, default=4000, help="number of samples")
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", required=True, help="output CSV path")

    p_cal = sub.add_parser("calibrate", help="calibrate thresholds from a logits CSV")
    p_cal.add_argument("--data", required=True, help="calibration logits CSV")
    p_cal.add_argument("--method", choices=sorted(METHOD_FLAGS), default="scrc-i")
    p_cal.add_argument("--test-g", type=float, default=None,
                       help="test confidence to pool (required for scrc-t)")
    p_cal.add_argument("--objective", choices=ALL_OBJECTIVES, default=OBJECTIVE_MIN_SET_SIZE)
    p_cal.add_argument("--no-sweep", action="store_true",
                       help="skip the lambda1 grid search")
    p_cal.add_argument("--seed", type=int, default=0, help="rng seed (rand method)")
    p_cal.add_argument("--out", default=None, help="write thresholds JSON here (default stdout)")
    _add_target_flags(p_cal)
    _add_score_flags(p_cal)
    _add_loss_flags(p_cal)

    p_eval = sub.add_parser("evaluate", help="apply thresholds to a test logits CSV")
    p_eval.add_argument("--data", required=True, help="test logits CSV")
    p_eval.add_argument("--thresholds", required=True, help="thresholds JSON from calibrate")
    p_eval.add_argument("--cal-data", default=None,
                        help="calibration logits CSV (needed for the energy score)")
    p_eval.add_argument("--seed", type=int, default=0, help="rng seed (rand selection)")
    p_eval.add_argument("--out", default=None, help="write metrics JSON here (default stdout)")
    _add_score_flags(p_eval)
    _add_loss_flags(p_eval)

    p_sweep = sub.add_parser("sweep", help="run a Monte-Carlo sweep and emit CSV/JSON")
    p_sweep.add_argument("--sweep", choices=ALL_SWEEPS, default="xi", dest="sweep_variable")
    p_sweep.add_argument("--values", default=None,
                         help="comma-separated sweep values (floats, or score tags)")
    p_sweep.add_argument("--methods", type=_comma_strs,
                         default=("scrc-t", "scrc-i", "crc-all", "rand"))
    p_sweep.add_argument("--trials", type=int, default=100)
    p_sweep.add_argument("--n-cal", type=int, default=2000)
    p_sweep.add_argument("--n-test", type=int, default=2000)
    p_sweep.add_argument("--data", default=None,
                         help="logits CSV to draw trial splits from (default: synthetic)")
    p_sweep.add_argument("--objective", choices=ALL_OBJECTIVES, default=OBJECTIVE_MIN_SET_SIZE)
    p_sweep.add_argument("--no-sweep", action="store_true")
    p_sweep.add_argument("--decouple-g", action="store_true",
                         help="replace g with an independent uniform score")
    p_sweep.add_argument("--seed", type=int, default=0, help="base seed; trial t uses seed+t")
    p_sweep.add_argument("--workers", type=int, default=1)
    p_sweep.add_argument("--format", choices=("csv", "json"), default="csv")
    p_sweep.add_argument("--out", required=True, help="trial-level output path")
    _add_target_flags(p_sweep)
    _add_score_flags(p_sweep)
    _add_loss_flags(p_sweep)
    _add_synth_flags(p_sweep)
    return parser


def read_config_file(path: str) -> list[str]:
    """Turn key=value lines into argv tokens (comments with '#', booleans
    as true/false; a false boolean contributes nothing)."""
    tokens: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected key=value, got {raw.rstrip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            flag = "--" + key.replace("_", "-")
            if value.lower() in ("true", "false", "yes", "no"):
                if value.lower() in ("true", "yes"):
                    tokens.append(flag)
            else:
                tokens.extend([flag, value])
    return tokens


def _inject_config(argv: list[str]) -> list[str]:
    """Splice config-file tokens right after the subcommand so that explicit
    flags, parsed later, win on conflict.  The --config flag itself may sit
    before or after the subcommand and is consumed here."""
    path = None
    rest: list[str] = []
    i = 0
    while i < len(argv):
        tok = argv[i]
        if tok == "--config":
            if i + 1 >= len(argv):
                raise ValidationError("--config needs a file path")
            path = argv[i + 1]
            i += 2
            continue
        if tok.startswith("--config="):
            path = tok.split("=", 1)[1]
            i += 1
            continue
        rest.append(tok)
        i += 1
    if path is None:
        return argv
    tokens = read_config_file(path)
    for i, tok in enumerate(rest):
        if not tok.startswith("-"):
            return rest[: i + 1] + tokens + rest[i + 1:]
    return rest + tokens


def _default_sweep_values(variable: str) -> tuple:
    return {
        "xi": (0.6, 0.7, 0.8, 0.9),
        "alpha": (0.05, 0.1, 0.15, 0.2),
        "delta": (0.01, 0.05, 0.1),
        "score": ("msp", "margin", "entropy", "energy"),
    }[variable]


def _loss_from_args(args) -> tuple[str, tuple[float, ...] | None]:
    return args.loss, args.ordinal_weights


def _resolve_loss(tag: str, weights, n_classes: int) -> LossKind:
    if tag == LOSS_ORDINAL:
        return LossKind.ordinal(weights) if weights else LossKind.ordinal(n_classes=n_classes)
    return LossKind.miscoverage()


def _cmd_generate(args) -> int:
    cfg = SynthConfig(
        n_classes=args.k, n_samples=args.n, signal_strength=args.signal,
        noise_scale=args.noise, hardness_mix=args.hardness, seed=args.seed,
    )
    save_logits(generate(cfg), args.out)
    print(f"wrote {args.n} samples (K={args.k}) to {args.out}")
    return 0


def _write_or_print(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, indent=1)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _cmd_calibrate(args) -> int:
    records = load_logits(args.data)
    kind = ScoreKind(args.score, args.temperature)
    g, _ = confidence_from_logits(kind, records.logits, records.logits)
    probs = temperature_softmax(records.logits, args.temperature)
    loss = _resolve_loss(*_loss_from_args(args), records.n_classes)
    spec = RiskSpec(coverage_target=args.xi, risk_target=args.alpha,
                    confidence_delta=args.delta, grid_step=args.eta)
    caldata = CalibrationData(probs, records.labels - 1, g, loss)
    method = METHOD_FLAGS[args.method]
    try:
        if method == METHOD_SCRC_T:
            if args.test_g is None:
                raise ValidationError("scrc-t calibration needs --test-g (pooled test confidence)")
            outcome = scrc_t_calibrate(caldata, args.test_g, spec, loss,
                                       args.objective, args.no_sweep)
        elif method == METHOD_SCRC_I:
            outcome = scrc_i_calibrate(caldata, spec, loss, args.objective, args.no_sweep)
        elif method == METHOD_CRC_ALL:
            outcome = crc_all_calibrate(caldata, spec, loss, args.objective)
        else:
            outcome = rand_calibrate(caldata, spec, loss, args.seed, args.objective)
    except InfeasibleError as exc:
        sys.stderr.write(f"infeasible: {exc}\n")
        return 2
    th = outcome.thresholds
    _write_or_print({
        "method": th.method,
        "lambda1": th.lambda1,
        "lambda2": th.lambda2,
        "xi_lcb": th.xi_lcb,
        "objective": outcome.objective,
        "grid_points": len(outcome.grid_trace),
    }, args.out)
    return 0


def _cmd_evaluate(args) -> int:
    records = load_logits(args.data)
    with open(args.thresholds, "r", encoding="utf-8") as fh:
        th_raw = json.load(fh)
    th = ThresholdPair(lambda1=th_raw["lambda1"], lambda2=th_raw["lambda2"],
                       method=th_raw["method"], xi_lcb=th_raw.get("xi_lcb"))
    kind = ScoreKind(args.score, args.temperature)
    cal_logits = load_logits(args.cal_data).logits if args.cal_data else records.logits
    _, g = confidence_from_logits(kind, cal_logits, records.logits)
    probs = temperature_softmax(records.logits, args.temperature)
    loss = _resolve_loss(*_loss_from_args(args), records.n_classes)
    test = [
        ScoredExample(probs=tuple(p), confidence=float(c), label=int(y))
        for p, c, y in zip(probs, g, records.labels)
    ]
    metrics = evaluate(th, test, loss, rng=np.random.default_rng(args.seed))
    _write_or_print({
        "selective_coverage": metrics.selective_coverage,
        "selective_risk": metrics.selective_risk,
        "mean_set_size_selected": metrics.mean_set_size_selected,
        "mean_set_size_rejected": metrics.mean_set_size_rejected,
        "n_selected": metrics.n_selected,
        "feasible": metrics.feasible,
    }, args.out)
    return 0


def _cmd_sweep(args) -> int:
    values: tuple
    if args.values is None:
        values = _default_sweep_values(args.sweep_variable)
    elif args.sweep_variable == "score":
        values = _comma_strs(args.values)
    else:
        values = _comma_floats(args.values)
    methods = tuple(METHOD_FLAGS[m] for m in args.methods)
    cfg = SweepConfig(
        sweep_variable=args.sweep_variable,
        values=values,
        base=RiskSpec(coverage_target=args.xi, risk_target=args.alpha,
                      confidence_delta=args.delta, grid_step=args.eta),
        methods=methods,
        n_trials=args.trials,
        score=ScoreKind(args.score, args.temperature),
        loss_tag=args.loss,
        ordinal_weights=args.ordinal_weights,
        objective=args.objective,
        no_sweep=args.no_sweep,
        synth=SynthConfig(n_classes=args.k, signal_strength=args.signal,
                          noise_scale=args.noise, hardness_mix=args.hardness),
        logits_path=args.data,
        n_cal=args.n_cal,
        n_test=args.n_test,
        base_seed=args.seed,
        decouple_g=args.decouple_g,
    )
    result = run_sweep(cfg, workers=args.workers)
    emit(result, args.format, args.out)
    n_ok = sum(1 for r in result.rows if r.feasible)
    print(f"wrote {len(result.rows)} rows ({n_ok} feasible) to {args.out}")
    if n_ok == 0:
        sys.stderr.write("every calibration in the sweep was infeasible\n")
        return 2
    return 0


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    try:
        argv = _inject_config(argv)
        args = parser.parse_args(argv)
        handler = {
            "generate": _cmd_generate,
            "calibrate": _cmd_calibrate,
            "evaluate": _cmd_evaluate,
            "sweep": _cmd_sweep,
        }[args.command]
        return handler(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    except (ValidationError, InfeasibleError, OSError, KeyError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
