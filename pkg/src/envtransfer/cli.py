"""Command-line entry point.

Exit codes: 0 success, 1 usage or scenario error, 2 data error,
3 numeric failure. Diagnostics are a single line on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .data import aggregate, format_float, load_dataset, make_pair, OPTION_PREFIX
from .errors import DataError, EnvTransferError, UsageError
from .learners import TransferModel, fit_linear_transfer, predict_transfer
from .metrics import AnalysisParams, analyze_pair
from .report import (
    FORMATS,
    ReportRow,
    Thresholds,
    classify,
    load_report_json,
    reclassify,
    render,
    row_to_dict,
    thresholds_dict,
)
from .synth import random_scenario, write_scenario


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.exit(1, f"{self.prog}: error: {message} (see --help)\n")


def _fraction(low: float, high: float, name: str):
    def parse(text: str) -> float:
        try:
            value = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be a number") from None
        if not low < value < high:
            raise argparse.ArgumentTypeError(f"{name} must lie in ({low}, {high})")
        return value
    return parse


def _add_threshold_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--corr-threshold", type=_fraction(-1, 1.0000001, "corr-threshold"),
                   default=0.9, help="m1 cut-off for LinearTransfer (default 0.9)")
    p.add_argument("--kl-threshold", type=_fraction(0, float("inf"), "kl-threshold"),
                   default=3.0, help="m2 cut-off for NonLinearCandidate (default 3)")
    p.add_argument("--importance-threshold", type=float, default=0.8)
    p.add_argument("--interaction-threshold", type=float, default=0.8)
    p.add_argument("--invalid-threshold", type=float, default=0.8)


def _thresholds(args) -> Thresholds:
    return Thresholds(args.corr_threshold, args.kl_threshold, args.importance_threshold,
                      args.interaction_threshold, args.invalid_threshold)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="envtransfer", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("analyze", help="compute the metric suite for a source/target pair")
    p.add_argument("--source", required=True, type=Path)
    p.add_argument("--target", required=True, type=Path)
    p.add_argument("--manifest", type=Path,
                   help="pair manifest with source/target entries (as written by synth)")
    p.add_argument("--source-manifest", type=Path)
    p.add_argument("--target-manifest", type=Path)
    p.add_argument("--label", default=None, help="environment change label")
    p.add_argument("--severity", choices=("S", "SM", "M", "L", "VL"), default=None)
    p.add_argument("--out", required=True, type=Path, help="rendered report path")
    p.add_argument("--suite-out", type=Path,
                   help="metric suite JSON path (default: <out stem>.suite.json)")
    p.add_argument("--format", choices=FORMATS, default="md")
    p.add_argument("--alpha", type=_fraction(0, 1, "alpha"), default=0.05)
    p.add_argument("--quantile", type=_fraction(0, 0.5, "quantile"), default=0.10)
    p.add_argument("--stepwise-adjust", choices=("bonferroni", "none"), default="bonferroni")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--jobs", type=int, default=1,
                   help="threads for the independent metric groups")
    _add_threshold_flags(p)

    p = sub.add_parser("synth", help="generate a planted source/target scenario")
    p.add_argument("--options", required=True, type=int)
    size = p.add_mutually_exclusive_group(required=True)
    size.add_argument("--samples", type=int)
    size.add_argument("--exhaustive", action="store_true")
    p.add_argument("--change", default="identity",
                   help="identity | linear:A,B | option_shift:I=D,.. | "
                        "interaction_shift:I-J=D,.. | severe")
    p.add_argument("--noise-sd", type=float, default=0.5)
    p.add_argument("--replicates", type=int, default=3)
    p.add_argument("--invalid-rule", default=None,
                   help="e.g. '1=1,3=-1>0.5' marks c1 - c3 > 0.5 invalid")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out-dir", required=True, type=Path)

    p = sub.add_parser("transfer", help="fit or apply a linear transfer function")
    tsub = p.add_subparsers(dest="action", required=True, parser_class=_Parser)
    f = tsub.add_parser("fit")
    f.add_argument("--source", required=True, type=Path)
    f.add_argument("--target", required=True, type=Path)
    f.add_argument("--out", required=True, type=Path)
    pr = tsub.add_parser("predict")
    pr.add_argument("--model", required=True, type=Path)
    pr.add_argument("--input", required=True, type=Path,
                    help="dataset CSV holding source performance")
    pr.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("report", help="re-render saved suite JSON files")
    p.add_argument("suites", nargs="+", type=Path)
    p.add_argument("--format", choices=FORMATS, default="md")
    p.add_argument("--out", type=Path, help="write here instead of stdout")
    _add_threshold_flags(p)
    return parser


def _write(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from None


def cmd_analyze(args) -> int:
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    src_manifest = args.source_manifest or args.manifest
    tgt_manifest = args.target_manifest or args.manifest
    src = load_dataset(args.source, src_manifest, role="source")
    tgt = load_dataset(args.target, tgt_manifest, role="target")
    label = args.label
    if label is None:
        label = f"{args.source.stem} -> {args.target.stem}"
        if args.manifest is not None:
            label = json.loads(args.manifest.read_text(encoding="utf-8")).get("change_label", label)
    pair = make_pair(aggregate(src), aggregate(tgt), label)
    params = AnalysisParams(alpha=args.alpha, quantile=args.quantile, seed=args.seed,
                            stepwise_adjust=args.stepwise_adjust, jobs=args.jobs)
    suite = analyze_pair(pair, params)
    thresholds = _thresholds(args)
    row = ReportRow(label, args.severity or tgt.env.severity, suite, classify(suite, thresholds))
    _write(args.out, render([row], args.format))
    suite_out = args.suite_out or args.out.with_name(args.out.stem + ".suite.json")
    payload = row_to_dict(row)
    payload["thresholds"] = thresholds_dict(thresholds)
    _write(suite_out, json.dumps(payload, indent=2) + "\n")
    print(row.tclass.tier)
    return 0


def cmd_synth(args) -> int:
    if args.exhaustive:
        n = None
    else:
        n = args.samples
    spec = random_scenario(args.options, seed=args.seed, change=args.change, n=n,
                           noise_sd=args.noise_sd, replicates=args.replicates,
                           invalid_rule=args.invalid_rule)
    for path in write_scenario(args.out_dir, spec):
        print(path)
    return 0


def cmd_transfer(args) -> int:
    if args.action == "fit":
        pair = make_pair(aggregate(load_dataset(args.source)),
                         aggregate(load_dataset(args.target)), "transfer")
        model = fit_linear_transfer(pair)
        _write(args.out, model.to_json())
        print(f"alpha={model.alpha:.6g} beta={model.beta:.6g} "
              f"residual_sd={model.residual_sd:.6g} n_fit={model.n_fit}")
        return 0
    try:
        text = args.model.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"model not found: {args.model}") from None
    model = TransferModel.from_json(text)
    agg = aggregate(load_dataset(args.input))
    pred = predict_transfer(model, agg.mean_perf)
    header = [OPTION_PREFIX + n for n in agg.space.option_names] + ["perf_source", "perf_target"]
    lines = [",".join(header)]
    for cfg, y, p, ok in zip(agg.configs, agg.mean_perf, pred, agg.valid):
        cells = [str(int(v)) for v in cfg]
        cells += [format_float(y), format_float(p)] if ok else ["", ""]
        lines.append(",".join(cells))
    _write(args.out, "\n".join(lines) + "\n")
    return 0


def cmd_report(args) -> int:
    rows = []
    for path in args.suites:
        try:
            text = path.read_text(encoding="utf-8")
        except FileNotFoundError:
            raise DataError(f"suite file not found: {path}") from None
        rows.extend(load_report_json(text))
    text = render(reclassify(rows, _thresholds(args)), args.format)
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


_COMMANDS = {"analyze": cmd_analyze, "synth": cmd_synth,
             "transfer": cmd_transfer, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except EnvTransferError as exc:
        print(f"envtransfer: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"envtransfer: numeric failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"envtransfer: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
