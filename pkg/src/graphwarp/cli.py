"""Command-line pipeline: generate, predict, register, evaluate.

Exit codes: 0 success, 1 usage error, 2 I/O or parse error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import pipeline, seqio
from .config import Config, load_config
from .errors import GraphWarpError, NumericalFailure, SolverDiverged
from .jsonutil import write_canonical


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the CLI contract wants 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="graphwarp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_gen = sub.add_parser("generate", help="generate a synthetic sequence directory")
    p_gen.add_argument("--spec", required=True, help="animation spec (.json) or positions (.npz)")
    p_gen.add_argument("--out", required=True, help="output sequence directory")
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--config", help="TOML or JSON config file")

    p_pred = sub.add_parser("predict", help="write per-frame motion predictions")
    p_pred.add_argument("--seq", required=True, help="sequence directory")
    p_pred.add_argument(
        "--method", required=True, choices=pipeline.PREDICT_METHODS
    )
    p_pred.add_argument("--pred-file", help="external prediction directory (method=external)")
    p_pred.add_argument("--out", required=True, help="output prediction directory")
    p_pred.add_argument("--config", help="TOML or JSON config file")

    p_reg = sub.add_parser("register", help="solve the warp field frame by frame")
    p_reg.add_argument("--seq", required=True)
    p_reg.add_argument("--pred", help="prediction directory for the motion term")
    p_reg.add_argument("--weights", help="config file whose weights section overrides")
    p_reg.add_argument("--out", required=True, help="output directory for fields and reports")
    p_reg.add_argument("--config", help="TOML or JSON config file")
    p_reg.add_argument(
        "--uniform-weights",
        action="store_true",
        help="use w=1 for every node instead of the confidence weights",
    )

    p_eval = sub.add_parser("evaluate", help="compute metrics and write a report")
    p_eval.add_argument("--seq", required=True)
    group = p_eval.add_mutually_exclusive_group(required=True)
    group.add_argument("--pred", help="prediction directory to evaluate")
    group.add_argument("--warp", help="warp-field directory to evaluate")
    p_eval.add_argument("--out", required=True, help="output report JSON")
    p_eval.add_argument("--config", help="TOML or JSON config file")
    return parser


def _load_cfg(args) -> Config:
    if getattr(args, "config", None):
        return load_config(args.config)
    return Config()


def _cmd_generate(args) -> int:
    cfg = _load_cfg(args)
    seq = pipeline.generate_from_spec(args.spec, cfg, args.seed)
    seqio.write_sequence(seq, args.out)
    print(f"wrote {seq.num_frames} frames, {seq.num_nodes} nodes to {args.out}")
    return 0


def _cmd_predict(args) -> int:
    cfg = _load_cfg(args)
    seq = seqio.read_sequence(args.seq)
    predictions = pipeline.predict_sequence(
        seq, args.method, cfg, external_dir=args.pred_file
    )
    pipeline.save_prediction_dir(predictions, args.out)
    print(f"wrote {len(predictions)} prediction files to {args.out}")
    return 0


def _cmd_register(args) -> int:
    cfg = _load_cfg(args)
    if args.weights:
        wcfg = load_config(args.weights)
        cfg.weights = wcfg.weights
    seq = seqio.read_sequence(args.seq)
    predictions = None
    if args.pred:
        predictions = pipeline.load_prediction_dir(args.pred, seq, cfg)
    fields, reports = pipeline.register_sequence(
        seq, predictions, cfg, uniform_weights=args.uniform_weights
    )
    os.makedirs(args.out, exist_ok=True)
    for t, field in enumerate(fields):
        seqio.write_warp_field(field, os.path.join(args.out, seqio.FIELD_FMT.format(t)))
    for t, report in enumerate(reports, start=1):
        write_canonical(
            os.path.join(args.out, seqio.REPORT_FMT.format(t)), report.to_dict()
        )
    print(f"wrote {len(fields)} warp fields to {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    cfg = _load_cfg(args)
    seq = seqio.read_sequence(args.seq)
    if args.pred:
        predictions = pipeline.load_prediction_dir(args.pred, seq, cfg)
        report = pipeline.evaluate_predictions(seq, predictions, cfg)
    else:
        fields = pipeline.load_warp_dir(args.warp, seq)
        report = pipeline.evaluate_warp(seq, fields, cfg)
    write_canonical(args.out, report.to_dict())
    agg = report.aggregate()
    for key, stats in sorted(agg.items()):
        print(f"{key}: mean {stats['mean']:.3f} max {stats['max']:.3f}")
    print(f"wrote report to {args.out}")
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "predict": _cmd_predict,
    "register": _cmd_register,
    "evaluate": _cmd_evaluate,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (SolverDiverged, NumericalFailure) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    except (GraphWarpError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
