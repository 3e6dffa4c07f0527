"""Command-line entry point: ``xdistill <command> [--config PATH] [--seed N] [--out DIR] [--override K=V]``.

Exit status is 0 on success, 1 for invalid configuration or inputs and 2 when
training or a gradient check fails numerically.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .checks import GRADCHECK_COMPONENTS, run_gradchecks, scaling_benchmark
from .config import ConfigError, load_config
from .io import MetricsWriter

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", metavar="PATH", help="flat JSON object of RunConfig fields")
    p.add_argument("--seed", type=int, metavar="N", help="overrides the config seed")
    p.add_argument("--out", metavar="DIR", default="out", help="output directory (default: out)")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="set one config field; repeatable; VALUE is parsed as JSON when possible")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="xdistill", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("pretrain-teacher", parents=[common], help="train the transformer teacher")
    d = sub.add_parser("distill", parents=[common], help="distill an xLSTM student from a saved teacher")
    d.add_argument("--teacher", metavar="PATH", help="teacher checkpoint (default: OUT/teacher.ntck)")
    sub.add_parser("schedule", parents=[common], help="print the alpha/temperature schedule of a run")
    sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    sub.add_parser("benchmark", parents=[common], help="runtime scaling with sequence length")
    e = sub.add_parser("eval", parents=[common], help="held-out evaluation of teacher and student")
    e.add_argument("--teacher", metavar="PATH")
    e.add_argument("--student", metavar="PATH")
    return parser


def _emit(obj) -> None:
    print(json.dumps(obj), flush=True)


def _run(args) -> int:
    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    cfg = load_config(args.config, overrides)
    out = Path(args.out)

    if args.command == "pretrain-teacher":
        _emit(pipeline.pretrain_teacher(cfg, out))
    elif args.command == "distill":
        _emit(pipeline.distill(cfg, out, args.teacher))
    elif args.command == "schedule":
        pipeline.echo_config(cfg, out)
        rows = pipeline.schedule_rows(cfg)
        with MetricsWriter(out / "schedule.jsonl") as w:
            for row in rows:
                w.write(row)
                _emit(row)
    elif args.command == "gradcheck":
        pipeline.echo_config(cfg, out)
        errs = run_gradchecks(cfg.seed, cfg.gradcheck_tol)
        failed = False
        with MetricsWriter(out / "gradcheck.jsonl") as w:
            for name in GRADCHECK_COMPONENTS:
                ok = errs[name] < cfg.gradcheck_tol
                failed |= not ok
                row = {"component": name, "max_rel_err": errs[name], "tol": cfg.gradcheck_tol, "passed": ok}
                w.write(row)
                _emit(row)
        return EXIT_NUMERIC if failed else EXIT_OK
    elif args.command == "benchmark":
        pipeline.echo_config(cfg, out)
        res = scaling_benchmark(cfg.benchmark_lengths, d_model=cfg.d_model, n_heads_teacher=cfg.teacher_heads,
                                n_blocks=cfg.student_blocks or cfg.teacher_layers // 2,
                                n_heads_student=cfg.student_heads or -(-cfg.teacher_heads // 4) * 4,
                                repeats=cfg.benchmark_repeats, seed=cfg.seed)
        with MetricsWriter(out / "benchmark.jsonl") as w:
            for row in res["rows"]:
                w.write(row)
                _emit(row)
            summary = {"attention_slope": res["attention_slope"], "stack_slope": res["stack_slope"]}
            w.write(summary)
            _emit(summary)
    elif args.command == "eval":
        _emit(pipeline.evaluate_checkpoints(cfg, out, args.teacher, args.student))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
