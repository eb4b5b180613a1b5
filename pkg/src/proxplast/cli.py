"""Command-line front end: ``proxplast solve`` and ``proxplast verify``.

Exit codes: 0 success, 1 input error, 2 collapse or non-convergence on the
load path, 3 a state that fails the optimality check.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .driver import run_path
from .modelfile import ModelFileError, dump_fields, load_model, load_state
from .state import evaluate
from .verification import kkt_check

EXIT_OK, EXIT_INPUT, EXIT_PATH, EXIT_KKT = 0, 1, 2, 3
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}

logger = logging.getLogger("proxplast")


def _threads(value: str) -> int:
    if value == "auto":
        return os.cpu_count() or 1
    try:
        n = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer or 'auto', got {value!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError("threads must be >= 1")
    return n


def _alpha_scale(value: str) -> float:
    v = float(value)
    if not 0.0 < v <= 1.0:
        raise argparse.ArgumentTypeError("alpha scale must lie in (0, 1]")
    return v


def _positive(value: str) -> float:
    v = float(value)
    if not v > 0.0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


class _Parser(argparse.ArgumentParser):
    # usage errors are input errors, not path failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="proxplast", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="run the load path of a model file")
    p.add_argument("model", help="model JSON file")
    p.add_argument("--mode", choices=["plain", "accel", "accel-restart"], default=None,
                   help="iteration variant (default: model file, else accel-restart)")
    p.add_argument("--tol", type=_positive, default=None,
                   help="termination tolerance on both du and eps_p")
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--alpha-scale", type=_alpha_scale, default=None,
                   help="step length as a fraction of 1/L")
    p.add_argument("--out", default="out", help="output directory (default: ./out)")
    p.add_argument("--threads", type=_threads, default=1, help="integer or 'auto'")
    p.add_argument("--dump-fields", action="store_true",
                   help="write fields_<step>.json for every solved step")

    v = sub.add_parser("verify", help="check the optimality conditions of a stored state")
    v.add_argument("model", help="model JSON file")
    v.add_argument("state", help="state JSON (as written by solve --dump-fields)")
    v.add_argument("--tol", type=_positive, default=1e-8)
    v.add_argument("--force-tol", type=_positive, default=None,
                   help="force residual tolerance (default: --tol)")
    return parser


def _configure_logging():
    level = os.environ.get("PROXPLAST_LOG", "error").lower()
    logging.basicConfig(level=LOG_LEVELS.get(level, logging.ERROR), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def cmd_solve(args) -> int:
    try:
        mf = load_model(args.model)
        cfg = mf.solver_config(mode=args.mode, tol=args.tol, max_iters=args.max_iters,
                               alpha_scale=args.alpha_scale, threads=args.threads)
        cfg.resolve(mf.model)
    except (ModelFileError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    record = run_path(mf.model, mf.path, cfg)
    record.write_csv(out / "path.csv", mf.model, mf.monitor)
    if args.dump_fields:
        for i, step in enumerate(record.steps):
            step_model = mf.model.replace(sigma0=step.sigma0, load=step.load)
            dump_fields(out / f"fields_{i:03d}.json", step_model, step.factor,
                        step.du, step.eps_p, step.sigma)
    diagnostics = {
        "model": mf.name,
        "completed": record.completed,
        "failure": record.failure,
        "failed_lambda": record.failed_factor,
        "steps": [{"lambda": s.factor, "warm_start": s.warm_start,
                   **s.report.to_dict(with_history=False)} for s in record.steps],
    }
    (out / "diagnostics.json").write_text(json.dumps(diagnostics, indent=1))
    if record.completed:
        print(f"{mf.name}: {len(record.steps)} steps converged; results in {out}")
        return EXIT_OK
    last = record.final.report
    print(f"{mf.name}: path stopped at lambda={record.failed_factor!r} ({last.message}); "
          f"results in {out}", file=sys.stderr)
    return EXIT_PATH


def cmd_verify(args) -> int:
    try:
        mf = load_model(args.model)
        step_model, du, eps_p = load_state(args.state, mf.model)
    except ModelFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    report = kkt_check(step_model, evaluate(step_model, du, eps_p), args.tol, args.force_tol)
    print(json.dumps(report.to_dict(), indent=1))
    if not report.passed:
        print(f"failed: {', '.join(report.failures())}", file=sys.stderr)
        return EXIT_KKT
    return EXIT_OK


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    if args.command == "solve":
        return cmd_solve(args)
    return cmd_verify(args)


if __name__ == "__main__":
    sys.exit(main())
