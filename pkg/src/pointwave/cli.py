"""
Command-line entry point

    python -m src.pointwave.cli spectrum --config configs/ball.yaml
    python -m src.pointwave.cli compare --config configs/ball.yaml --eps 0.2
    python -m src.pointwave.cli sweep --config configs/sweep.yaml --out results/sweep

Exit codes: 0 success, 1 I/O failure, 2 invalid input, 3 numerical or
quality failure, 64 usage error.
"""

import argparse
import sys
from typing import Dict, List, Optional

from src.pointwave import __version__
from src.pointwave.config import load_config
from src.pointwave.errors import ExportError, NumericalError, ValidationError
from src.pointwave.harness import PointScattererPipeline
from src.pointwave.report import ErrorReport

EXIT_OK = 0
EXIT_IO = 1
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_USAGE = 64

COMMANDS = ("spectrum", "forcing", "modulation", "effective", "fdtd", "compare", "sweep")


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors reported as exit 64"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pointwave", description="Point-scatterer approximation experiments")
    parser.add_argument("--version", action="version", version=f"pointwave {__version__}")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML experiment file")
    common.add_argument("--eps", type=float, metavar="X", help="run a single ε instead of the sweep list")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--threads", type=int, metavar="N", help="worker threads (FDTD slabs, matvec)")
    common.add_argument("--seed", type=int, metavar="N", help="eigensolver start-vector seed")
    common.add_argument("--quiet", action="store_true", help="suppress stage output")

    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    help_text = {
        "spectrum": "Newton eigenpairs, couplings and captured mass",
        "forcing": "h(t) = Δu_free(t, 0)",
        "modulation": "q(t) by both routes, with the route-equivalence check",
        "effective": "u_eff snapshot at T on the comparison box",
        "fdtd": "FDTD run with the contrast at ε (probe traces, final snapshot)",
        "compare": "one error row per ε",
        "sweep": "full ε-sweep: report, slopes, plot script",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=help_text[name])
    return parser


def overrides_from(args: argparse.Namespace) -> Dict:
    values = {}
    if args.eps is not None:
        values["sweep.eps"] = (args.eps,)
    if args.out is not None:
        values["output.directory"] = args.out
    if args.threads is not None:
        values["fdtd.threads"] = args.threads
    if args.seed is not None:
        values["spectral.seed"] = args.seed
    return values


def dispatch(pipeline: PointScattererPipeline, command: str) -> None:
    eps_values = pipeline.cfg.sweep.eps

    if command == "spectrum":
        pipeline.export_spectrum()
        dec = pipeline.decomposition
        print(f"captured mass: {dec.captured_mass:.10g} of |Ω| = {dec.volume:.10g} "
              f"({dec.captured_mass / dec.volume:.4%}, K={dec.K})")
    elif command == "forcing":
        pipeline.export_forcing()
    elif command == "modulation":
        pipeline.export_modulation()
    elif command == "effective":
        for eps in eps_values:
            pipeline.export_effective(eps)
    elif command == "fdtd":
        plans = pipeline.check_budget(eps_values)
        for plan in plans:
            pipeline.export_fdtd(pipeline.run_fdtd(plan.eps, plan), plan.eps)
    elif command == "compare":
        plans = pipeline.check_budget(eps_values)
        rows, runs = [], []
        for plan in plans:
            rows.append(pipeline.run_compare(plan.eps, plan))
            runs.append(pipeline.last_run)
        report = ErrorReport.from_rows(rows, runs=runs, config=pipeline.config_echo,
                                       version=__version__)
        print(report.table.to_string(index=False, float_format=lambda v: f"{v:.6e}"))
        pipeline.export_report(report, name="compare")
    elif command == "sweep":
        report = pipeline.run_sweep()
        pipeline.export_report(report)
    pipeline.pipeline_summary()


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE

    try:
        cfg = load_config(args.config, overrides_from(args))
        pipeline = PointScattererPipeline(cfg, strict_mode=True, verbose=not args.quiet)
        dispatch(pipeline, args.command)
    except ValidationError as exc:
        print(f"❌ {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"❌ {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ExportError, OSError) as exc:
        print(f"❌ I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
