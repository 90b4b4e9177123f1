"""Command-line entry point: ``xlris {run,preset,overhead,validate}``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from . import harness
from .harness import ConfigError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # usage mistakes are configuration errors, not runtime failures
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _add_spec_args(p: argparse.ArgumentParser):
    p.add_argument("--config", metavar="PATH", help="TOML experiment configuration")
    p.add_argument("--preset", metavar="NAME", help=f"built-in spec ({', '.join(harness.PRESETS)})")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--trials", type=int, help="Monte-Carlo trials per cell")
    p.add_argument("--out", metavar="PATH", help="output file ('-' for stdout)")
    p.add_argument("--format", choices=("csv", "json"), default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="xlris", description="XL-RIS cascaded channel estimation experiments")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="execute an experiment spec")
    _add_spec_args(run)
    run.add_argument("--threads", type=int, help="worker threads per sweep cell")
    run.add_argument("--timing", action="store_true", help="record wall-clock runtime_ms")

    pre = sub.add_parser("preset", help="print a built-in spec as a config file")
    pre.add_argument("name", nargs="?", help="preset name (omit to list)")
    pre.add_argument("--out", metavar="PATH")

    ovh = sub.add_parser("overhead", help="evaluate the pilot-overhead formulas only")
    _add_spec_args(ovh)

    val = sub.add_parser("validate", help="run the built-in invariant checks")
    val.add_argument("--quick", action="store_true", help="skip the end-to-end estimator check")
    return parser


def resolve_spec(args) -> harness.ExperimentSpec:
    if args.config and args.preset:
        raise ConfigError("--config and --preset are mutually exclusive")
    if args.config:
        spec = harness.load_config(args.config)
    elif args.preset:
        spec = harness.preset(args.preset)
    else:
        spec = harness.ExperimentSpec()
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.trials is not None:
        updates["trials"] = args.trials
    if getattr(args, "threads", None) is not None:
        updates["threads"] = args.threads
    if getattr(args, "timing", False):
        updates["timing"] = True
    if args.out is not None:
        updates["output_path"] = args.out
    return replace(spec, **updates) if updates else spec


def _output_format(args, path: str) -> str:
    if args.format:
        return args.format
    return "json" if path.endswith(".json") else "csv"


def _emit(rows, args, spec) -> None:
    path = spec.output_path
    text = harness.emit_results(rows, path, _output_format(args, path))
    if path == "-":
        sys.stdout.write(text)
    else:
        print(f"wrote {len(rows)} rows to {path}", file=sys.stderr)


def cmd_run(args) -> int:
    spec = resolve_spec(args)
    rows = harness.run_experiment(spec)
    _emit(rows, args, spec)
    return EXIT_OK


def cmd_overhead(args) -> int:
    spec = resolve_spec(args)
    if args.out is None:
        spec = replace(spec, output_path="-")
    _emit(harness.overhead_rows(spec), args, spec)
    return EXIT_OK


def cmd_preset(args) -> int:
    if not args.name:
        print("\n".join(harness.PRESETS))
        return EXIT_OK
    text = harness.dumps_config(harness.preset(args.name))
    if args.out and args.out != "-":
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_validate(args) -> int:
    from .checks import run_checks

    results = run_checks(quick=args.quick)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_RUNTIME


COMMANDS = {"run": cmd_run, "preset": cmd_preset, "overhead": cmd_overhead, "validate": cmd_validate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - surfaced as an exit code
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
