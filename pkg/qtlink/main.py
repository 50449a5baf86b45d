"""
qtlink - command line entry point
"""
import argparse
import json
import logging
import sys

from .config import PROTOCOLS, parse_config
from .errors import OutputError, QtLinkError
from .presets import list_presets
from .runner import run
from .version import __version__

logger = logging.getLogger(__name__)

VERBS = PROTOCOLS + ("validate", "run")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qtlink",
        description="Free-space quantum teleportation and entanglement distribution simulator",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--list-presets", action="store_true", help="List shipped scenarios and exit")
    parser.add_argument("verb", nargs="?", choices=VERBS, help="Protocol to run, or validate/run")
    parser.add_argument("-s", "--scenario", help="Scenario file or shipped preset name")
    parser.add_argument("--seed", type=int, help="Override the scenario seed")
    parser.add_argument("--time-scale", type=float, help="Override the scenario time scale")
    parser.add_argument("-o", "--out", help="Directory for report.json and CSV tables")
    parser.add_argument("--format", choices=("json", "csv"), default="json",
                        help="Format written to stdout when --out is not given")
    parser.add_argument("--record-wall-time", action="store_true",
                        help="Add elapsed wall time to the report provenance")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-d", "--debug", action="store_true", help="Verbose logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Only log warnings and errors")
    return parser


def _configure_logging(args) -> None:
    level = logging.DEBUG if args.debug else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(
        level=level,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def _fail(error: QtLinkError) -> int:
    print(json.dumps({"error": error.to_dict()}, sort_keys=True), file=sys.stderr)
    return error.exit_code


def _emit(report, args) -> None:
    if args.out:
        report.write(args.out)
    elif args.format == "csv":
        if report.tables:
            sys.stdout.write(next(iter(report.tables.values())).to_csv())
    else:
        sys.stdout.write(report.to_json())


def main(argv=None) -> int:
    """Main entry point"""
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args)

    if args.list_presets:
        for preset in list_presets():
            print(f"{preset.name:24} {preset.description}")
        return EXIT_OK
    if args.verb is None or args.scenario is None:
        parser.error("a verb and --scenario are required")

    try:
        config = parse_config(args.scenario, {"seed": args.seed, "time_scale": args.time_scale})
        if args.verb == "validate":
            print(json.dumps(config.to_dict(), sort_keys=True, indent=2))
            return EXIT_OK
        if args.verb != "run" and args.verb != config.protocol:
            config = config.with_protocol(args.verb)
        report = run(config, record_wall_time=args.record_wall_time)
    except QtLinkError as e:
        logger.debug("run failed", exc_info=True)
        return _fail(e)
    except ValueError as e:
        # a driver rejected its inputs
        logger.debug("run failed", exc_info=True)
        return _fail(QtLinkError(str(e)))

    try:
        _emit(report, args)
    except OSError as e:
        logger.debug("writing the report failed", exc_info=True)
        return _fail(OutputError(f"cannot write report: {e}"))
    if report.insufficient_statistics:
        logger.warning("insufficient statistics; report written, exiting with status %i", EXIT_RUNTIME)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
