"""
Command-line entry point

    spinshell run --config configs/hamiltonian_engineering_1d.yaml [--out DIR] [--seed-override N] [--threads N]
    spinshell validate --config FILE
    spinshell compare RUN_A RUN_B [--out report.json]
"""
import argparse
import logging
import sys

from spinshell import __version__
from spinshell.commands import EXIT_CONFIG, compare_command, run_command, validate_command
from spinshell.engine.config import Config

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=Config.APP_NAME,
                                     description="Floquet spin-texture simulations around NV centers")
    parser.add_argument('--version', action='version', version=f"%(prog)s {__version__}")
    verbs = parser.add_subparsers(dest='verb', required=True)

    run = verbs.add_parser('run', help="run a scenario and write its result bundle")
    run.add_argument('--config', required=True, help="scenario YAML file")
    run.add_argument('--out', help="output directory (default: output_dir or SPINSHELL_OUTPUT_ROOT)")
    run.add_argument('--seed-override', type=int, help="replace the scenario's master seed")
    run.add_argument('--threads', type=int, help="worker budget for the engines")

    validate = verbs.add_parser('validate', help="check a scenario without running it")
    validate.add_argument('--config', required=True, help="scenario YAML file")

    compare = verbs.add_parser('compare', help="diff two bundles or a bundle and a prediction")
    compare.add_argument('run_a', help="bundle directory or series CSV")
    compare.add_argument('run_b', help="bundle directory or series CSV")
    compare.add_argument('--out', help="write the report JSON here as well")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    # Configure logging
    logging.basicConfig(
        level=getattr(logging, Config.LOG_LEVEL, logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        stream=sys.stderr,
    )

    try:
        Config.validate()
    except ValueError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG

    if args.verb == 'run':
        if args.threads is not None and args.threads < 1:
            logger.error("--threads must be a positive integer")
            return EXIT_CONFIG
        return run_command(args.config, args.out, args.seed_override, args.threads)
    if args.verb == 'validate':
        return validate_command(args.config)
    return compare_command(args.run_a, args.run_b, args.out)


if __name__ == '__main__':
    sys.exit(main())
