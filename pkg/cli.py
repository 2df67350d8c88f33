import argparse
import logging
import sys

from schemas import OutputFormat
from Services.config import configure_logging, thread_cap
from Services.errors import ConfigError, DataError, FairSSLError
from Services.harness import emit_report, load_dataset, load_experiment_config, run_baselines, run_decomposition, run_sweep

logger = logging.getLogger("fairssl")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

RUNNERS = {
    "sweep": run_sweep,
    "baseline": run_baselines,
    "decompose": run_decomposition,
}


class _Parser(argparse.ArgumentParser):
    # usage mistakes are config errors, not argparse's default exit status 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="fairssl", description="Fairness-constrained semi-supervised learning experiments.")
    commands = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("sweep", "c-grid x unlabeled-size x seed sweep"),
        ("decompose", "bias/variance/noise decomposition, labeled-only vs with unlabeled rows"),
        ("baseline", "uniform and preferential sampling baselines"),
    ):
        command = commands.add_parser(name, help=help_text)
        command.add_argument("--config", required=True, help="Path to a flat key = value experiment config.")
        command.add_argument("--out", help="Output file (defaults to output_path from the config).")
        command.add_argument("--format", choices=[fmt.value for fmt in OutputFormat], help="Report format.")
        command.add_argument("--seed", type=int, help="Base seed; run i uses seed + i.")
    return parser


def _prepare(args):
    cfg = load_experiment_config(args.config)
    if args.seed is not None:
        cfg = cfg.model_copy(update={"base_seed": args.seed})
    out = args.out or cfg.output_path
    if out is None:
        raise ConfigError("no output path: pass --out or set output_path in the config")
    fmt = OutputFormat(args.format) if args.format else cfg.output_format
    try:
        thread_cap()
    except ValueError as e:
        raise ConfigError(str(e))
    # synthetic decompositions draw fresh data per seed
    data = None if args.command == "decompose" and cfg.synthetic else load_dataset(cfg)
    return cfg, data, out, fmt


def main(argv=None):
    args = build_parser().parse_args(argv)
    configure_logging()

    try:
        cfg, data, out, fmt = _prepare(args)
    except (ConfigError, DataError) as e:
        logger.error("%s", e)
        return EXIT_CONFIG

    try:
        rows = RUNNERS[args.command](cfg, data)
        emit_report(rows, fmt, out)
    except ConfigError as e:
        logger.error("%s", e)
        return EXIT_CONFIG
    except (FairSSLError, ValueError) as e:
        logger.error("%s failed: %s", args.command, e)
        return EXIT_RUNTIME

    logger.info("%s finished: %d rows written to %s", args.command, len(rows), out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
