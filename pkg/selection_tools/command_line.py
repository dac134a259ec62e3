import argparse
import logging
import sys

from .config import load_config, resolve_workers
from .errors import ConfigException
from .scripts import cmd_ablate, cmd_gen_data, cmd_report, cmd_run

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_FAILED = 2


class _Parser(argparse.ArgumentParser):

    def error(self, message):
        raise ConfigException(message)


def _csv_list(value):
    return [item.strip() for item in value.split(',') if item.strip()]


def _budget_list(value):
    '''Budgets are given in percent: "1,3,5,10".'''
    try:
        return [float(item) / 100.0 for item in _csv_list(value)]
    except ValueError:
        raise ConfigException("--budgets must be a comma-separated list of percentages, got '{}'".format(value))


def cli(argv=None):
    parser = _Parser(prog='test_selection',
                     description='Test input selection for fine-tuned classifiers under distribution shift.')
    parser.add_argument('--verbose', '-v', action='count', default=0)
    commands = parser.add_subparsers(dest='command')
    commands.required = True

    for name in ('gen-data', 'run', 'ablate'):
        sub = commands.add_parser(name)
        sub.add_argument('--config', required=True, help='experiment config (JSON)')
        sub.add_argument('--out', help='output directory, overrides output_dir')
        sub.add_argument('--seed', type=int)
        sub.add_argument('--methods', type=_csv_list, help='comma-separated methods')
        sub.add_argument('--budgets', type=_budget_list, help='comma-separated budgets in percent')
        sub.add_argument('--workers', help='worker pool size (default: $MSEL_WORKERS or 1)')

    report = commands.add_parser('report')
    report.add_argument('--out', required=True, help='run directory or output directory to report on')
    report.add_argument('--budgets', type=_budget_list, help='comma-separated budgets in percent')

    return parser.parse_args(argv)


def run_command(args):
    if args.command == 'report':
        cmd_report(args.out, args.budgets)
        return

    config = load_config(args.config).with_overrides(
        output_dir=args.out, seed=args.seed, methods=args.methods, budgets=args.budgets)
    if args.command == 'gen-data':
        print("Data written to {}".format(cmd_gen_data(config)))
        return
    workers = resolve_workers(args.workers)
    if args.command == 'run':
        print("Results written to {}".format(cmd_run(config, workers)))
    else:
        print("Ablation written to {}".format(cmd_ablate(config, workers)))


def main(argv=None):
    try:
        args = cli(argv)
    except ConfigException as err:
        print("error: {}".format(err), file=sys.stderr)
        return EXIT_INVALID

    logging.basicConfig(level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    try:
        run_command(args)
    except ConfigException as err:
        logger.error("invalid configuration: %s", err)
        return EXIT_INVALID
    except Exception as err:
        logger.error("%s failed: %s", args.command, err, exc_info=args.verbose > 1)
        return EXIT_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
