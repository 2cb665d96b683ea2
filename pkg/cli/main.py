"""
camspec command line: gen, setup, run, report, verify, bench

Exit codes: 0 success, 1 input error, 2 config error, 3 internal invariant violation
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv

from config.settings import RunConfig, format_settings, load_settings
from core.errors import CamspecError, ConfigError, InputError, InvariantError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_CONFIG = 2
EXIT_INVARIANT = 3


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=Path, help='key=value config file')
    common.add_argument('--seed', type=int, help='master seed (SEED)')
    common.add_argument('--mode', choices=['serial', 'parallel'], help='scheduler mode (SCHEDULER_MODE)')
    common.add_argument('--current-model', choices=['ideal', 'parasitic'], help='matchline model (CURRENT_MODEL)')
    common.add_argument('--dry-run', action='store_true', help='catalog-only setup from row counts')
    common.add_argument('--out', type=Path, default=Path('out'), help='output root directory')
    common.add_argument('--verbose', '-v', action='store_true', help='debug logging and settings dump')

    parser = argparse.ArgumentParser(prog='camspec', description='SOT-CAM spectral clustering simulator')
    sub = parser.add_subparsers(dest='command', required=True)

    gen = sub.add_parser('gen', parents=[common], help='write a labeled synthetic MGF data set')
    gen.add_argument('--jsonl', action='store_true', help='also write a JSON-lines spectrum dump')

    setup = sub.add_parser('setup', parents=[common], help='Phase-I clustering and snapshot')
    setup.add_argument('mgf', type=Path, nargs='?', help='setup spectra (not needed with --dry-run)')
    setup.add_argument('--labels', type=Path, help='spectrum_id<TAB>label file')

    run = sub.add_parser('run', parents=[common], help='Phase-III query processing over a snapshot')
    run.add_argument('queries', type=Path, help='query spectra MGF')
    run.add_argument('--snapshot', type=Path, help='snapshot directory (default: latest under --out)')
    run.add_argument('--labels', type=Path, help='spectrum_id<TAB>label file')

    report = sub.add_parser('report', parents=[common], help='summarize a run directory')
    report.add_argument('run_dir', type=Path, nargs='?', help='run directory (default: latest under --out)')
    report.add_argument('--compare', type=Path, help='second run directory for overlap')
    report.add_argument('--csv', type=Path, help='directory for plot-data CSV files')
    report.add_argument('--xlsx', type=Path, help='Excel workbook path')

    verify = sub.add_parser('verify', parents=[common], help='replay a run and diff its cycle trace')
    verify.add_argument('run_dir', type=Path, nargs='?', help='run directory (default: latest under --out)')

    bench = sub.add_parser('bench', parents=[common], help='benchmarks and acceptance figures')
    bench.add_argument('kind', nargs='?', default='all',
                       choices=['all', 'energy', 'lta', 'sweep', 'matched', 'speedup'])
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    overrides = {
        'SEED': args.seed,
        'SCHEDULER_MODE': args.mode,
        'CURRENT_MODEL': args.current_model,
    }
    settings = load_settings(args.config, overrides)
    if args.verbose:
        print(format_settings(settings))
    return RunConfig.from_settings(settings)


def dispatch(args: argparse.Namespace) -> None:
    # imported here so `--help` stays fast
    from cli import pipeline
    from cli.bench import cmd_bench
    from cli.report import cmd_report

    config = resolve_config(args)
    if args.command == 'gen':
        pipeline.cmd_gen(config, args.out, jsonl=args.jsonl)
    elif args.command == 'setup':
        if args.dry_run:
            pipeline.cmd_setup_dry_run(config, args.out)
        elif args.mgf is None:
            raise InputError("setup needs an MGF file unless --dry-run is given")
        else:
            pipeline.cmd_setup(args.mgf, config, args.out, labels_path=args.labels)
    elif args.command == 'run':
        snapshot = args.snapshot or pipeline.latest_version_dir(args.out / 'snapshot')
        pipeline.cmd_run(snapshot, args.queries, config, args.out, labels_path=args.labels)
    elif args.command == 'report':
        run_dir = args.run_dir or pipeline.latest_version_dir(args.out / 'run')
        cmd_report(run_dir, args.compare, args.csv, args.xlsx)
    elif args.command == 'verify':
        pipeline.cmd_verify(args.run_dir or pipeline.latest_version_dir(args.out / 'run'))
    elif args.command == 'bench':
        cmd_bench(args.kind, config, args.out)


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format='%(asctime)s %(levelname)s %(name)s: %(message)s',
    )
    try:
        dispatch(args)
    except InputError as e:
        print(f"[ERROR] {e}", file=sys.stderr)
        return EXIT_INPUT
    except ConfigError as e:
        print(f"[ERROR] Configuration: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantError as e:
        print(f"[ERROR] Internal invariant violated: {e}", file=sys.stderr)
        return EXIT_INVARIANT
    except CamspecError as e:
        print(f"[ERROR] {e}", file=sys.stderr)
        return EXIT_INVARIANT
    except OSError as e:
        print(f"[ERROR] {e}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
