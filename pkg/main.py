# -*- coding: utf-8 -*-
"""
Command-line entry point
Subcommands: simulate, clear, analyze, ingest, report
"""

import argparse
import hashlib
import json
import logging
import os
import shutil
import sys
from contextlib import contextmanager
from datetime import date, datetime, timedelta, timezone

import auction
import hypergraph
import lifecycle
import market_analysis
import simulator
import tda
from config import DEFAULT_JOBS, LOG_LEVEL, TOOL_VERSION, read_toml
from errors import EdisonError, InputError, RecordError
from ledger import load_log

logger = logging.getLogger(__name__)

STAGING = '.staging'
MANIFEST = 'manifest.json'


def setup_logging(verbosity: int) -> None:
    if verbosity >= 2:
        level = logging.DEBUG
    elif verbosity == 1:
        level = logging.INFO
    else:
        level = getattr(logging, LOG_LEVEL.upper(), logging.WARNING)
    logging.basicConfig(stream=sys.stderr, level=level, format='%(levelname)s %(name)s: %(message)s', force=True)


def write_json(data, path: str) -> None:
    with open(path, 'w', encoding='utf-8') as f:
        f.write(json.dumps(data, sort_keys=True, indent=2) + '\n')


@contextmanager
def staged_output(out_dir: str):
    """
    Yield a staging directory inside out_dir; its entries replace those in
    out_dir only when the block succeeds. A failed block leaves no outputs.
    """
    created = not os.path.exists(out_dir)
    staging = os.path.join(out_dir, STAGING)
    shutil.rmtree(staging, ignore_errors=True)
    os.makedirs(staging)
    try:
        yield staging
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        if created:
            shutil.rmtree(out_dir, ignore_errors=True)
        raise
    for name in sorted(os.listdir(staging)):
        target = os.path.join(out_dir, name)
        if os.path.isdir(target):
            shutil.rmtree(target)
        elif os.path.exists(target):
            os.remove(target)
        os.replace(os.path.join(staging, name), target)
    os.rmdir(staging)


def _layout(root: str):
    paths = []
    for base, dirs, files in os.walk(root):
        dirs.sort()
        for name in sorted(files):
            paths.append(os.path.relpath(os.path.join(base, name), root).replace(os.sep, '/'))
    return sorted(paths)


def build_manifest(config_path: str, seed: int, month: lifecycle.MonthConfig, run_id: str, staging: str) -> dict:
    with open(config_path, 'rb') as f:
        config_hash = hashlib.sha256(f.read()).hexdigest()
    epoch = os.getenv('SOURCE_DATE_EPOCH')
    created = datetime.fromtimestamp(int(epoch), tz=timezone.utc).isoformat() if epoch else None
    start = date.fromisoformat(month.start_date)
    end = start + timedelta(days=month.days_in_month - 1)
    return {
        'config_path': config_path,
        'config_sha256': config_hash,
        'seed': seed,
        'tool_version': TOOL_VERSION,
        'run_id': run_id,
        'period': {'start': start.isoformat(), 'end': end.isoformat()},
        'created': created,
        'layout': sorted(_layout(staging) + [MANIFEST]),
    }


# ----------------------------------------------------------------------
# Analysis shared by simulate --analyze, analyze and report
# ----------------------------------------------------------------------

def run_analysis(record: lifecycle.MonthRecord, out_dir: str, theta: float, sweep, which: str = 'all',
                 jobs: int = 1, xlsx: bool = False) -> None:
    os.makedirs(out_dir, exist_ok=True)
    hypergraphs = {}
    if which in ('hypergraph', 'all'):
        hypergraphs = _hypergraphs(record)
        for token, h in hypergraphs.items():
            hypergraph.export_json(h, os.path.join(out_dir, f"hypergraph_{token}.json"))
    if which == 'hypergraph':
        return

    diagrams = tda.compute_month_diagrams(record, record.config.scaling, jobs)
    if which in ('tda', 'all'):
        tda.write_diagrams(diagrams.pairs, os.path.join(out_dir, 'persistence.csv'))
        tda.write_point_clouds(diagrams.clouds, os.path.join(out_dir, 'point_clouds.csv'))
    if which == 'tda':
        return

    table = market_analysis.contingency(market_analysis.label_days(record, diagrams, theta))
    write_json({
        'run_id': record.run_id,
        'theta': theta,
        'contingency': table.to_dict(),
        'activity_ratios': market_analysis.activity_ratios(table),
        'association': market_analysis.association(table),
        'theta_sensitivity': market_analysis.theta_sweep(record, diagrams, sweep),
    }, os.path.join(out_dir, 'contingency.json'))
    if which == 'table':
        return

    doc = market_analysis.report(record, hypergraphs, diagrams, table, theta, sweep)
    market_analysis.write_report(doc, record, out_dir, xlsx)


def _hypergraphs(record: lifecycle.MonthRecord):
    return {
        token: hypergraph.build(
            [record.results[d][token] for d in record.days], token,
            participants=record.students, run_id=record.run_id,
        )
        for token in lifecycle.TOKENS
    }


def _load_record_dir(record_dir: str) -> lifecycle.MonthRecord:
    manifest_path = os.path.join(record_dir, MANIFEST)
    try:
        with open(manifest_path, 'r', encoding='utf-8') as f:
            manifest = json.load(f)
    except (OSError, ValueError) as e:
        raise RecordError(f"Missing or corrupt manifest {manifest_path}: {e}")
    record = lifecycle.load_record(record_dir)
    if not isinstance(manifest, dict) or manifest.get('run_id') != record.run_id:
        raise RecordError(f"Manifest {manifest_path} does not describe run {record.run_id}")
    return record


# ----------------------------------------------------------------------
# Subcommands
# ----------------------------------------------------------------------

def cmd_simulate(args) -> int:
    raw = read_toml(args.config)
    month = lifecycle.month_config_from_toml(raw)
    source = simulator.load_scenario(raw, month, args.seed)
    theta = args.theta if args.theta is not None else month.theta

    record = lifecycle.run_month(month, source)
    with staged_output(args.out) as staging:
        lifecycle.export_record(record, staging)
        if args.analyze:
            run_analysis(record, os.path.join(staging, 'analysis'), theta, month.theta_sweep, 'all', args.jobs)
        write_json(build_manifest(args.config, args.seed, month, record.run_id, staging),
                   os.path.join(staging, MANIFEST))
    print(f"Simulated run {record.run_id} -> {args.out}")
    return 0


def cmd_clear(args) -> int:
    orders = auction.read_orders_jsonl(args.orders_file)
    ledger = load_log(args.ledger_file)
    days = sorted({o.day for o in orders})
    if len(days) > 1:
        raise auction.InvalidOrder(f"Order file spans several days: {days}")
    day = days[0] if days else 1
    for order in sorted(orders, key=lambda o: o.arrival):
        auction.validate_order(ledger, order)
    books = auction.build_books(orders, day)
    results = {token: auction.clear(book) for token, book in books.items()}
    text = json.dumps(auction.result_document(results), sort_keys=True, indent=2) + '\n'
    if args.out:
        with staged_output(os.path.dirname(os.path.abspath(args.out))) as staging:
            with open(os.path.join(staging, os.path.basename(args.out)), 'w', encoding='utf-8') as f:
                f.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_analyze(args) -> int:
    record = _load_record_dir(args.record_dir)
    theta = args.theta if args.theta is not None else record.config.theta
    sweep = args.sweep if args.sweep else record.config.theta_sweep
    out_dir = args.out or os.path.join(args.record_dir, 'analysis')
    with staged_output(out_dir) as staging:
        run_analysis(record, staging, theta, sweep, args.which, args.jobs)
    print(f"Analysis ({args.which}) of run {record.run_id} -> {out_dir}")
    return 0


def cmd_report(args) -> int:
    record = _load_record_dir(args.record_dir)
    theta = args.theta if args.theta is not None else record.config.theta
    out_dir = args.out or os.path.join(args.record_dir, 'report')
    with staged_output(out_dir) as staging:
        run_analysis(record, staging, theta, record.config.theta_sweep, 'all', args.jobs, args.xlsx)
    print(f"Report of run {record.run_id} -> {out_dir}")
    return 0


def cmd_ingest(args) -> int:
    meter, rejects = simulator.ingest_meter_csv(args.meter_csv)
    orders = auction.read_orders_jsonl(args.orders_jsonl)
    summary = {
        'meter': {
            'rows': len(meter) + len(rejects),
            'accepted': len(meter),
            'rejected': len(rejects),
            'rejects': rejects,
        },
        'orders': {'accepted': len(orders)},
    }
    with staged_output(args.out) as staging:
        simulator.write_meter_csv(meter, os.path.join(staging, 'meter.csv'))
        auction.write_orders_jsonl(sorted(orders, key=lambda o: o.placed_at), os.path.join(staging, 'orders.jsonl'))
        write_json(summary, os.path.join(staging, 'ingest_summary.json'))
    sys.stdout.write(json.dumps(summary, sort_keys=True, indent=2) + '\n')
    return 0


def _theta(value: str) -> float:
    try:
        theta = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {value!r}")
    if theta < 0:
        raise argparse.ArgumentTypeError("theta must be non-negative")
    return theta


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='edison', description='Dormitory energy-token market simulator and analysis')
    parser.add_argument('-v', '--verbose', action='count', default=0, help='-v for progress, -vv for debug')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('simulate', help='simulate one month and write its record')
    p.add_argument('--config', required=True)
    p.add_argument('--seed', type=int, required=True)
    p.add_argument('--out', default='run')
    p.add_argument('--theta', type=_theta)
    p.add_argument('--jobs', type=int, default=DEFAULT_JOBS)
    p.add_argument('--analyze', action='store_true', help='also write analysis/ into the record')
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser('clear', help='clear one day of orders against a ledger log')
    p.add_argument('orders_file')
    p.add_argument('ledger_file')
    p.add_argument('--out')
    p.set_defaults(func=cmd_clear)

    p = sub.add_parser('analyze', help='hypergraphs, persistence and the contingency table of a record')
    p.add_argument('record_dir')
    p.add_argument('--theta', type=_theta, default=None)
    p.add_argument('--sweep', type=_theta, nargs='+')
    p.add_argument('--which', choices=['hypergraph', 'tda', 'table', 'all'], default='all')
    p.add_argument('--out')
    p.add_argument('--jobs', type=int, default=DEFAULT_JOBS)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser('ingest', help='validate meter readings and an order log')
    p.add_argument('meter_csv')
    p.add_argument('orders_jsonl')
    p.add_argument('--out', default='ingested')
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser('report', help='write report files for a record')
    p.add_argument('record_dir')
    p.add_argument('--theta', type=_theta, default=None)
    p.add_argument('--out')
    p.add_argument('--jobs', type=int, default=DEFAULT_JOBS)
    p.add_argument('--xlsx', action='store_true', help='also write report.xlsx')
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return InputError.exit_code if e.code else 0
    setup_logging(args.verbose)
    try:
        return args.func(args)
    except EdisonError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.exception(f"Internal fault: {e}")
        return EdisonError.exit_code


if __name__ == '__main__':
    sys.exit(main())
