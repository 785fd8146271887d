# -*- coding: utf-8 -*-
"""
Market analysis module
Labels each day by (transactions executed?) x (robust cavity present?),
builds the contingency table, activity ratios and association, and
assembles the run report with daily counts, curve dumps and the dashboard
"""

import json
import logging
import os
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence

import pandas as pd
from scipy.stats import fisher_exact

import auction
import hypergraph
import tda
from config import REPORT_SCHEMA_VERSION, TOOL_VERSION
from errors import InputError
from ledger import CURRENCY, replay
from lifecycle import TOKENS, MonthRecord

logger = logging.getLogger(__name__)

CURVE_COLUMNS = ['day', 'token', 'side', 'price', 'cumulative_qty']
COUNT_COLUMNS = ['day', 'token', 'bids', 'asks', 'contracted_orders', 'volume', 'price']


class MissingDiagram(InputError):
    pass


class InputMismatch(InputError):
    pass


@dataclass(frozen=True)
class DayLabel:
    day: int
    has_transactions: bool
    has_robust_cavity: bool


@dataclass(frozen=True)
class ContingencyTable:
    n_tx_nocav: int = 0
    n_notx_nocav: int = 0
    n_tx_cav: int = 0
    n_notx_cav: int = 0

    @property
    def total(self) -> int:
        return self.n_tx_nocav + self.n_notx_nocav + self.n_tx_cav + self.n_notx_cav

    def to_dict(self) -> Dict[str, int]:
        return {
            'n_tx_nocav': self.n_tx_nocav,
            'n_notx_nocav': self.n_notx_nocav,
            'n_tx_cav': self.n_tx_cav,
            'n_notx_cav': self.n_notx_cav,
            'total': self.total,
        }


def _pairs_by_day(diagrams) -> Dict[int, List[tda.PersistencePair]]:
    return diagrams.pairs if isinstance(diagrams, tda.MonthDiagrams) else diagrams


def label_days(record: MonthRecord, diagrams, theta: float,
               tokens: Optional[Sequence[str]] = None) -> List[DayLabel]:
    """
    One label per day from 2 on. A day has transactions when any of the
    given tokens (both by default) cleared a positive volume.
    """
    pairs = _pairs_by_day(diagrams)
    tokens = tuple(tokens) if tokens else TOKENS
    labels = []
    for day in record.days:
        if day < 2:
            continue
        if day not in pairs:
            raise MissingDiagram(f"No persistence diagram for day {day}")
        results = record.results[day]
        traded = any(results[t].volume > 0 for t in tokens if t in results)
        labels.append(DayLabel(day, traded, bool(tda.robust_cavities(pairs[day], theta))))
    return labels


def contingency(labels: Iterable[DayLabel]) -> ContingencyTable:
    counts = {'n_tx_nocav': 0, 'n_notx_nocav': 0, 'n_tx_cav': 0, 'n_notx_cav': 0}
    for label in labels:
        key = ('n_tx_' if label.has_transactions else 'n_notx_') + ('cav' if label.has_robust_cavity else 'nocav')
        counts[key] += 1
    return ContingencyTable(**counts)


def _ratio(numerator: int, denominator: int) -> Optional[float]:
    return numerator / denominator if denominator else None


def activity_ratios(table: ContingencyTable) -> Dict[str, Optional[float]]:
    """Cavity days per no-cavity day, with and without transactions; None when undefined"""
    return {
        'ratio_with_tx': _ratio(table.n_tx_cav, table.n_tx_nocav),
        'ratio_without_tx': _ratio(table.n_notx_cav, table.n_notx_nocav),
    }


def association(table: ContingencyTable) -> Dict[str, Optional[float]]:
    """Odds ratio of cavities on trading days vs quiet days, with Fisher's exact p-value"""
    odds = _ratio(table.n_tx_cav * table.n_notx_nocav, table.n_tx_nocav * table.n_notx_cav)
    p_value = None
    if table.total:
        _, p_value = fisher_exact([[table.n_tx_cav, table.n_tx_nocav],
                                   [table.n_notx_cav, table.n_notx_nocav]])
        p_value = float(p_value)
    return {'odds_ratio': odds, 'fisher_p_value': p_value}


def theta_sweep(record: MonthRecord, diagrams, thetas: Sequence[float],
                tokens: Optional[Sequence[str]] = None) -> List[Dict]:
    rows = []
    for theta in sorted(thetas):
        table = contingency(label_days(record, diagrams, theta, tokens))
        rows.append({'theta': theta, **table.to_dict()})
    return rows


# ----------------------------------------------------------------------
# Daily market tables
# ----------------------------------------------------------------------

def daily_count_rows(record: MonthRecord) -> List[Dict]:
    """Bid, ask and contracted-order counts per day and token"""
    rows = []
    for day in record.days:
        for token in TOKENS:
            book = record.books[day][token]
            result = record.results[day][token]
            rows.append({
                'day': day,
                'token': token,
                'bids': len(book.bids),
                'asks': len(book.asks),
                'contracted_orders': len({f.order_id for f in result.fills if f.qty > 0}),
                'volume': result.volume,
                'price': result.price,
            })
    return rows


def daily_counts(record: MonthRecord) -> pd.DataFrame:
    return pd.DataFrame(daily_count_rows(record), columns=COUNT_COLUMNS)


def curve_rows(record: MonthRecord) -> pd.DataFrame:
    """Demand and supply step curves of every day"""
    rows = []
    for day in record.days:
        for token in TOKENS:
            book = record.books[day][token]
            for side, curve in ((auction.BUY, auction.demand_curve(book)), (auction.SELL, auction.supply_curve(book))):
                rows.extend({'day': day, 'token': token, 'side': side, 'price': p.price,
                             'cumulative_qty': p.cumulative_qty} for p in curve)
    return pd.DataFrame(rows, columns=CURVE_COLUMNS)


def persistence_summary(diagrams, theta: float) -> List[Dict]:
    rows = []
    for day, pairs in sorted(_pairs_by_day(diagrams).items()):
        cavities = [p for p in pairs if p.dim == 1 and p.robustness > 0]
        robust = tda.robust_cavities(pairs, theta)
        rows.append({
            'day': day,
            'h1_pairs': len(cavities),
            'robust_cavities': len(robust),
            'zero_persistence_pairs': sum(1 for p in pairs if p.zero_persistence),
            'max_robustness': round(robust[0].robustness, 6) if robust else 0.0,
        })
    return rows


def dashboard(record: MonthRecord) -> Dict:
    """Per-student view as of the last trading day, before month-end settlement"""
    last_day = max(record.days) if record.days else 0
    ledger = replay(tx for tx in record.ledger.log if tx.day <= last_day)
    usage = {s: round(sum(record.usage_kwh[d].get(s, 0.0) for d in record.days), 3) for s in record.students}
    ranking = sorted(usage, key=lambda s: (-usage[s], s))
    shares = {}
    for token in TOKENS:
        supply = ledger.supply(token)
        shares[token] = round(ledger.aggregate_remaining(token) / supply, 6) if supply else None
    totals = [round(sum(record.usage_kwh[d].values()), 3) for d in record.days]
    daily_change = [{'day': d, 'change_kwh': round(totals[i] - totals[i - 1], 3)}
                    for i, d in enumerate(record.days) if i > 0]
    students = {}
    for student in record.students:
        students[student] = {
            'balances': {a: ledger.balance_of(student, a) for a in (*TOKENS, CURRENCY)},
            'usage_kwh': usage[student],
            'usage_rank': ranking.index(student) + 1,
        }
    return {
        'as_of_day': last_day,
        'last_prices': record.last_prices.get(last_day, {}),
        'students': students,
        'usage_ranking': ranking,
        'student_token_share': shares,
        'daily_usage_change': daily_change,
    }


# ----------------------------------------------------------------------
# Report
# ----------------------------------------------------------------------

def report(record: MonthRecord, hypergraphs: Dict[str, hypergraph.Hypergraph], diagrams: tda.MonthDiagrams,
           table: ContingencyTable, theta: float, sweep: Sequence[float] = ()) -> Dict:
    """Machine-readable report of one run; every figure is recomputable from the record"""
    run_ids = {record.run_id, diagrams.run_id} | {h.run_id for h in hypergraphs.values()}
    if len(run_ids) != 1:
        raise InputMismatch(f"Report inputs come from different runs: {sorted(run_ids)}")
    labels = label_days(record, diagrams, theta)
    return {
        'schema_version': REPORT_SCHEMA_VERSION,
        'tool_version': TOOL_VERSION,
        'run_id': record.run_id,
        'theta': theta,
        'scaling': diagrams.scaling,
        'daily_counts': daily_count_rows(record),
        'hypergraphs': {t: hypergraph.summary(h) for t, h in sorted(hypergraphs.items())},
        'persistence': persistence_summary(diagrams, theta),
        'labels': [{'day': l.day, 'has_transactions': l.has_transactions,
                    'has_robust_cavity': l.has_robust_cavity} for l in labels],
        'contingency': table.to_dict(),
        'activity_ratios': activity_ratios(table),
        'association': association(table),
        'theta_sensitivity': theta_sweep(record, diagrams, sweep) if sweep else [],
        'coverage': {'labeled_days': table.total, 'month_days': record.config.days_in_month},
        'issuance': record.issuance,
        'settlement': record.settlement,
        'dashboard': dashboard(record),
    }


def _fmt_ratio(value: Optional[float]) -> str:
    return 'undefined' if value is None else f"{value:.3f}"


def report_text(doc: Dict) -> str:
    table = doc['contingency']
    ratios = doc['activity_ratios']
    assoc = doc['association']
    lines = [
        f"Run {doc['run_id']}  (tool {doc['tool_version']}, theta={doc['theta']}, scaling={doc['scaling']})",
        '',
        'Market transactions and cavities',
        '                 no cavity   cavity',
        f"  transactions   {table['n_tx_nocav']:>9}   {table['n_tx_cav']:>6}",
        f"  none           {table['n_notx_nocav']:>9}   {table['n_notx_cav']:>6}",
        f"  labeled days: {doc['coverage']['labeled_days']} of {doc['coverage']['month_days']}",
        '',
        f"Cavity ratio with transactions:    {_fmt_ratio(ratios['ratio_with_tx'])}",
        f"Cavity ratio without transactions: {_fmt_ratio(ratios['ratio_without_tx'])}",
        f"Odds ratio: {_fmt_ratio(assoc['odds_ratio'])}   Fisher p: {_fmt_ratio(assoc['fisher_p_value'])}",
    ]
    if doc['theta_sensitivity']:
        lines += ['', 'Theta sensitivity (tx/cav, notx/cav)']
        for row in doc['theta_sensitivity']:
            lines.append(f"  theta={row['theta']:<6} {row['n_tx_cav']:>3} {row['n_notx_cav']:>3}")
    lines += ['', 'Hypergraphs']
    for token, summ in doc['hypergraphs'].items():
        top = ', '.join(f"{r['node']}({r['degree']})" for r in summ['ranking'][:3])
        lines.append(f"  {token}: {summ['nodes']} nodes, {summ['edges']} trading days; top: {top or '-'}")
    lines += ['', 'Month-end settlement']
    for token, s in sorted(doc['settlement'].items()):
        lines.append(f"  {token}: S={s['total_surplus']} D={s['total_deficit']} buy={s['buy_price']} "
                     f"sell={s['sell_price']} reserve delta={s['reserve_delta']}")
    return '\n'.join(lines) + '\n'


def write_report(doc: Dict, record: MonthRecord, out_dir: str, xlsx: bool = False) -> None:
    """report.json, report.txt and curves.csv; report.xlsx on request"""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, 'report.json'), 'w', encoding='utf-8') as f:
        f.write(json.dumps(doc, sort_keys=True, indent=2) + '\n')
    with open(os.path.join(out_dir, 'report.txt'), 'w', encoding='utf-8') as f:
        f.write(report_text(doc))
    curve_rows(record).to_csv(os.path.join(out_dir, 'curves.csv'), index=False, lineterminator='\n')
    if xlsx:
        with pd.ExcelWriter(os.path.join(out_dir, 'report.xlsx'), engine='openpyxl') as writer:
            daily_counts(record).to_excel(writer, sheet_name='DailyCounts', index=False)
            pd.DataFrame([doc['contingency']]).to_excel(writer, sheet_name='Contingency', index=False)
            ranking = [{'token': t, **r} for t, s in doc['hypergraphs'].items() for r in s['ranking']]
            pd.DataFrame(ranking, columns=['token', 'node', 'degree']).to_excel(writer, sheet_name='Ranking', index=False)
    logger.info(f"Report written to {out_dir}")
