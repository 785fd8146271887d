# -*- coding: utf-8 -*-
"""
Monthly token lifecycle module
Beginning-of-month issuance, in-month shortage issuance and daily clearing,
end-of-month zero-net settlement, and the MonthRecord that captures a run
"""

import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field, replace
from datetime import date
from decimal import Decimal, ROUND_HALF_UP
from typing import Any, Dict, List, Optional, Protocol

import auction
from auction import ClearingResult, Order, OrderBook, SELL
from config import DEFAULT_THETA, DEFAULT_THETA_SWEEP, SYSTEM_ACCOUNT, read_toml
from errors import ConfigError, EdisonError, RecordError
from ledger import CURRENCY, Ledger, TokenKind, export_log, read_log, replay

logger = logging.getLogger(__name__)

TOKENS = (TokenKind.UPX.value, TokenKind.SPX.value)


def round_half_up(value) -> int:
    return int(Decimal(str(value)).quantize(Decimal('1'), rounding=ROUND_HALF_UP))


def _div_half_up(numerator: int, denominator: int) -> int:
    """numerator / denominator rounded half-up, exact for non-negative ints"""
    return (2 * numerator + denominator) // (2 * denominator)


@dataclass
class MonthConfig:
    days_in_month: int = 31
    num_students: int = 80
    active_students: int = 17
    start_date: str = '2022-07-01'
    # Same month last year, split by source (grid -> UPX, rooftop PV -> SPX)
    prev_year_usage_kwh: Dict[str, int] = field(default_factory=lambda: {'UPX': 12400, 'SPX': 1000})
    base_price: Dict[str, int] = field(default_factory=lambda: {'UPX': 30, 'SPX': 36})
    shortage_premium_factor: float = 1.5
    settlement_discount_factor: float = 0.8
    # Explicit month-end buy price per token; derived from the discount when absent
    settlement_anchor: Dict[str, int] = field(default_factory=dict)
    initial_currency: int = 10000
    carry_unmatched_orders: bool = False
    theta: float = DEFAULT_THETA
    theta_sweep: List[float] = field(default_factory=lambda: list(DEFAULT_THETA_SWEEP))
    scaling: str = 'standard'

    def validate(self) -> 'MonthConfig':
        if self.days_in_month < 1:
            raise ConfigError("days_in_month must be at least 1")
        try:
            date.fromisoformat(self.start_date)
        except (TypeError, ValueError):
            raise ConfigError(f"start_date must be an ISO date, got {self.start_date!r}")
        if self.num_students <= 0:
            raise ConfigError("num_students must be positive")
        if not 0 < self.active_students <= self.num_students:
            raise ConfigError("active_students must be in 1..num_students")
        for token in TOKENS:
            if token not in self.base_price or token not in self.prev_year_usage_kwh:
                raise ConfigError(f"Missing {token} section (base_price, prev_year_usage_kwh)")
            if self.base_price[token] <= 0:
                raise ConfigError(f"{token} base_price must be positive")
            if self.prev_year_usage_kwh[token] < 0:
                raise ConfigError(f"{token} prev_year_usage_kwh must be non-negative")
        if self.base_price['SPX'] <= self.base_price['UPX']:
            raise ConfigError("SPX base_price must exceed UPX base_price")
        if self.shortage_premium_factor <= 0 or self.settlement_discount_factor <= 0:
            raise ConfigError("Pricing factors must be positive")
        if self.initial_currency < 0:
            raise ConfigError("initial_currency must be non-negative")
        if self.theta < 0 or any(t < 0 for t in self.theta_sweep):
            raise ConfigError("theta values must be non-negative")
        if self.scaling not in ('standard', 'identity'):
            raise ConfigError(f"Unknown scaling {self.scaling!r}")
        return self

    def anchor_price(self, token: str) -> int:
        if token in self.settlement_anchor:
            return int(self.settlement_anchor[token])
        return max(1, round_half_up(self.base_price[token] * self.settlement_discount_factor))

    def shortage_price(self, token: str) -> int:
        """Shortage issue price, always strictly above the base price"""
        base = self.base_price[token]
        return max(base + 1, round_half_up(base * self.shortage_premium_factor))

    def prev_year_daily_mean(self, token: str) -> float:
        """Expected daily demand of the participating students"""
        share = self.active_students / self.num_students
        return self.prev_year_usage_kwh[token] * share / self.days_in_month

    def to_dict(self) -> Dict[str, Any]:
        return {
            'days_in_month': self.days_in_month,
            'num_students': self.num_students,
            'active_students': self.active_students,
            'start_date': self.start_date,
            'prev_year_usage_kwh': dict(self.prev_year_usage_kwh),
            'base_price': dict(self.base_price),
            'shortage_premium_factor': self.shortage_premium_factor,
            'settlement_discount_factor': self.settlement_discount_factor,
            'settlement_anchor': dict(self.settlement_anchor),
            'initial_currency': self.initial_currency,
            'carry_unmatched_orders': self.carry_unmatched_orders,
            'theta': self.theta,
            'theta_sweep': list(self.theta_sweep),
            'scaling': self.scaling,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'MonthConfig':
        known = set(cls().to_dict())
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"Unknown month config keys: {sorted(unknown)}")
        try:
            return cls(**data).validate()
        except TypeError as e:
            raise ConfigError(f"Bad month config: {e}")


def month_config_from_toml(raw: Dict[str, Any]) -> MonthConfig:
    """Map the TOML sections [month], [tokens.*], [pricing], [analysis] onto MonthConfig"""
    data: Dict[str, Any] = {}
    try:
        data.update(raw.get('month', {}))
        tokens = raw.get('tokens', {})
        if tokens:
            data['prev_year_usage_kwh'] = {t: int(tokens[t]['prev_year_usage_kwh']) for t in TOKENS}
            data['base_price'] = {t: int(tokens[t]['base_price']) for t in TOKENS}
            anchors = {t: int(tokens[t]['settlement_anchor']) for t in TOKENS if 'settlement_anchor' in tokens[t]}
            if anchors:
                data['settlement_anchor'] = anchors
        data.update(raw.get('pricing', {}))
        data.update(raw.get('analysis', {}))
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"Bad token section in config: {e}")
    return MonthConfig.from_dict(data)


def load_month_config(path: str) -> MonthConfig:
    return month_config_from_toml(read_toml(path))


def student_ids(config: MonthConfig) -> List[str]:
    return [f"s{i:02d}" for i in range(1, config.active_students + 1)]


# ----------------------------------------------------------------------
# Beginning of the month
# ----------------------------------------------------------------------

def issue_monthly(config: MonthConfig, ledger: Ledger, students: Optional[List[str]] = None,
                  day: int = 0, report: Optional[Dict] = None) -> Ledger:
    """
    Mint last year's usage to the system and sell each student
    floor(usage / num_students) tokens at base price. Students who cannot pay
    get the affordable amount; the remainder stays with the system.
    """
    students = students if students is not None else ledger.students()
    allocations: Dict[str, Dict[str, int]] = {s: {} for s in students}
    reductions = []
    for token in TOKENS:
        total = config.prev_year_usage_kwh[token]
        per_student = total // config.num_students
        if total > 0:
            ledger.mint(token, ledger.system_account, total, day, 'issuance')
        price = config.base_price[token]
        for student in students:
            qty = per_student
            affordable = ledger.available(student, CURRENCY) // price
            if affordable < qty:
                logger.warning(f"{student} can afford {affordable} of {qty} {token} at issuance")
                reductions.append({'account': student, 'token': token, 'requested': qty, 'allocated': affordable})
                qty = affordable
            allocations[student][token] = qty
            if qty > 0:
                ledger.transfer(token, ledger.system_account, student, qty, day, 'issuance_sale')
                ledger.transfer(CURRENCY, student, ledger.system_account, qty * price, day, 'issuance_sale')
    if report is not None:
        report.update({
            'per_student': {t: config.prev_year_usage_kwh[t] // config.num_students for t in TOKENS},
            'allocations': allocations,
            'reductions': reductions,
            'retained_by_system': {t: ledger.balance_of(ledger.system_account, t) for t in TOKENS},
        })
    return ledger


# ----------------------------------------------------------------------
# During the month
# ----------------------------------------------------------------------

def forecast_demand(config: MonthConfig, token_usage: Dict[int, Dict[str, Dict[str, int]]], day: int) -> Dict[str, int]:
    """
    Demand for the rest of the month (today included): month-to-date mean
    daily usage times remaining days, or last year's daily mean before any
    usage is known.
    """
    remaining_days = config.days_in_month - day + 1
    past = [d for d in token_usage if d < day]
    forecast = {}
    for token in TOKENS:
        if past:
            mean = sum(sum(u[token] for u in token_usage[d].values()) for d in past) / len(past)
        else:
            mean = config.prev_year_daily_mean(token)
        forecast[token] = math.ceil(round(mean * remaining_days, 9))
    return forecast


def shortage_issue(config: MonthConfig, ledger: Ledger, forecast: Dict[str, int],
                   day: int = 1, arrival_start: int = 0) -> List[Order]:
    """One system ask per token whose remaining student holdings fall short of the forecast"""
    orders = []
    arrival = arrival_start
    for token in TOKENS:
        remaining = ledger.aggregate_remaining(token)
        wanted = forecast.get(token, 0)
        if remaining < wanted:
            orders.append(Order(
                order_id=auction.make_order_id(day, arrival),
                account=ledger.system_account,
                token=token,
                side=SELL,
                price=config.shortage_price(token),
                qty=wanted - remaining,
                day=day,
                arrival=arrival,
            ))
            logger.info(f"Day {day}: {token} shortage, remaining {remaining} < forecast {wanted}")
            arrival += 1
    return orders


def split_usage(config: MonthConfig, kwh: float) -> Dict[str, int]:
    """Whole tokens consumed for one student-day, rounded up, split by last year's source shares"""
    total = math.ceil(round(kwh, 3))
    prev_total = sum(config.prev_year_usage_kwh[t] for t in TOKENS)
    if prev_total == 0:
        return {'UPX': total, 'SPX': 0}
    spx = _div_half_up(total * config.prev_year_usage_kwh['SPX'], prev_total)
    return {'UPX': total - spx, 'SPX': spx}


# ----------------------------------------------------------------------
# End of the month
# ----------------------------------------------------------------------

def settle_month(config: MonthConfig, ledger: Ledger, usage: Dict[str, Dict[str, int]],
                 day: int = 0, report: Optional[Dict] = None) -> Ledger:
    """
    Buy every surplus back at the anchor price b and sell every deficit at
    s = S*b/D (rounded), so the system's revenue matches its cost within
    rounding; then burn the consumed tokens. Residue goes to the system
    reserve. A one-sided month runs its leg at the anchor price.
    """
    system = ledger.system_account
    token_reports = {}
    for token in TOKENS:
        surpluses: Dict[str, int] = {}
        deficits: Dict[str, int] = {}
        for student in sorted(usage):
            held = ledger.balance_of(student, token)
            due = usage[student].get(token, 0)
            if held > due:
                surpluses[student] = held - due
            elif due > held:
                deficits[student] = due - held
        total_surplus = sum(surpluses.values())
        total_deficit = sum(deficits.values())
        buy_price = config.anchor_price(token)
        if total_surplus > 0 and total_deficit > 0:
            sell_price = _div_half_up(total_surplus * buy_price, total_deficit)
        elif total_deficit > 0:
            sell_price = buy_price
        else:
            sell_price = None

        cost = total_surplus * buy_price
        billed = total_deficit * sell_price if sell_price is not None else 0
        payments = {}
        debts = {}
        for student, qty in deficits.items():
            bill = qty * sell_price
            paid = min(bill, ledger.available(student, CURRENCY))
            payments[student] = paid
            if paid < bill:
                debts[student] = bill - paid
                logger.warning(f"{student} owes {bill - paid} for month-end {token}")
        collected = sum(payments.values())
        net = collected - cost

        if net < 0:
            ledger.mint(CURRENCY, system, -net, day, 'settlement_residue')
        for student, qty in deficits.items():
            held = ledger.balance_of(system, token)
            if held < qty:
                ledger.mint(token, system, qty - held, day, 'settlement_issue')
            ledger.transfer(token, system, student, qty, day, 'settlement_sale')
            ledger.transfer(CURRENCY, student, system, payments[student], day, 'settlement_sale')
        for student, qty in surpluses.items():
            ledger.transfer(token, student, system, qty, day, 'settlement_buyback')
            ledger.transfer(CURRENCY, system, student, qty * buy_price, day, 'settlement_buyback')
        if net > 0:
            ledger.burn(CURRENCY, system, net, day, 'settlement_residue')

        for student in sorted(usage):
            due = usage[student].get(token, 0)
            if due > 0:
                ledger.burn(token, student, due, day, 'consumption')

        token_reports[token] = {
            'total_surplus': total_surplus,
            'total_deficit': total_deficit,
            'buy_price': buy_price,
            'sell_price': sell_price,
            'cost': cost,
            'revenue_billed': billed,
            'revenue_collected': collected,
            'residue': billed - cost,
            'reserve_delta': net,
            'debts': debts,
            'one_sided': (total_surplus > 0) != (total_deficit > 0),
        }
        logger.info(f"Month-end {token}: S={total_surplus} D={total_deficit} b={buy_price} s={sell_price} net={net}")
    if report is not None:
        report.update(token_reports)
    return ledger


# ----------------------------------------------------------------------
# Whole month
# ----------------------------------------------------------------------

class DayOrderSource(Protocol):
    """Supplies metered usage and student orders, one day at a time"""

    students: List[str]

    def fingerprint(self) -> str:
        ...

    def usage(self, day: int) -> Dict[str, float]:
        ...

    def orders(self, day: int, ledger: Ledger, last_prices: Dict[str, int],
               projection: Dict[str, Dict[str, float]], dues: Dict[str, Dict[str, int]],
               remaining_days: int) -> List[Order]:
        ...


@dataclass
class MonthRecord:
    run_id: str
    config: MonthConfig
    students: List[str]
    ledger: Ledger
    books: Dict[int, Dict[str, OrderBook]] = field(default_factory=dict)
    results: Dict[int, Dict[str, ClearingResult]] = field(default_factory=dict)
    validation_rejects: Dict[int, List[Dict[str, Any]]] = field(default_factory=dict)
    usage_kwh: Dict[int, Dict[str, float]] = field(default_factory=dict)
    token_usage: Dict[int, Dict[str, Dict[str, int]]] = field(default_factory=dict)
    last_prices: Dict[int, Dict[str, int]] = field(default_factory=dict)
    supply: Dict[int, Dict[str, Dict[str, int]]] = field(default_factory=dict)
    issuance: Dict[str, Any] = field(default_factory=dict)
    settlement: Dict[str, Any] = field(default_factory=dict)

    @property
    def days(self) -> List[int]:
        return sorted(self.results)

    def traded_volume(self, day: int, account: str) -> int:
        """Tokens bought plus sold by an account that day, both tokens"""
        return sum(f.qty for r in self.results.get(day, {}).values() for f in r.fills if f.account == account)


def make_run_id(config: MonthConfig, fingerprint: str) -> str:
    data_str = json.dumps({'config': config.to_dict(), 'source': fingerprint}, sort_keys=True)
    return hashlib.md5(data_str.encode()).hexdigest()[:12]


def _supply_snapshot(ledger: Ledger) -> Dict[str, Dict[str, int]]:
    return {
        asset: {'holdings': ledger.supply(asset), 'minted': ledger.minted[asset], 'burned': ledger.burned[asset]}
        for asset in (*TOKENS, CURRENCY)
    }


def _projection(config: MonthConfig, students: List[str],
                token_usage: Dict[int, Dict[str, Dict[str, int]]], day: int) -> Dict[str, Dict[str, float]]:
    """Per-student daily token rate: month-to-date mean, or last year's per-student mean"""
    past = [d for d in token_usage if d < day]
    projection = {}
    for student in students:
        if past:
            projection[student] = {t: sum(token_usage[d][student][t] for d in past) / len(past) for t in TOKENS}
        else:
            projection[student] = {
                t: config.prev_year_usage_kwh[t] / config.num_students / config.days_in_month for t in TOKENS
            }
    return projection


def run_month(config: MonthConfig, source: DayOrderSource) -> MonthRecord:
    """Issuance, then per day shortage issue -> validate -> clear -> settle -> consume, then month-end settlement"""
    config.validate()
    students = list(source.students)
    ledger = Ledger(SYSTEM_ACCOUNT)
    record = MonthRecord(
        run_id=make_run_id(config, source.fingerprint()),
        config=config,
        students=students,
        ledger=ledger,
    )
    for student in students:
        ledger.open_account(student)
        if config.initial_currency > 0:
            ledger.mint(CURRENCY, student, config.initial_currency, 0, 'deposit')
    issue_monthly(config, ledger, students, 0, report=record.issuance)

    last_prices = {t: config.base_price[t] for t in TOKENS}
    dues = {s: {t: 0 for t in TOKENS} for s in students}
    carried: List[Order] = []

    for day in range(1, config.days_in_month + 1):
        try:
            carried = _run_day(config, source, record, day, last_prices, dues, carried)
        except EdisonError as e:
            raise type(e)(f"Day {day}: {e}") from e

    # Month-end transactions are stamped one day after the last trading day
    settle_month(config, ledger, dues, config.days_in_month + 1, report=record.settlement)
    ledger.check_invariants()
    record.supply[config.days_in_month + 1] = _supply_snapshot(ledger)
    logger.info(f"Month {record.run_id} done: {len(ledger.log)} ledger txs")
    return record


def _run_day(config: MonthConfig, source: DayOrderSource, record: MonthRecord, day: int,
             last_prices: Dict[str, int], dues: Dict[str, Dict[str, int]], carried: List[Order]) -> List[Order]:
    ledger = record.ledger
    remaining_days = config.days_in_month - day + 1
    forecast = forecast_demand(config, record.token_usage, day)
    system_orders = shortage_issue(config, ledger, forecast, day, 0)

    projection = _projection(config, record.students, record.token_usage, day)
    fresh = source.orders(day, ledger, dict(last_prices), projection, dues, remaining_days)
    incoming = list(system_orders) + list(carried) + sorted(fresh, key=lambda o: o.arrival)

    accepted = []
    rejects = []
    for arrival, order in enumerate(incoming):
        order = replace(order, day=day, arrival=arrival, order_id=auction.make_order_id(day, arrival))
        try:
            accepted.append(auction.validate_order(ledger, order))
        except (auction.InsufficientTokens, auction.InsufficientCurrency, auction.InvalidOrder) as e:
            rejects.append({'order_id': order.order_id, 'account': order.account, 'token': order.token,
                            'side': order.side, 'reason': str(e)})
    books = auction.build_books(accepted, day)
    results = {}
    next_carry = []
    for token in TOKENS:
        result = auction.clear(books[token])
        auction.settle(ledger, result)
        results[token] = result
        if result.price is not None:
            last_prices[token] = result.price
        if config.carry_unmatched_orders:
            rejected = set(result.rejected)
            next_carry.extend(o for o in books[token].orders
                              if o.order_id in rejected and o.account != ledger.system_account)

    kwh = source.usage(day)
    record.usage_kwh[day] = {s: round(float(kwh.get(s, 0.0)), 3) for s in record.students}
    record.token_usage[day] = {}
    for student in record.students:
        used = split_usage(config, record.usage_kwh[day][student])
        record.token_usage[day][student] = used
        for token in TOKENS:
            dues[student][token] += used[token]
            burn = min(ledger.balance_of(student, token), dues[student][token])
            if burn > 0:
                ledger.burn(token, student, burn, day, 'consumption')
                dues[student][token] -= burn

    ledger.check_invariants()
    record.books[day] = books
    record.results[day] = results
    record.validation_rejects[day] = rejects
    record.last_prices[day] = dict(last_prices)
    record.supply[day] = _supply_snapshot(ledger)
    return [replace(o, day=day + 1) for o in next_carry]


# ----------------------------------------------------------------------
# Record files
# ----------------------------------------------------------------------

def _dump(data: Any, path: str) -> None:
    with open(path, 'w', encoding='utf-8') as f:
        f.write(json.dumps(data, sort_keys=True, indent=2) + '\n')


def export_record(record: MonthRecord, out_dir: str) -> None:
    """Directory of per-day JSON files, the ledger log and a summary"""
    days_dir = os.path.join(out_dir, 'days')
    os.makedirs(days_dir, exist_ok=True)
    for day in record.days:
        _dump({
            'day': day,
            'books': {t: b.to_dict() for t, b in sorted(record.books[day].items())},
            'results': auction.result_document(record.results[day]),
            'validation_rejects': record.validation_rejects.get(day, []),
            'usage_kwh': record.usage_kwh.get(day, {}),
            'token_usage': record.token_usage.get(day, {}),
            'last_prices': record.last_prices.get(day, {}),
            'supply': record.supply.get(day, {}),
        }, os.path.join(days_dir, f"day_{day:02d}.json"))
    export_log(record.ledger, os.path.join(out_dir, 'ledger.jsonl'))
    _dump({
        'run_id': record.run_id,
        'config': record.config.to_dict(),
        'students': record.students,
        'days': record.days,
        'issuance': record.issuance,
        'settlement': record.settlement,
        'final_supply': record.supply.get(record.config.days_in_month + 1, {}),
        'final_state': record.ledger.state(),
        'ledger_digest': record.ledger.digest(),
    }, os.path.join(out_dir, 'summary.json'))
    logger.info(f"Record {record.run_id} written to {out_dir}")


def load_record(record_dir: str) -> MonthRecord:
    """Read an exported record back; the ledger is rebuilt by replaying its log"""
    try:
        with open(os.path.join(record_dir, 'summary.json'), 'r', encoding='utf-8') as f:
            summary = json.load(f)
        config = MonthConfig.from_dict(summary['config'])
        ledger = replay(read_log(os.path.join(record_dir, 'ledger.jsonl')))
        if ledger.digest() != summary['ledger_digest']:
            raise RecordError(f"Ledger replay does not match summary in {record_dir}")
        record = MonthRecord(
            run_id=summary['run_id'],
            config=config,
            students=list(summary['students']),
            ledger=ledger,
            issuance=summary.get('issuance', {}),
            settlement=summary.get('settlement', {}),
        )
        for day in summary['days']:
            with open(os.path.join(record_dir, 'days', f"day_{day:02d}.json"), 'r', encoding='utf-8') as f:
                data = json.load(f)
            record.books[day] = {t: OrderBook.from_dict(b) for t, b in data['books'].items()}
            record.results[day] = {t: ClearingResult.from_dict(r) for t, r in data['results'].items()}
            record.validation_rejects[day] = data.get('validation_rejects', [])
            record.usage_kwh[day] = {s: float(v) for s, v in data['usage_kwh'].items()}
            record.token_usage[day] = data['token_usage']
            record.last_prices[day] = data['last_prices']
            record.supply[day] = data['supply']
        if summary.get('final_supply'):
            record.supply[config.days_in_month + 1] = summary['final_supply']
    except RecordError:
        raise
    except (EdisonError, OSError, KeyError, TypeError, ValueError) as e:
        raise RecordError(f"Missing or corrupt record in {record_dir}: {e}")
    return record
