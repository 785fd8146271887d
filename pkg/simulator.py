# -*- coding: utf-8 -*-
"""
Synthetic month generator
Per-student consumption trajectories and daily order flow for run_month,
plus ingestion of real meter data and order logs for replayed months
"""

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, replace
from datetime import date, timedelta
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

import auction
from auction import BUY, SELL, Order
from config import SYSTEM_ACCOUNT
from errors import ConfigError, InputError
from ledger import CURRENCY, Ledger
from lifecycle import TOKENS, MonthConfig, student_ids

logger = logging.getLogger(__name__)

FIXTURE = 'fixture'
STOCHASTIC = 'stochastic'
REPLAY = 'replay'

# Sub-stream tags for default_rng seed sequences
_USAGE_STREAM = 0
_ORDER_STREAM = 1

METER_COLUMNS = ['date', 'user_id', 'kwh']


class FixtureShapeMismatch(InputError):
    pass


def _student_key(student: str) -> int:
    """Stable integer per student id, independent of roster order"""
    return int(hashlib.md5(student.encode()).hexdigest()[:8], 16)


def _rng(seed: int, student: str, day: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, _student_key(student), day, stream])


@dataclass
class ConsumptionModel:
    mode: str
    students: List[str]
    days_in_month: int
    start_weekday: int = 0
    # fixture: student -> daily kWh, index 0 is day 1
    fixture: Dict[str, List[float]] = field(default_factory=dict)
    # stochastic
    means: Dict[str, float] = field(default_factory=dict)
    dispersion: float = 0.0
    weekday_factor: float = 1.0
    weekend_factor: float = 1.0
    seed: int = 0

    def validate(self) -> 'ConsumptionModel':
        if self.mode == FIXTURE:
            if sorted(self.fixture) != sorted(self.students):
                raise FixtureShapeMismatch(
                    f"Fixture covers {len(self.fixture)} students, expected {len(self.students)}"
                )
            for student, row in self.fixture.items():
                if len(row) != self.days_in_month:
                    raise FixtureShapeMismatch(
                        f"Fixture for {student} has {len(row)} days, expected {self.days_in_month}"
                    )
                if any(v < 0 for v in row):
                    raise FixtureShapeMismatch(f"Fixture for {student} has negative kWh")
        elif self.mode == STOCHASTIC:
            missing = [s for s in self.students if s not in self.means]
            if missing:
                raise ConfigError(f"No mean usage for {missing}")
            if any(m < 0 for m in self.means.values()):
                raise ConfigError("Mean usage must be non-negative")
            if self.dispersion < 0 or self.weekday_factor < 0 or self.weekend_factor < 0:
                raise ConfigError("dispersion and day factors must be non-negative")
        else:
            raise ConfigError(f"Unknown consumption mode {self.mode!r}")
        return self

    def is_weekend(self, day: int) -> bool:
        return (self.start_weekday + day - 1) % 7 >= 5


@dataclass
class AgentPolicy:
    account: str
    buffer_days: float = 1.0
    aggressiveness: float = 0.1
    participation: float = 0.8
    seed: int = 0

    def validate(self) -> 'AgentPolicy':
        if not 0 <= self.participation <= 1:
            raise ConfigError(f"{self.account}: participation must be in [0, 1]")
        if not 0 <= self.aggressiveness <= 1:
            raise ConfigError(f"{self.account}: aggressiveness must be in [0, 1]")
        if self.buffer_days < 0:
            raise ConfigError(f"{self.account}: buffer_days must be non-negative")
        return self


def gen_usage(model: ConsumptionModel, day: int) -> Dict[str, float]:
    """Per-student kWh for one day, deterministic in (model, day)"""
    if not 1 <= day <= model.days_in_month:
        raise FixtureShapeMismatch(f"Day {day} outside 1..{model.days_in_month}")
    if model.mode == FIXTURE:
        return {s: float(model.fixture[s][day - 1]) for s in model.students}

    factor = model.weekend_factor if model.is_weekend(day) else model.weekday_factor
    usage = {}
    for student in model.students:
        mean = model.means[student] * factor
        if model.dispersion == 0 or mean == 0:
            value = mean
        else:
            # Gamma with coefficient of variation = dispersion
            shape = 1.0 / (model.dispersion ** 2)
            value = _rng(model.seed, student, day, _USAGE_STREAM).gamma(shape, mean / shape)
        usage[student] = round(float(value), 3)
    return usage


def _target(projected: float, due: int, remaining_days: int, buffer_days: float) -> int:
    """Tokens a student wants to hold: what it owes plus the rest of the month plus the buffer"""
    return due + math.ceil(round(projected * (remaining_days + buffer_days), 9))


def gen_orders(policy: AgentPolicy, ledger: Ledger, last_price: Dict[str, int],
               projected_usage: Dict[str, float], day: int,
               dues: Optional[Dict[str, int]] = None, remaining_days: int = 1) -> List[Order]:
    """
    One student's orders for the day: a bid per token it is short of, an ask
    per token it holds beyond its target. Bids never commit more currency
    than the student has available, so every order passes validate_order.
    """
    rng = _rng(policy.seed, policy.account, day, _ORDER_STREAM)
    if rng.random() >= policy.participation:
        return []
    dues = dues or {}
    budget = ledger.available(policy.account, CURRENCY)
    orders = []
    for token in TOKENS:
        noise = rng.uniform(-1.0, 1.0)
        price = max(1, int(round(last_price[token] * (1 + policy.aggressiveness * noise))))
        target = _target(projected_usage.get(token, 0.0), dues.get(token, 0), remaining_days, policy.buffer_days)
        position = ledger.available(policy.account, token) - target
        if position < 0:
            qty = min(-position, budget // price)
            if qty <= 0:
                continue
            budget -= qty * price
            side = BUY
        elif position > 0:
            qty = position
            side = SELL
        else:
            continue
        arrival = len(orders)
        orders.append(Order(
            order_id=auction.make_order_id(day, arrival),
            account=policy.account,
            token=token,
            side=side,
            price=price,
            qty=qty,
            day=day,
            arrival=arrival,
        ))
    return orders


# ----------------------------------------------------------------------
# Day order sources for run_month
# ----------------------------------------------------------------------

class SyntheticSource:
    """Seeded agents trading against a consumption model"""

    def __init__(self, model: ConsumptionModel, policies: Dict[str, AgentPolicy], seed: int,
                 settings: Optional[Dict[str, Any]] = None):
        self.model = model.validate()
        self.policies = {s: p.validate() for s, p in policies.items()}
        self.students = list(model.students)
        self.seed = seed
        self.settings = settings or {}

    def fingerprint(self) -> str:
        return json.dumps({'mode': self.model.mode, 'seed': self.seed, 'settings': self.settings}, sort_keys=True)

    def usage(self, day: int) -> Dict[str, float]:
        return gen_usage(self.model, day)

    def orders(self, day, ledger, last_prices, projection, dues, remaining_days) -> List[Order]:
        orders = []
        for student in self.students:
            for order in gen_orders(self.policies[student], ledger, last_prices, projection[student],
                                    day, dues.get(student), remaining_days):
                orders.append(replace(order, arrival=len(orders)))
        logger.debug(f"Day {day}: {len(orders)} synthetic orders")
        return orders


class ReplaySource:
    """Replays ingested meter readings and an order log"""

    def __init__(self, config: MonthConfig, meter: pd.DataFrame, orders: List[Order]):
        self.config = config
        start = date.fromisoformat(config.start_date)
        meter = meter.copy()
        meter['day'] = [(d - start).days + 1 for d in meter['date']]
        meter = meter[(meter['day'] >= 1) & (meter['day'] <= config.days_in_month)]
        self.students = sorted((set(meter['user_id']) | {o.account for o in orders}) - {SYSTEM_ACCOUNT})
        self._usage = {
            int(day): dict(zip(group['user_id'], group['kwh'].astype(float)))
            for day, group in meter.groupby('day')
        }
        self._orders: Dict[int, List[Order]] = {}
        for order in sorted(orders, key=lambda o: o.placed_at):
            self._orders.setdefault(order.day, []).append(order)
        content = meter[['day', 'user_id', 'kwh']].to_csv(index=False) + ''.join(
            json.dumps(o.to_dict(), sort_keys=True) for o in orders
        )
        self._digest = hashlib.sha256(content.encode()).hexdigest()

    def fingerprint(self) -> str:
        return f"replay:{self._digest}"

    def usage(self, day: int) -> Dict[str, float]:
        return dict(self._usage.get(day, {}))

    def orders(self, day, ledger, last_prices, projection, dues, remaining_days) -> List[Order]:
        return list(self._orders.get(day, []))


# ----------------------------------------------------------------------
# Scenario configuration
# ----------------------------------------------------------------------

def default_means(config: MonthConfig, students: List[str], low: float, high: float) -> Dict[str, float]:
    """Per-student mean daily kWh spread evenly between low and high multiples of last year's mean"""
    prev_total = sum(config.prev_year_usage_kwh[t] for t in TOKENS)
    base = prev_total / config.num_students / config.days_in_month
    n = len(students)
    means = {}
    for i, student in enumerate(students):
        share = low if n == 1 else low + (high - low) * i / (n - 1)
        means[student] = round(base * share, 3)
    return means


def load_scenario(raw: Dict[str, Any], config: MonthConfig, seed: int):
    """Build the day order source described by the [scenario] table"""
    scenario = dict(raw.get('scenario', {}))
    mode = scenario.pop('mode', STOCHASTIC)
    settings = {'mode': mode, **scenario}
    start_weekday = date.fromisoformat(config.start_date).weekday()
    students = student_ids(config)

    if mode == REPLAY:
        try:
            meter_path = scenario['meter_csv']
            orders_path = scenario['orders_jsonl']
        except KeyError as e:
            raise ConfigError(f"Replay scenario needs {e.args[0]}")
        meter, rejects = ingest_meter_csv(meter_path)
        if rejects:
            logger.warning(f"{len(rejects)} meter rows rejected in {meter_path}")
        return ReplaySource(config, meter, auction.read_orders_jsonl(orders_path))

    try:
        if mode == FIXTURE:
            meter, rejects = ingest_meter_csv(scenario['fixture_csv'])
            if rejects:
                raise FixtureShapeMismatch(f"Fixture has invalid rows: {rejects[0]['reason']}")
            model = ConsumptionModel(
                mode=FIXTURE, students=students, days_in_month=config.days_in_month,
                start_weekday=start_weekday, fixture=fixture_table(meter, config),
            )
        elif mode == STOCHASTIC:
            low, high = scenario.get('mean_factor_range', [0.5, 1.2])
            means = scenario.get('means') or default_means(config, students, float(low), float(high))
            model = ConsumptionModel(
                mode=STOCHASTIC, students=students, days_in_month=config.days_in_month,
                start_weekday=start_weekday, means={s: float(v) for s, v in means.items()},
                dispersion=float(scenario.get('dispersion', 0.3)),
                weekday_factor=float(scenario.get('weekday_factor', 1.0)),
                weekend_factor=float(scenario.get('weekend_factor', 1.15)),
                seed=seed,
            )
        else:
            raise ConfigError(f"Unknown scenario mode {mode!r}")
        policies = {
            s: AgentPolicy(
                account=s,
                buffer_days=float(scenario.get('buffer_days', 1.0)),
                aggressiveness=float(scenario.get('aggressiveness', 0.1)),
                participation=float(scenario.get('participation', 0.8)),
                seed=seed,
            )
            for s in model.students
        }
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"Bad [scenario] section: {e}")
    return SyntheticSource(model, policies, seed, settings)


def fixture_table(meter: pd.DataFrame, config: MonthConfig) -> Dict[str, List[float]]:
    """Pivot meter rows into student -> daily kWh for the configured month"""
    start = date.fromisoformat(config.start_date)
    dates = [start + timedelta(days=i) for i in range(config.days_in_month)]
    table = meter.pivot(index='user_id', columns='date', values='kwh')
    if list(table.columns) != dates or table.isna().any().any():
        raise FixtureShapeMismatch(
            f"Fixture must hold one reading per student for each of {config.days_in_month} days from {start}"
        )
    return {str(user): [float(v) for v in row] for user, row in table.iterrows()}


# ----------------------------------------------------------------------
# Meter-data ingestion
# ----------------------------------------------------------------------

def ingest_meter_csv(path: str) -> Tuple[pd.DataFrame, List[Dict[str, Any]]]:
    """
    Read a date,user_id,kwh file. Bad rows are rejected with a reason
    (line numbers count the header as line 1); a bad header raises.
    Returns: (accepted rows sorted by date and user, rejects)
    """
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
    except FileNotFoundError:
        raise InputError(f"Meter file not found: {path}")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise InputError(f"{path}:1: cannot parse meter CSV: {e}")
    if list(df.columns) != METER_COLUMNS:
        raise InputError(f"{path}:1: header must be {','.join(METER_COLUMNS)}, got {','.join(df.columns)}")

    accepted = []
    rejects = []
    seen = set()
    for idx, row in df.iterrows():
        line_no = idx + 2
        reason = None
        try:
            day = date.fromisoformat(row['date'].strip())
        except ValueError:
            day = None
            reason = f"bad date {row['date']!r}"
        user = row['user_id'].strip()
        kwh = pd.to_numeric(row['kwh'], errors='coerce')
        if reason is None and not user:
            reason = 'empty user_id'
        elif reason is None and (pd.isna(kwh) or not math.isfinite(kwh)):
            reason = f"bad kwh {row['kwh']!r}"
        elif reason is None and kwh < 0:
            reason = f"negative kwh {kwh}"
        elif reason is None and (day, user) in seen:
            reason = f"duplicate reading for {user} on {day}"
        if reason:
            rejects.append({'line': line_no, 'reason': reason})
            continue
        seen.add((day, user))
        accepted.append({'date': day, 'user_id': user, 'kwh': round(float(kwh), 3)})

    result = pd.DataFrame(accepted, columns=METER_COLUMNS)
    if len(result):
        result = result.sort_values(['date', 'user_id']).reset_index(drop=True)
    logger.info(f"Meter ingest {path}: {len(result)} accepted, {len(rejects)} rejected")
    return result, rejects


def write_meter_csv(meter: pd.DataFrame, path: str) -> None:
    out = meter.copy()
    out['date'] = [d.isoformat() for d in out['date']]
    out.to_csv(path, index=False, float_format='%.3f', lineterminator='\n')
