import os
import sys

import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from auction import BUY, SELL, ClearingResult, Fill  # noqa: E402
from ledger import Ledger  # noqa: E402
from lifecycle import MonthConfig  # noqa: E402
from market_analysis import DayLabel  # noqa: E402


def make_result(day, token, fills, price=10):
    """ClearingResult from (account, side, qty) triples; order ids follow list position"""
    fill_objs = [Fill(f"{day:02d}-{i:04d}", account, side, qty) for i, (account, side, qty) in enumerate(fills)]
    volume = sum(f.qty for f in fill_objs if f.side == BUY)
    return ClearingResult(day, token, price if volume else None, volume, fill_objs, [])


def funded_ledger(holdings):
    """Ledger with students opened and funded: {account: {asset: amount}}"""
    ledger = Ledger('admin')
    for account, assets in holdings.items():
        ledger.open_account(account)
        for asset, amount in assets.items():
            if amount:
                ledger.mint(asset, account, amount, 0, 'deposit')
    return ledger


@pytest.fixture
def small_config():
    return MonthConfig(
        days_in_month=5,
        num_students=4,
        active_students=3,
        prev_year_usage_kwh={'UPX': 400, 'SPX': 40},
        base_price={'UPX': 10, 'SPX': 12},
        initial_currency=5000,
    ).validate()


@pytest.fixture
def nineteen_day_labels():
    """Nineteen labeled days with cell counts 4/2/8/5"""
    cells = [(True, False)] * 4 + [(False, False)] * 2 + [(True, True)] * 8 + [(False, True)] * 5
    return [DayLabel(day, tx, cav) for day, (tx, cav) in enumerate(cells, start=2)]


@pytest.fixture
def upx_month_results():
    """Six trading days: four between two users, one among three, one among six"""
    pairs = [('s01', 's02'), ('s03', 's04'), ('s01', 's05'), ('s06', 's02')]
    results = [make_result(d, 'UPX', [(b, BUY, 3), (s, SELL, 3)]) for d, (b, s) in enumerate(pairs, start=1)]
    results.append(make_result(5, 'UPX', [('s01', BUY, 2), ('s02', BUY, 2), ('s03', SELL, 4)]))
    results.append(make_result(6, 'UPX', [
        ('s01', BUY, 1), ('s02', BUY, 1), ('s03', BUY, 1), ('s04', SELL, 1), ('s05', SELL, 1), ('s06', SELL, 1),
    ]))
    results.append(make_result(7, 'UPX', []))
    return results


@pytest.fixture
def spx_month_results():
    """System sells on six days: three days to two buyers, three days to one buyer"""
    results = []
    for day, buyers in enumerate([('s01', 's02'), ('s03', 's04'), ('s01', 's05')], start=1):
        fills = [('admin', SELL, 2 * len(buyers))] + [(b, BUY, 2) for b in buyers]
        results.append(make_result(day, 'SPX', fills))
    for day, buyer in enumerate(['s02', 's06', 's03'], start=4):
        results.append(make_result(day, 'SPX', [(buyer, BUY, 1), ('admin', SELL, 1)]))
    return results

