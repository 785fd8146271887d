import random

import pytest

import auction
from auction import BUY, SELL, Order, OrderBook
from conftest import funded_ledger
from ledger import CURRENCY, replay


def _book(bids, asks, token='UPX', day=1):
    orders = []
    for side, specs in ((BUY, bids), (SELL, asks)):
        for price, qty in specs:
            arrival = len(orders)
            orders.append(Order(auction.make_order_id(day, arrival), f"a{arrival}", token, side, price, qty, day, arrival))
    return OrderBook(day, token, [o for o in orders if o.side == BUY], [o for o in orders if o.side == SELL])


def _fills_by_id(result):
    return {f.order_id: f.qty for f in result.fills}


def test_demand_and_supply_at():
    book = _book([(10, 5), (8, 3)], [])
    assert auction.demand_at(book, 9) == 5
    assert auction.demand_at(book, 8) == 8
    empty = _book([], [])
    assert all(auction.demand_at(empty, p) == 0 and auction.supply_at(empty, p) == 0 for p in range(1, 20))


def test_worked_example_prefers_least_imbalance():
    book = _book([(12, 10), (10, 5), (9, 8)], [(8, 6), (9, 4), (11, 10)])
    result = auction.clear(book)
    assert result.volume == 10
    assert result.price == 10
    fills = _fills_by_id(result)
    bid_12, ask_8, ask_9 = book.bids[0], book.asks[0], book.asks[1]
    assert fills == {bid_12.order_id: 10, ask_8.order_id: 6, ask_9.order_id: 4}
    assert sorted(result.rejected) == sorted(o.order_id for o in book.orders if o.order_id not in fills)


def test_flat_interval_rounds_midpoint_up():
    # Every price from 6 to 9 trades 5 with no imbalance
    book = _book([(9, 5)], [(6, 5)])
    result = auction.clear(book)
    assert (result.price, result.volume) == (8, 5)
    assert _fills_by_id(result) == {book.bids[0].order_id: 5, book.asks[0].order_id: 5}


def test_least_imbalance_narrows_the_interval():
    # Prices 2 and 3 both trade 4; only 2 leaves no surplus on either side
    book = _book([(5, 4)], [(1, 1), (6, 2), (3, 2), (2, 3)])
    result = auction.clear(book)
    assert (result.price, result.volume) == (2, 4)
    assert auction.demand_at(book, 2) == auction.supply_at(book, 2) == 4
    assert auction.supply_at(book, 3) == 6


def test_disjoint_ranges_do_not_trade():
    result = auction.clear(_book([(7, 5)], [(9, 5)]))
    assert result.price is None
    assert result.volume == 0
    assert len(result.rejected) == 2


def test_at_price_asks_rationed_by_arrival():
    book = _book([(10, 10)], [(9, 4), (10, 8)])
    result = auction.clear(book)
    assert (result.price, result.volume) == (10, 10)
    fills = _fills_by_id(result)
    assert fills[book.asks[0].order_id] == 4
    assert fills[book.asks[1].order_id] == 6


def test_mixed_token_book_rejected():
    book = _book([(10, 1)], [(9, 1)])
    book.asks[0] = Order('x', 'b', 'SPX', SELL, 9, 1, 1, 9)
    with pytest.raises(auction.MixedTokenBook):
        auction.clear(book)


def _random_book(rng):
    n = rng.randint(0, 100)
    bids, asks = [], []
    for _ in range(n):
        (bids if rng.random() < 0.5 else asks).append((rng.randint(1, 50), rng.randint(1, 20)))
    return _book(bids, asks)


def test_volume_matches_brute_force_on_1000_books():
    rng = random.Random(2022)
    for _ in range(1000):
        book = _random_book(rng)
        prices = {o.price for o in book.orders}
        best = max((min(auction.demand_at(book, p), auction.supply_at(book, p)) for p in prices), default=0)
        result = auction.clear(book)
        assert result.volume == best

        fills = _fills_by_id(result)
        assert result.filled_qty(BUY) == result.filled_qty(SELL) == result.volume
        assert sorted(list(fills) + result.rejected) == sorted(o.order_id for o in book.orders)
        if result.volume == 0:
            assert result.price is None
            continue
        p = result.price
        for order in book.bids:
            filled = fills.get(order.order_id, 0)
            assert filled <= order.qty
            if filled:
                assert order.price >= p
            if order.price > p:
                assert filled == order.qty
        for order in book.asks:
            filled = fills.get(order.order_id, 0)
            if filled:
                assert order.price <= p
            if order.price < p:
                assert filled == order.qty


def test_clear_is_deterministic_and_curves_monotone():
    rng = random.Random(5)
    for _ in range(50):
        book = _random_book(rng)
        assert auction.clear(book) == auction.clear(book)
        demand = [pt.cumulative_qty for pt in auction.demand_curve(book)]
        supply = [pt.cumulative_qty for pt in auction.supply_curve(book)]
        assert demand == sorted(demand)
        assert supply == sorted(supply)


def _order(account, side, price, qty, arrival, token='UPX', day=1):
    return Order(auction.make_order_id(day, arrival), account, token, side, price, qty, day, arrival)


def test_validate_sell_against_balance():
    ledger = funded_ledger({'s01': {'UPX': 10}})
    auction.validate_order(ledger, _order('s01', SELL, 10, 5, 0))
    with pytest.raises(auction.InsufficientTokens):
        auction.validate_order(ledger, _order('s01', SELL, 10, 11, 1))


def test_second_ask_sees_escrow():
    ledger = funded_ledger({'s01': {'UPX': 10}})
    auction.validate_order(ledger, _order('s01', SELL, 10, 6, 0))
    with pytest.raises(auction.InsufficientTokens, match='01-0001'):
        auction.validate_order(ledger, _order('s01', SELL, 10, 6, 1))


def test_bid_needs_currency():
    ledger = funded_ledger({'s01': {CURRENCY: 40}})
    with pytest.raises(auction.InsufficientCurrency):
        auction.validate_order(ledger, _order('s01', BUY, 10, 5, 0))


def test_settle_single_match():
    ledger = funded_ledger({'buyer': {CURRENCY: 100}, 'seller': {'UPX': 5}})
    orders = [_order('buyer', BUY, 10, 5, 0), _order('seller', SELL, 10, 5, 1)]
    for order in orders:
        auction.validate_order(ledger, order)
    result = auction.clear(auction.build_books(orders, 1)['UPX'])
    assert (result.price, result.volume) == (10, 5)
    auction.settle(ledger, result)
    assert ledger.balance_of('buyer', CURRENCY) == 50
    assert ledger.balance_of('buyer', 'UPX') == 5
    assert ledger.balance_of('seller', CURRENCY) == 50
    assert ledger.balance_of('seller', 'UPX') == 0
    assert ledger.escrow == {}


def test_settle_zero_volume_leaves_ledger():
    ledger = funded_ledger({'buyer': {CURRENCY: 100}, 'seller': {'UPX': 5}})
    orders = [_order('buyer', BUY, 7, 5, 0), _order('seller', SELL, 9, 5, 1)]
    for order in orders:
        auction.validate_order(ledger, order)
    before = ledger.state()
    auction.settle(ledger, auction.clear(auction.build_books(orders, 1)['UPX']))
    assert ledger.state() == before
    assert ledger.escrow == {}


def test_system_ask_mints_shortfall():
    ledger = funded_ledger({'s01': {CURRENCY: 300}})
    orders = [_order('admin', SELL, 15, 20, 0), _order('s01', BUY, 15, 20, 1)]
    for order in orders:
        auction.validate_order(ledger, order)
    auction.settle(ledger, auction.clear(auction.build_books(orders, 1)['UPX']))
    assert ledger.balance_of('s01', 'UPX') == 20
    assert ledger.log[-3].cause == 'shortage_issue'
    ledger.check_invariants()


def test_random_day_settlement_matches_replay():
    rng = random.Random(11)
    accounts = [f"s{i:02d}" for i in range(10)]
    ledger = funded_ledger({a: {'UPX': 30, CURRENCY: 2000} for a in accounts})
    accepted = []
    for arrival in range(40):
        order = _order(rng.choice(accounts), rng.choice([BUY, SELL]), rng.randint(5, 15), rng.randint(1, 10), arrival)
        try:
            accepted.append(auction.validate_order(ledger, order))
        except (auction.InsufficientTokens, auction.InsufficientCurrency):
            pass
    result = auction.clear(auction.build_books(accepted, 1)['UPX'])
    auction.settle(ledger, result)
    ledger.check_invariants()
    assert replay(ledger.log).state() == ledger.state()


def test_order_log_reports_line(tmp_path):
    path = tmp_path / 'orders.jsonl'
    good = _order('s01', BUY, 10, 1, 0)
    auction.write_orders_jsonl([good], str(path))
    with open(path, 'a', encoding='utf-8') as f:
        f.write('{"day": 1, "account": "s02", "token": "UPX", "side": "buy", "price": 0, "qty": 1, "arrival": 1}\n')
    with pytest.raises(auction.InvalidOrder, match=':2:'):
        auction.read_orders_jsonl(str(path))
