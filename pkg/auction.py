# -*- coding: utf-8 -*-
"""
Daily single-price auction module
Builds demand/supply step curves for one token and one day, clears the book
at one price and settles the matched quantity through the ledger
"""

import json
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, NamedTuple, Optional, Tuple

from errors import DomainValidationError, EdisonError, InputError
from ledger import CURRENCY, Ledger, TokenKind, UnknownAccount, token_value

logger = logging.getLogger(__name__)

BUY = 'buy'
SELL = 'sell'


class MixedTokenBook(InputError):
    pass


class InvalidOrder(InputError):
    pass


class InsufficientTokens(DomainValidationError):
    pass


class InsufficientCurrency(DomainValidationError):
    pass


def make_order_id(day: int, arrival: int) -> str:
    return f"{day:02d}-{arrival:04d}"


@dataclass(frozen=True)
class Order:
    order_id: str
    account: str
    token: str
    side: str
    price: int
    qty: int
    day: int
    arrival: int

    @property
    def placed_at(self) -> Tuple[int, int]:
        return self.day, self.arrival

    def to_dict(self) -> Dict:
        return {
            'order_id': self.order_id,
            'day': self.day,
            'account': self.account,
            'token': self.token,
            'side': self.side,
            'price': self.price,
            'qty': self.qty,
            'arrival': self.arrival,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'Order':
        try:
            day = int(data['day'])
            arrival = int(data['arrival'])
            order = cls(
                order_id=str(data.get('order_id') or make_order_id(day, arrival)),
                account=str(data['account']),
                token=token_value(str(data['token'])),
                side=str(data['side']),
                price=_strict_int(data['price']),
                qty=_strict_int(data['qty']),
                day=day,
                arrival=arrival,
            )
        except (KeyError, TypeError, ValueError) as e:
            raise InvalidOrder(f"Malformed order {data!r}: {e}")
        check_order(order)
        return order


def _strict_int(value) -> int:
    if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
        raise ValueError(f"not an integer: {value!r}")
    return int(value)


def check_order(order: Order) -> None:
    if order.token == CURRENCY:
        raise InvalidOrder(f"Order {order.order_id}: currency is not tradable")
    if order.side not in (BUY, SELL):
        raise InvalidOrder(f"Order {order.order_id}: side must be buy or sell, got {order.side!r}")
    if order.price <= 0:
        raise InvalidOrder(f"Order {order.order_id}: price must be positive")
    if order.qty <= 0:
        raise InvalidOrder(f"Order {order.order_id}: quantity must be positive")


@dataclass
class OrderBook:
    day: int
    token: str
    bids: List[Order] = field(default_factory=list)
    asks: List[Order] = field(default_factory=list)

    @property
    def orders(self) -> List[Order]:
        return self.bids + self.asks

    def check(self) -> None:
        for order in self.orders:
            if order.token != self.token or order.day != self.day:
                raise MixedTokenBook(
                    f"Order {order.order_id} ({order.token}, day {order.day}) "
                    f"in book for {self.token} day {self.day}"
                )
        if any(o.side != BUY for o in self.bids) or any(o.side != SELL for o in self.asks):
            raise MixedTokenBook(f"Book {self.token} day {self.day} mixes sides")

    def to_dict(self) -> Dict:
        return {
            'day': self.day,
            'token': self.token,
            'bids': [o.to_dict() for o in self.bids],
            'asks': [o.to_dict() for o in self.asks],
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'OrderBook':
        return cls(
            day=int(data['day']),
            token=token_value(data['token']),
            bids=[Order.from_dict(o) for o in data.get('bids', [])],
            asks=[Order.from_dict(o) for o in data.get('asks', [])],
        )


class Fill(NamedTuple):
    order_id: str
    account: str
    side: str
    qty: int


class CurvePoint(NamedTuple):
    price: int
    cumulative_qty: int


@dataclass
class ClearingResult:
    day: int
    token: str
    price: Optional[int]
    volume: int
    fills: List[Fill] = field(default_factory=list)
    rejected: List[str] = field(default_factory=list)

    def filled_qty(self, side: str) -> int:
        return sum(f.qty for f in self.fills if f.side == side)

    def participants(self) -> List[str]:
        return sorted({f.account for f in self.fills if f.qty > 0})

    def to_dict(self) -> Dict:
        return {
            'day': self.day,
            'token': self.token,
            'price': self.price,
            'volume': self.volume,
            'fills': [f._asdict() for f in self.fills],
            'rejected': list(self.rejected),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'ClearingResult':
        return cls(
            day=int(data['day']),
            token=token_value(data['token']),
            price=None if data['price'] is None else int(data['price']),
            volume=int(data['volume']),
            fills=[Fill(f['order_id'], f['account'], f['side'], int(f['qty'])) for f in data.get('fills', [])],
            rejected=list(data.get('rejected', [])),
        )


def build_books(orders: Iterable[Order], day: int) -> Dict[str, OrderBook]:
    """Split one day's orders into per-token books, keeping arrival order"""
    books = {t.value: OrderBook(day=day, token=t.value) for t in TokenKind}
    seen_ids = set()
    seen_slots = set()
    for order in sorted(orders, key=lambda o: o.arrival):
        if order.order_id in seen_ids:
            raise InvalidOrder(f"Duplicate order id {order.order_id}")
        if (order.account, order.placed_at) in seen_slots:
            raise InvalidOrder(f"Duplicate (account, placed_at) for order {order.order_id}")
        seen_ids.add(order.order_id)
        seen_slots.add((order.account, order.placed_at))
        if order.day != day:
            raise MixedTokenBook(f"Order {order.order_id} is for day {order.day}, book is day {day}")
        book = books[order.token]
        (book.bids if order.side == BUY else book.asks).append(order)
    return books


# ----------------------------------------------------------------------
# Curves
# ----------------------------------------------------------------------

def demand_at(book: OrderBook, p: int) -> int:
    return sum(o.qty for o in book.bids if o.price >= p)


def supply_at(book: OrderBook, p: int) -> int:
    return sum(o.qty for o in book.asks if o.price <= p)


def demand_curve(book: OrderBook) -> List[CurvePoint]:
    prices = sorted({o.price for o in book.bids}, reverse=True)
    return [CurvePoint(p, demand_at(book, p)) for p in prices]


def supply_curve(book: OrderBook) -> List[CurvePoint]:
    prices = sorted({o.price for o in book.asks})
    return [CurvePoint(p, supply_at(book, p)) for p in prices]


# ----------------------------------------------------------------------
# Clearing
# ----------------------------------------------------------------------

def _clearing_price(book: OrderBook) -> Optional[int]:
    """
    Pick the clearing price, or None when nothing crosses.

    Crossing prices are the integers p with demand strictly above p not
    exceeding supply at p, and supply strictly below p not exceeding demand at
    p; they maximize min(demand, supply) and let strictly-better orders fill
    fully. Among them the lowest run minimizing |demand - supply| is kept and
    its midpoint rounded half-up is the price.
    """
    prices = sorted({o.price for o in book.orders})
    if not book.bids or not book.asks:
        return None
    best_volume = max(min(demand_at(book, p), supply_at(book, p)) for p in prices)
    if best_volume == 0:
        return None

    def strict_demand(p):
        return demand_at(book, p + 1)

    def strict_supply(p):
        return supply_at(book, p - 1)

    low = min(p for p in prices if strict_demand(p) <= supply_at(book, p))
    high = max(p for p in prices if strict_supply(p) <= demand_at(book, p))

    # Imbalance is constant between these segment starts
    starts = {low}
    for c in prices:
        for q in (c, c + 1):
            if low < q <= high:
                starts.add(q)
    starts = sorted(starts)
    segments = []
    for i, start in enumerate(starts):
        end = starts[i + 1] - 1 if i + 1 < len(starts) else high
        segments.append((start, end, abs(demand_at(book, start) - supply_at(book, start))))

    least = min(s[2] for s in segments)
    run_lo = run_hi = None
    for start, end, imbalance in segments:
        if imbalance == least:
            if run_lo is None:
                run_lo = start
            run_hi = end
        elif run_lo is not None:
            break
    return (run_lo + run_hi + 1) // 2


def _allocate(orders: List[Order], price: int, volume: int, better) -> Dict[str, int]:
    """Strictly-better orders fill fully, at-price orders share the rest by arrival"""
    fills = {}
    remaining = volume
    for order in orders:
        if better(order.price):
            fills[order.order_id] = order.qty
            remaining -= order.qty
    if remaining < 0:
        raise EdisonError(f"Strict orders exceed volume {volume} at price {price}")
    for order in sorted((o for o in orders if o.price == price), key=lambda o: o.arrival):
        take = min(order.qty, remaining)
        fills[order.order_id] = take
        remaining -= take
    if remaining != 0:
        raise EdisonError(f"Could not allocate volume {volume} at price {price}")
    return fills


def clear(book: OrderBook) -> ClearingResult:
    """Clear one day's book for one token at a single price"""
    book.check()
    price = _clearing_price(book)
    if price is None:
        rejected = [o.order_id for o in sorted(book.orders, key=lambda o: o.arrival)]
        logger.info(f"Day {book.day} {book.token}: no crossing, {len(rejected)} orders rejected")
        return ClearingResult(book.day, book.token, None, 0, [], rejected)

    volume = min(demand_at(book, price), supply_at(book, price))
    buy_fills = _allocate(book.bids, price, volume, lambda p: p > price)
    sell_fills = _allocate(book.asks, price, volume, lambda p: p < price)
    filled = {**buy_fills, **sell_fills}

    fills = []
    rejected = []
    for order in sorted(book.orders, key=lambda o: o.arrival):
        qty = filled.get(order.order_id, 0)
        if qty > 0:
            fills.append(Fill(order.order_id, order.account, order.side, qty))
        else:
            rejected.append(order.order_id)
    logger.info(f"Cleared day {book.day} {book.token}: volume {volume} at {price}")
    return ClearingResult(book.day, book.token, price, volume, fills, rejected)


# ----------------------------------------------------------------------
# Validation and settlement
# ----------------------------------------------------------------------

def validate_order(ledger: Ledger, order: Order) -> Order:
    """
    Accept an order against the ledger and escrow what it commits.
    Sells need tokens net of other open asks; buys need currency for
    price x qty net of other open bids. The issuer may always sell.
    """
    check_order(order)
    if not ledger.has_account(order.account):
        raise UnknownAccount(f"Order {order.order_id}: unknown account {order.account}")
    if order.order_id in ledger.escrow:
        raise InvalidOrder(f"Order {order.order_id} is already open")

    if order.side == SELL:
        if order.account == ledger.system_account:
            ledger.hold(order.order_id, order.account, order.token, 0)
            return order
        available = ledger.available(order.account, order.token)
        if available < order.qty:
            raise InsufficientTokens(
                f"Order {order.order_id}: {order.account} has {available} {order.token} available, asks {order.qty}"
            )
        ledger.hold(order.order_id, order.account, order.token, order.qty)
    else:
        cost = order.price * order.qty
        available = ledger.available(order.account, CURRENCY)
        if available < cost:
            raise InsufficientCurrency(
                f"Order {order.order_id}: {order.account} has {available} currency available, bid needs {cost}"
            )
        ledger.hold(order.order_id, order.account, CURRENCY, cost)
    return order


def settle(ledger: Ledger, result: ClearingResult, cause: str = 'auction') -> Ledger:
    """
    Move tokens seller -> buyer and currency buyer -> seller at the clearing
    price, pairing buy and sell fills in arrival order, then release escrow.
    The issuer mints whatever it sells beyond its own holdings.
    """
    order_ids = [f.order_id for f in result.fills] + list(result.rejected)
    for order_id in order_ids:
        ledger.release(order_id)
    if result.volume == 0:
        return ledger

    buys = [[f.account, f.qty] for f in result.fills if f.side == BUY]
    sells = [[f.account, f.qty] for f in result.fills if f.side == SELL]
    i = j = 0
    while i < len(buys) and j < len(sells):
        buyer, seller = buys[i][0], sells[j][0]
        qty = min(buys[i][1], sells[j][1])
        if seller == ledger.system_account:
            held = ledger.balance_of(seller, result.token)
            if held < qty:
                ledger.mint(result.token, seller, qty - held, result.day, 'shortage_issue')
        ledger.transfer(result.token, seller, buyer, qty, result.day, cause)
        ledger.transfer(CURRENCY, buyer, seller, qty * result.price, result.day, cause)
        buys[i][1] -= qty
        sells[j][1] -= qty
        if buys[i][1] == 0:
            i += 1
        if sells[j][1] == 0:
            j += 1
    return ledger


# ----------------------------------------------------------------------
# Order log and result files
# ----------------------------------------------------------------------

def read_orders_jsonl(path: str) -> List[Order]:
    """Order log: one order per line (day, account, token, side, price, qty, arrival)"""
    orders = []
    try:
        with open(path, 'r', encoding='utf-8') as f:
            for line_no, line in enumerate(f, 1):
                if not line.strip():
                    continue
                try:
                    data = json.loads(line)
                    orders.append(Order.from_dict(data))
                except json.JSONDecodeError as e:
                    raise InvalidOrder(f"{path}:{line_no}: invalid JSON: {e}")
                except InputError as e:
                    raise InvalidOrder(f"{path}:{line_no}: {e}")
    except FileNotFoundError:
        raise InputError(f"Order log not found: {path}")
    return orders


def write_orders_jsonl(orders: Iterable[Order], path: str) -> None:
    with open(path, 'w', encoding='utf-8') as f:
        for order in orders:
            f.write(json.dumps(order.to_dict(), sort_keys=True) + '\n')


def result_document(results: Dict[str, ClearingResult]) -> Dict:
    """Per-day clearing export: price, volume, fills, rejections per token"""
    return {token: results[token].to_dict() for token in sorted(results)}
