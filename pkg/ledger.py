# -*- coding: utf-8 -*-
"""
Token ledger module
Keeps UPX/SPX and currency balances for every account and an append-only
transaction log; every balance change is a logged transaction, so replaying
the log from genesis rebuilds the state exactly
"""

import hashlib
import json
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, List, Optional, Tuple

from config import SYSTEM_ACCOUNT
from errors import DomainValidationError, EdisonError, InputError

logger = logging.getLogger(__name__)


class TokenKind(str, Enum):
    UPX = 'UPX'
    SPX = 'SPX'


class Role(str, Enum):
    STUDENT = 'student'
    SYSTEM = 'system'


CURRENCY = 'currency'
ASSETS = (TokenKind.UPX.value, TokenKind.SPX.value, CURRENCY)
TX_KINDS = ('mint', 'burn', 'transfer', 'currency_transfer')

# Causes with a special meaning for replay
CAUSE_OPEN = 'open_account'
CAUSE_RESIDUE = 'settlement_residue'


class LedgerError(EdisonError):
    pass


class UnknownAccount(DomainValidationError):
    pass


class InsufficientBalance(DomainValidationError):
    pass


class NonMonotoneSeq(InputError):
    pass


class InvalidTx(InputError):
    pass


def token_value(token) -> str:
    """Normalize a TokenKind or asset string to its plain value"""
    if isinstance(token, TokenKind):
        return token.value
    if token in ASSETS:
        return token
    raise InvalidTx(f"Unknown token or asset: {token!r}")


@dataclass(frozen=True)
class LedgerTx:
    seq: int
    kind: str
    token: str
    from_account: str
    to_account: str
    amount: int
    day: int = 0
    cause: str = ''

    def to_dict(self) -> Dict:
        return {
            'seq': self.seq,
            'kind': self.kind,
            'token': self.token,
            'from': self.from_account,
            'to': self.to_account,
            'amount': self.amount,
            'day': self.day,
            'cause': self.cause,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'LedgerTx':
        try:
            return cls(
                seq=int(data['seq']),
                kind=str(data['kind']),
                token=str(data['token']),
                from_account=str(data['from']),
                to_account=str(data['to']),
                amount=int(data['amount']),
                day=int(data.get('day', 0)),
                cause=str(data.get('cause', '')),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise InvalidTx(f"Malformed ledger transaction {data!r}: {e}")


class Ledger:
    """
    Single-writer ledger. Mutations go through apply_tx only; a failed
    transaction leaves the state untouched.

    Escrow holds (order_id -> account, asset, amount) are day-scoped order
    bookkeeping, not balances, and are not part of the replayable state.
    """

    def __init__(self, system_account: str = SYSTEM_ACCOUNT):
        self.system_account = system_account
        self.balances: Dict[str, Dict[str, int]] = {system_account: _empty_balances()}
        self.roles: Dict[str, Role] = {system_account: Role.SYSTEM}
        self.log: List[LedgerTx] = []
        self.minted: Dict[str, int] = {asset: 0 for asset in ASSETS}
        self.burned: Dict[str, int] = {asset: 0 for asset in ASSETS}
        # Signed settlement residue counter held by the system
        self.reserve = 0
        self.escrow: Dict[str, Tuple[str, str, int]] = {}

    # ------------------------------------------------------------------
    # Reads
    # ------------------------------------------------------------------

    @property
    def last_seq(self) -> int:
        return self.log[-1].seq if self.log else 0

    def has_account(self, account: str) -> bool:
        return account in self.balances

    def students(self) -> List[str]:
        return sorted(a for a, role in self.roles.items() if role == Role.STUDENT)

    def balance_of(self, account: str, token) -> int:
        if account not in self.balances:
            raise UnknownAccount(f"Unknown account: {account}")
        return self.balances[account][token_value(token)]

    def escrowed(self, account: str, token) -> int:
        asset = token_value(token)
        return sum(amount for acc, a, amount in self.escrow.values() if acc == account and a == asset)

    def available(self, account: str, token) -> int:
        """Balance not yet committed to open orders"""
        return self.balance_of(account, token) - self.escrowed(account, token)

    def aggregate_remaining(self, token) -> int:
        asset = token_value(token)
        return sum(self.balances[a][asset] for a in self.students())

    def supply(self, token) -> int:
        asset = token_value(token)
        return sum(b[asset] for b in self.balances.values())

    def state(self) -> Dict:
        """Canonical replayable state"""
        return {
            'accounts': {a: dict(self.balances[a]) for a in sorted(self.balances)},
            'roles': {a: self.roles[a].value for a in sorted(self.roles)},
            'minted': dict(self.minted),
            'burned': dict(self.burned),
            'reserve': self.reserve,
            'last_seq': self.last_seq,
        }

    def digest(self) -> str:
        data_str = json.dumps(self.state(), sort_keys=True)
        return hashlib.sha256(data_str.encode()).hexdigest()

    def check_invariants(self) -> None:
        """Supply identity and non-negativity; raises LedgerError on violation"""
        for asset in ASSETS:
            total = sum(b[asset] for b in self.balances.values())
            if total != self.minted[asset] - self.burned[asset]:
                raise LedgerError(
                    f"Supply identity broken for {asset}: holdings {total}, "
                    f"minted {self.minted[asset]}, burned {self.burned[asset]}"
                )
        for account, balances in self.balances.items():
            for asset, value in balances.items():
                if value < 0:
                    raise LedgerError(f"Negative {asset} balance on {account}: {value}")

    # ------------------------------------------------------------------
    # Writes
    # ------------------------------------------------------------------

    def apply_tx(self, tx: LedgerTx) -> 'Ledger':
        """Validate then apply one transaction; atomic"""
        if tx.seq != self.last_seq + 1:
            raise NonMonotoneSeq(f"Expected seq {self.last_seq + 1}, got {tx.seq}")
        if tx.kind not in TX_KINDS:
            raise InvalidTx(f"Unknown transaction kind: {tx.kind!r}")
        asset = token_value(tx.token)
        if tx.amount < 0:
            raise InvalidTx(f"Negative amount in tx {tx.seq}: {tx.amount}")
        if tx.kind == 'transfer' and asset == CURRENCY:
            raise InvalidTx(f"Tx {tx.seq}: currency moves use currency_transfer")
        if tx.kind == 'currency_transfer' and asset != CURRENCY:
            raise InvalidTx(f"Tx {tx.seq}: currency_transfer must move currency")

        opening = tx.kind == 'mint' and tx.cause == CAUSE_OPEN
        if tx.kind == 'mint':
            if tx.from_account != self.system_account:
                raise InvalidTx(f"Tx {tx.seq}: mint must originate from {self.system_account}")
            if opening:
                if tx.amount != 0:
                    raise InvalidTx(f"Tx {tx.seq}: account opening must carry amount 0")
            elif tx.to_account not in self.balances:
                raise UnknownAccount(f"Unknown account: {tx.to_account}")
        else:
            for account in (tx.from_account, tx.to_account):
                if account not in self.balances:
                    raise UnknownAccount(f"Unknown account: {account}")
            if tx.kind == 'burn' and tx.to_account != self.system_account:
                raise InvalidTx(f"Tx {tx.seq}: burn must terminate at {self.system_account}")
            held = self.balances[tx.from_account][asset]
            if held < tx.amount:
                raise InsufficientBalance(
                    f"{tx.from_account} holds {held} {asset}, needs {tx.amount} (tx {tx.seq}, {tx.cause})"
                )

        # State changes start here; nothing below can fail
        if opening and tx.to_account not in self.balances:
            self.balances[tx.to_account] = _empty_balances()
            self.roles[tx.to_account] = Role.STUDENT
        if tx.kind == 'mint':
            self.balances[tx.to_account][asset] += tx.amount
            self.minted[asset] += tx.amount
            if tx.cause == CAUSE_RESIDUE:
                self.reserve -= tx.amount
        elif tx.kind == 'burn':
            self.balances[tx.from_account][asset] -= tx.amount
            self.burned[asset] += tx.amount
            if tx.cause == CAUSE_RESIDUE:
                self.reserve += tx.amount
        else:
            self.balances[tx.from_account][asset] -= tx.amount
            self.balances[tx.to_account][asset] += tx.amount
        self.log.append(tx)
        return self

    def record(self, kind: str, token, from_account: str, to_account: str,
               amount: int, day: int = 0, cause: str = '') -> LedgerTx:
        """Build the next transaction in sequence and apply it"""
        tx = LedgerTx(
            seq=self.last_seq + 1,
            kind=kind,
            token=token_value(token),
            from_account=from_account,
            to_account=to_account,
            amount=int(amount),
            day=day,
            cause=cause,
        )
        self.apply_tx(tx)
        return tx

    def open_account(self, account: str, day: int = 0) -> Optional[LedgerTx]:
        if account in self.balances:
            return None
        return self.record('mint', CURRENCY, self.system_account, account, 0, day, CAUSE_OPEN)

    def mint(self, token, to_account: str, amount: int, day: int = 0, cause: str = 'mint') -> LedgerTx:
        return self.record('mint', token, self.system_account, to_account, amount, day, cause)

    def burn(self, token, from_account: str, amount: int, day: int = 0, cause: str = 'burn') -> LedgerTx:
        return self.record('burn', token, from_account, self.system_account, amount, day, cause)

    def transfer(self, token, from_account: str, to_account: str, amount: int,
                 day: int = 0, cause: str = 'transfer') -> LedgerTx:
        if token_value(token) == CURRENCY:
            return self.record('currency_transfer', CURRENCY, from_account, to_account, amount, day, cause)
        return self.record('transfer', token, from_account, to_account, amount, day, cause)

    # ------------------------------------------------------------------
    # Escrow for open orders
    # ------------------------------------------------------------------

    def hold(self, order_id: str, account: str, token, amount: int) -> None:
        self.escrow[order_id] = (account, token_value(token), int(amount))

    def release(self, order_id: str) -> None:
        self.escrow.pop(order_id, None)


def _empty_balances() -> Dict[str, int]:
    return {asset: 0 for asset in ASSETS}


def apply_tx(ledger: Ledger, tx: LedgerTx) -> Ledger:
    return ledger.apply_tx(tx)


def balance_of(ledger: Ledger, account: str, token) -> int:
    return ledger.balance_of(account, token)


def aggregate_remaining(ledger: Ledger, token) -> int:
    """Sum of a token over student accounts, system excluded"""
    return ledger.aggregate_remaining(token)


def replay(txs: Iterable[LedgerTx], system_account: str = SYSTEM_ACCOUNT) -> Ledger:
    """Rebuild a ledger from genesis"""
    ledger = Ledger(system_account)
    for tx in txs:
        ledger.apply_tx(tx)
    return ledger


def export_log(ledger: Ledger, path: str) -> None:
    """Write the transaction log as JSON Lines"""
    with open(path, 'w', encoding='utf-8') as f:
        for tx in ledger.log:
            f.write(json.dumps(tx.to_dict(), sort_keys=True) + '\n')
    logger.info(f"Ledger log exported: {len(ledger.log)} txs -> {path}")


def read_log(path: str) -> List[LedgerTx]:
    txs = []
    try:
        with open(path, 'r', encoding='utf-8') as f:
            for line_no, line in enumerate(f, 1):
                if not line.strip():
                    continue
                try:
                    data = json.loads(line)
                except json.JSONDecodeError as e:
                    raise InvalidTx(f"{path}:{line_no}: invalid JSON: {e}")
                txs.append(LedgerTx.from_dict(data))
    except FileNotFoundError:
        raise InputError(f"Ledger log not found: {path}")
    return txs


def load_log(path: str, system_account: str = SYSTEM_ACCOUNT) -> Ledger:
    """Import a JSON Lines log by replaying it"""
    return replay(read_log(path), system_account)
