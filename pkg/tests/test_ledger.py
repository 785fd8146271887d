import random

import pytest

from conftest import funded_ledger
from ledger import (
    CURRENCY,
    InsufficientBalance,
    InvalidTx,
    Ledger,
    LedgerError,
    LedgerTx,
    NonMonotoneSeq,
    UnknownAccount,
    aggregate_remaining,
    balance_of,
    export_log,
    load_log,
    read_log,
    replay,
)


def test_mint_then_balance():
    ledger = funded_ledger({'A': {}})
    ledger.mint('UPX', 'A', 100)
    assert balance_of(ledger, 'A', 'UPX') == 100


def test_fresh_account_is_zero():
    ledger = funded_ledger({'A': {}})
    assert balance_of(ledger, 'A', 'SPX') == 0
    assert balance_of(ledger, 'A', CURRENCY) == 0


def test_unknown_account():
    ledger = Ledger()
    with pytest.raises(UnknownAccount):
        ledger.balance_of('ghost', 'UPX')
    with pytest.raises(UnknownAccount):
        ledger.mint('UPX', 'ghost', 5)


def test_overdraft_is_atomic_noop():
    ledger = funded_ledger({'A': {'UPX': 10}, 'B': {}})
    before = ledger.state()
    with pytest.raises(InsufficientBalance):
        ledger.transfer('UPX', 'A', 'B', 11)
    assert ledger.state() == before


def test_seq_must_follow_log():
    ledger = Ledger()
    tx = LedgerTx(seq=5, kind='mint', token='currency', from_account='admin', to_account='A',
                  amount=0, cause='open_account')
    with pytest.raises(NonMonotoneSeq):
        ledger.apply_tx(tx)
    assert ledger.log == []


def test_currency_moves_need_currency_transfer():
    ledger = funded_ledger({'A': {CURRENCY: 100}, 'B': {}})
    with pytest.raises(InvalidTx):
        ledger.record('transfer', CURRENCY, 'A', 'B', 10)
    ledger.transfer(CURRENCY, 'A', 'B', 10)
    assert ledger.log[-1].kind == 'currency_transfer'
    assert ledger.balance_of('B', CURRENCY) == 10


def test_aggregate_remaining_excludes_system():
    ledger = funded_ledger({'A': {'UPX': 30}, 'B': {'UPX': 70}})
    ledger.mint('UPX', 'admin', 500)
    assert aggregate_remaining(ledger, 'UPX') == 100


def test_aggregate_remaining_all_with_system():
    ledger = funded_ledger({'A': {}, 'B': {}})
    ledger.mint('UPX', 'admin', 500)
    assert aggregate_remaining(ledger, 'UPX') == 0


def test_aggregate_remaining_matches_sum_over_80_accounts():
    rng = random.Random(7)
    holdings = {f"s{i:02d}": {'UPX': rng.randint(0, 200)} for i in range(80)}
    ledger = funded_ledger(holdings)
    assert aggregate_remaining(ledger, 'UPX') == sum(h['UPX'] for h in holdings.values())


def test_reserve_follows_residue_causes():
    ledger = Ledger()
    ledger.mint(CURRENCY, 'admin', 40, cause='settlement_residue')
    assert ledger.reserve == -40
    ledger.burn(CURRENCY, 'admin', 15, cause='settlement_residue')
    assert ledger.reserve == -25


def test_check_invariants_detects_tampering():
    ledger = funded_ledger({'A': {'UPX': 10}})
    ledger.check_invariants()
    ledger.balances['A']['UPX'] += 1
    with pytest.raises(LedgerError):
        ledger.check_invariants()


def test_1000_random_steps_match_plain_arithmetic():
    rng = random.Random(3)
    accounts = ['A', 'B', 'C']
    ledger = funded_ledger({a: {} for a in accounts})
    expected = {a: {asset: 0 for asset in ('UPX', 'SPX', CURRENCY)} for a in accounts}
    for _ in range(1000):
        op = rng.choice(['mint', 'burn', 'transfer'])
        asset = rng.choice(['UPX', 'SPX', CURRENCY])
        src, dst = rng.sample(accounts, 2)
        amount = rng.randint(0, 20)
        if op == 'mint':
            ledger.mint(asset, src, amount)
            expected[src][asset] += amount
        elif expected[src][asset] < amount:
            with pytest.raises(InsufficientBalance):
                if op == 'burn':
                    ledger.burn(asset, src, amount)
                else:
                    ledger.transfer(asset, src, dst, amount)
        elif op == 'burn':
            ledger.burn(asset, src, amount)
            expected[src][asset] -= amount
        else:
            ledger.transfer(asset, src, dst, amount)
            expected[src][asset] -= amount
            expected[dst][asset] += amount
    ledger.check_invariants()
    for account in accounts:
        for asset, amount in expected[account].items():
            assert ledger.balance_of(account, asset) == amount
    rebuilt = replay(ledger.log, ledger.system_account)
    assert rebuilt.state() == ledger.state()
    assert rebuilt.digest() == ledger.digest()


def test_log_export_and_import(tmp_path):
    ledger = funded_ledger({'A': {'UPX': 12, CURRENCY: 50}, 'B': {}})
    ledger.transfer('UPX', 'A', 'B', 5, day=3, cause='auction')
    path = tmp_path / 'ledger.jsonl'
    export_log(ledger, str(path))
    assert read_log(str(path)) == ledger.log
    assert load_log(str(path)).digest() == ledger.digest()


def test_read_log_reports_line(tmp_path):
    ledger = funded_ledger({'A': {}})
    path = tmp_path / 'ledger.jsonl'
    export_log(ledger, str(path))
    with open(path, 'a', encoding='utf-8') as f:
        f.write('{not json\n')
    with pytest.raises(InvalidTx, match=':2:'):
        read_log(str(path))
