import random

import pytest
from hypothesis import given, strategies as st

from veriledger.crypto import PB, keygen, seeded_entropy
from veriledger.mpt import build_trie
from veriledger.vm import (
    BAD_NONCE,
    CALL,
    DEPLOY,
    INSUFFICIENT_BALANCE,
    OK,
    OUT_OF_BOUNDS,
    REVERTED,
    TRANSFER,
    AccountState,
    CallContext,
    Receipt,
    Transaction,
    TxParseError,
    account_id,
    assemble,
    contract_address,
    counter_code,
    exec_contract,
    execute,
    genesis_trie,
    run_vm,
    token_balance,
    token_code,
    token_init_call,
    token_transfer_call,
    touched_accounts,
)

ENT = seeded_entropy("vm-tests")
KEYS = [keygen(PB, ENT) for _ in range(6)]


def run(src, calldata=b"", storage=None, budget=10_000):
    return exec_contract(assemble(src), calldata, CallContext(7, 0, storage or {}), budget)


@pytest.mark.parametrize(
    "op,a,b,want",
    [
        ("ADD", 10, 3, 13),
        ("SUB", 10, 3, 7),
        ("SUB", 3, 10, (3 - 10) % 2**256),
        ("MUL", 6, 7, 42),
        ("DIV", 10, 3, 3),
        ("DIV", 10, 0, 0),
        ("MOD", 10, 3, 1),
        ("MOD", 10, 0, 0),
        ("LT", 3, 10, 1),
        ("GT", 3, 10, 0),
        ("EQ", 4, 4, 1),
    ],
)
def test_binary_ops_take_top_as_first_operand(op, a, b, want):
    r = run(f"PUSH {b}\nPUSH {a}\n{op}\nPUSH 0\nSSTORE")
    assert r.status == OK and r.writes == {0: want}


def test_storage_caller_calldata_and_log():
    r = run("CALLER\nPUSH 0\nCALLDATALOAD\nSSTORE\nCALLDATASIZE\nPUSH 5\nLOG", calldata=(9).to_bytes(32, "big"))
    assert r.status == OK
    assert r.writes == {9: 7}
    assert r.logs == ((5, 32),)
    assert run("PUSH 4\nSLOAD\nPUSH 1\nSSTORE", storage={4: 11}).writes == {1: 11}


def test_failures_discard_effects():
    assert run("PUSH 1\nPUSH 0\nSSTORE\nREVERT").status == REVERTED
    assert run("PUSH 1\nPUSH 0\nSSTORE\nREVERT").writes == {}
    assert run("POP").status == REVERTED
    assert run("PUSH 1\nJUMP").status == REVERTED  # lands inside the PUSH immediate
    assert exec_contract(b"\x61\x01", b"", CallContext(0, 0, {})).status == REVERTED  # truncated
    assert exec_contract(b"\xee", b"", CallContext(0, 0, {})).status == REVERTED
    loop = "top:\nPUSH @top\nJUMP"
    assert run(loop, budget=100).status == OUT_OF_BOUNDS


def test_dup_swap_and_jumpi():
    r = run("PUSH 1\nPUSH 2\nSWAP 1\nPUSH 0\nSSTORE\nPUSH 1\nSSTORE")
    assert r.writes == {0: 1, 1: 2}
    r = run("PUSH 0\nPUSH @skip\nJUMPI\nPUSH 5\nPUSH 0\nSSTORE\nskip:\nPUSH 6\nDUP 1\nSSTORE")
    assert r.writes == {0: 5, 6: 6}


def test_assembler_errors():
    with pytest.raises(ValueError):
        assemble("FROB")
    with pytest.raises(ValueError):
        assemble(f"PUSH {2**256}")


def tx(k, nonce, kind, to, amount, payload=b""):
    return Transaction(KEYS[k].public, nonce, kind, to, amount, payload).signed(KEYS[k])


def ids():
    return [account_id(k.public) for k in KEYS]


def fresh_trie(balance=100):
    return genesis_trie([(i, balance) for i in ids()])


def test_transaction_roundtrip_and_shape():
    t = tx(0, 0, TRANSFER, ids()[1], 5)
    assert Transaction.decode(t.encode()) == t
    assert t.verify_signature()
    assert not Transaction(t.sender, 1, t.kind, t.recipient, t.amount, b"", t.signature).verify_signature()
    with pytest.raises(TxParseError):
        Transaction.decode(b"garbage")
    with pytest.raises(TxParseError):
        Transaction(t.sender, 0, DEPLOY, ids()[1], 0).check_shape()
    with pytest.raises(TxParseError):
        Transaction(t.sender, -1, TRANSFER, ids()[1], 0).check_shape()


def test_nonce_and_balance_rules():
    trie = fresh_trie(10)
    a, b = ids()[0], ids()[1]
    rc = execute(
        [
            tx(0, 1, TRANSFER, b, 1),  # wrong nonce: not consumed
            tx(0, 0, TRANSFER, b, 50),  # too much: nonce consumed
            tx(0, 1, TRANSFER, b, 4),
            tx(0, 1, TRANSFER, b, 4),  # replay
        ],
        trie,
    )
    assert [r.status for r in rc] == [BAD_NONCE, INSUFFICIENT_BALANCE, OK, BAD_NONCE]
    acct = AccountState.decode(trie.get(a))
    assert (acct.balance, acct.nonce) == (6, 2)
    assert AccountState.decode(trie.get(b)).balance == 14


def test_token_contract():
    trie = fresh_trie()
    a, b = ids()[0], ids()[1]
    addr = contract_address(KEYS[0].public, 0)
    rc = execute(
        [
            tx(0, 0, DEPLOY, None, 0, token_code()),
            tx(0, 1, CALL, addr, 0, token_init_call(1000)),
            tx(0, 2, CALL, addr, 0, token_init_call(5)),  # second init reverts
            tx(0, 3, CALL, addr, 0, token_transfer_call(b, 300)),
            tx(1, 0, CALL, addr, 0, token_transfer_call(a, 301)),  # more than held
            tx(1, 1, CALL, addr, 0, b""),
            tx(1, 2, CALL, b, 0, b""),  # not a contract
        ],
        trie,
    )
    assert [r.status for r in rc] == [OK, OK, REVERTED, OK, REVERTED, REVERTED, REVERTED]
    assert rc[3].logs == ((1, 300),)
    token = AccountState.decode(trie.get(addr))
    assert token_balance(token, a) == 700 and token_balance(token, b) == 300


def test_counter_and_deploy_collision():
    trie = fresh_trie()
    addr = contract_address(KEYS[2].public, 0)
    rc = execute(
        [tx(2, 0, DEPLOY, None, 3, counter_code())] + [tx(3, n, CALL, addr, 1, b"") for n in range(3)],
        trie,
    )
    assert all(r.status == OK for r in rc)
    c = AccountState.decode(trie.get(addr))
    assert c.storage == {0: 3} and c.balance == 6


def reference_payments(balances, nonces, txs):
    """Plain-dict model of payment semantics."""
    out = []
    for t in txs:
        s = account_id(t.sender)
        if t.nonce != nonces.get(s, 0):
            out.append(BAD_NONCE)
            continue
        nonces[s] = t.nonce + 1
        if balances.get(s, 0) < t.amount:
            out.append(INSUFFICIENT_BALANCE)
            continue
        balances[s] = balances.get(s, 0) - t.amount
        balances[t.recipient] = balances.get(t.recipient, 0) + t.amount
        out.append(OK)
    return out


@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 6), st.integers(0, 40), st.integers(0, 2)), max_size=25))
def test_payments_match_reference_model(spec):
    trie = fresh_trie(50)
    nonces = {}
    txs = []
    for s, r, amt, skew in spec:
        n = nonces.get(s, 0) + (1 if skew == 2 else 0)
        to = ids()[r] if r < 6 else bytes(32)
        txs.append(tx(s, n, TRANSFER, to, amt))
        if skew != 2:
            nonces[s] = n + 1
    balances = {i: 50 for i in ids()}
    want = reference_payments(balances, {}, txs)
    got = [r.status for r in execute(txs, trie)]
    assert got == want
    for aid, bal in balances.items():
        raw = trie.get(aid)
        assert (AccountState.decode(raw).balance if raw else 0) == bal


def test_run_vm_partial_equals_full_and_screens_bad_inputs():
    rng = random.Random(9)
    filler = [(rng.randbytes(32), 1) for _ in range(300)]
    full = genesis_trie([(i, 100) for i in ids()] + filler)
    good = [tx(0, 0, TRANSFER, ids()[1], 3), tx(1, 0, DEPLOY, None, 0, counter_code())]
    forged = Transaction(KEYS[2].public, 0, TRANSFER, ids()[3], 1, b"", bytes(65))
    block = good + [forged, b"\x00not a tx"]
    ps = full.extract(touched_accounts(block))
    ps_new, rcps, bad, accepted = run_vm(block, ps)
    assert accepted == good and bad == [forged, b"\x00not a tx"]
    want = execute(good, full)
    assert rcps == want and ps_new.root == full.root


def test_receipt_roundtrip():
    r = Receipt(bytes(32), OK, ((1, 2),))
    assert Receipt.decode(r.encode()) == r
    with pytest.raises(ValueError):
        Receipt.decode(AccountState().encode())
