"""Minimal deterministic VM: accounts, transactions, receipts and a stack machine.

State lives in a Merkle-Patricia trie keyed by account id.  A user account id
is ``digest(public_key)``; a contract deployed by ``sender`` with nonce ``n``
lives at ``digest(sender_public_key || n as 8 bytes BE)``.

Bytecode opcodes (``a`` is the top of the stack, ``b`` the next item)::

    0x00 STOP                      0x20 SLOAD   key -> value
    0x01 ADD   a + b               0x21 SSTORE  key, value ->
    0x02 MUL   a * b               0x30 CALLER
    0x03 SUB   a - b               0x31 CALLVALUE
    0x04 DIV   a // b (0 if b=0)   0x32 CALLDATALOAD  offset -> 32-byte word
    0x05 MOD   a % b  (0 if b=0)   0x33 CALLDATASIZE
    0x10 LT    a < b               0x40 JUMP    dest ->
    0x11 GT    a > b               0x41 JUMPI   dest, cond ->
    0x12 EQ    a == b              0x50 POP
    0x13 ISZERO                    0x51 DUP n   (n = 1 duplicates the top)
    0x5f+k PUSHk (k = 1..32)       0x52 SWAP n  (swap top with item n below)
    0xa0 LOG   topic, data ->      0xfd REVERT

Arithmetic is modulo 2**256.  Jumps must land on an instruction boundary.
Each executed instruction costs one step.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence, Union

from . import codec
from .crypto import KeyPair, PB_PUBLIC_SIZE, digest, sign, verify
from .mpt import EMPTY_ROOT, MissingNodeError, PartialState, Trie

TRANSFER = "transfer"
DEPLOY = "deploy"
CALL = "call"
KINDS = (TRANSFER, DEPLOY, CALL)

OK = "ok"
REVERTED = "reverted"
OUT_OF_BOUNDS = "out_of_bounds"
BAD_NONCE = "bad_nonce"
INSUFFICIENT_BALANCE = "insufficient_balance"
RETURN_CODES = (OK, REVERTED, OUT_OF_BOUNDS, BAD_NONCE, INSUFFICIENT_BALANCE)

DEFAULT_STEP_BUDGET = 10_000
MAX_PAYLOAD = 64 * 1024
WORD = 1 << 256
STACK_LIMIT = 1024


class TxParseError(ValueError):
    pass


class PartialStateError(Exception):
    """The supplied partial state does not cover an account the block touches."""


def account_id(public: bytes) -> bytes:
    return digest(public)


def contract_address(sender: bytes, nonce: int) -> bytes:
    return digest(sender + struct.pack(">Q", nonce))


# -- transactions -------------------------------------------------------------


@dataclass(frozen=True)
class Transaction:
    sender: bytes
    nonce: int
    kind: str
    recipient: Optional[bytes]
    amount: int
    payload: bytes = b""
    signature: bytes = b""

    def _fields(self) -> list:
        return ["TX", self.sender, self.nonce, self.kind, self.recipient, self.amount, self.payload]

    def signing_bytes(self) -> bytes:
        return codec.encode(self._fields())

    def encode(self) -> bytes:
        return codec.encode(self._fields() + [self.signature])

    @classmethod
    def decode(cls, data: bytes) -> "Transaction":
        try:
            fields = codec.decode(data)
        except codec.DecodeError as exc:
            raise TxParseError(str(exc)) from exc
        if not isinstance(fields, list) or len(fields) != 8 or fields[0] != "TX":
            raise TxParseError("not a transaction")
        _, sender, nonce, kind, recipient, amount, payload, sig = fields
        tx = cls(sender, nonce, kind, recipient, amount, payload, sig)
        tx.check_shape()
        return tx

    def check_shape(self) -> None:
        ok = (
            isinstance(self.sender, bytes)
            and len(self.sender) == PB_PUBLIC_SIZE
            and isinstance(self.nonce, int)
            and not isinstance(self.nonce, bool)
            and 0 <= self.nonce < 1 << 64
            and self.kind in KINDS
            and isinstance(self.amount, int)
            and not isinstance(self.amount, bool)
            and 0 <= self.amount < WORD
            and isinstance(self.payload, bytes)
            and len(self.payload) <= MAX_PAYLOAD
            and isinstance(self.signature, bytes)
        )
        if ok:
            if self.kind == DEPLOY:
                ok = self.recipient is None
            else:
                ok = isinstance(self.recipient, bytes) and len(self.recipient) == 32
        if not ok:
            raise TxParseError("malformed transaction fields")

    def hash(self) -> bytes:
        return digest(self.encode())

    def signed(self, key: KeyPair) -> "Transaction":
        return replace(self, signature=sign(key, self.signing_bytes()))

    def verify_signature(self) -> bool:
        return verify(self.sender, self.signing_bytes(), self.signature)

    @property
    def sender_id(self) -> bytes:
        return account_id(self.sender)

    def touched(self) -> tuple[bytes, ...]:
        """Account ids this transaction may read or write."""
        other = contract_address(self.sender, self.nonce) if self.kind == DEPLOY else self.recipient
        return (self.sender_id, other)


# -- accounts and receipts ---------------------------------------------------


@dataclass
class AccountState:
    balance: int = 0
    nonce: int = 0
    code: Optional[bytes] = None
    storage: dict[int, int] = field(default_factory=dict)

    def encode(self) -> bytes:
        return codec.encode(["AS", self.balance, self.nonce, self.code, self.storage])

    @classmethod
    def decode(cls, data: bytes) -> "AccountState":
        tag, balance, nonce, code, storage = codec.decode(data)
        if tag != "AS":
            raise ValueError("not an account state")
        return cls(balance, nonce, code, dict(storage))

    def copy(self) -> "AccountState":
        return AccountState(self.balance, self.nonce, self.code, dict(self.storage))


@dataclass(frozen=True)
class Receipt:
    tx_hash: bytes
    status: str
    logs: tuple[tuple[int, int], ...] = ()

    def encode(self) -> bytes:
        return codec.encode(["RCP", self.tx_hash, self.status, [list(l) for l in self.logs]])

    @classmethod
    def decode(cls, data: bytes) -> "Receipt":
        tag, tx_hash, status, logs = codec.decode(data)
        if tag != "RCP" or status not in RETURN_CODES:
            raise ValueError("not a receipt")
        return cls(tx_hash, status, tuple((t, d) for t, d in logs))


# -- the stack machine ---------------------------------------------------------

OPCODES = {
    "STOP": 0x00, "ADD": 0x01, "MUL": 0x02, "SUB": 0x03, "DIV": 0x04, "MOD": 0x05,
    "LT": 0x10, "GT": 0x11, "EQ": 0x12, "ISZERO": 0x13,
    "SLOAD": 0x20, "SSTORE": 0x21,
    "CALLER": 0x30, "CALLVALUE": 0x31, "CALLDATALOAD": 0x32, "CALLDATASIZE": 0x33,
    "JUMP": 0x40, "JUMPI": 0x41,
    "POP": 0x50, "DUP": 0x51, "SWAP": 0x52,
    "LOG": 0xA0, "REVERT": 0xFD,
}
PUSH_BASE = 0x5F

_BINARY = {
    0x01: lambda a, b: (a + b) % WORD,
    0x02: lambda a, b: (a * b) % WORD,
    0x03: lambda a, b: (a - b) % WORD,
    0x04: lambda a, b: a // b if b else 0,
    0x05: lambda a, b: a % b if b else 0,
    0x10: lambda a, b: int(a < b),
    0x11: lambda a, b: int(a > b),
    0x12: lambda a, b: int(a == b),
}


class _Revert(Exception):
    pass


class _OutOfSteps(Exception):
    pass


@dataclass(frozen=True)
class CallContext:
    caller: int
    value: int
    storage: dict[int, int]


@dataclass(frozen=True)
class ExecResult:
    status: str
    writes: dict[int, int]
    logs: tuple[tuple[int, int], ...]


def _boundaries(code: bytes) -> Optional[set[int]]:
    """Instruction start offsets, or None if the code has a truncated immediate."""
    starts = set()
    pc = 0
    while pc < len(code):
        starts.add(pc)
        op = code[pc]
        if PUSH_BASE < op <= PUSH_BASE + 32:
            pc += 1 + op - PUSH_BASE
        elif op in (0x51, 0x52):
            pc += 2
        else:
            pc += 1
    return starts if pc == len(code) else None


def exec_contract(
    code: bytes, calldata: bytes, ctx: CallContext, budget: int = DEFAULT_STEP_BUDGET
) -> ExecResult:
    """Run ``code``; on anything but a clean halt no writes or logs survive."""
    starts = _boundaries(code)
    if starts is None:
        return ExecResult(REVERTED, {}, ())
    stack: list[int] = []
    writes: dict[int, int] = {}
    logs: list[tuple[int, int]] = []

    def pop() -> int:
        if not stack:
            raise _Revert("stack underflow")
        return stack.pop()

    def push(v: int) -> None:
        if len(stack) >= STACK_LIMIT:
            raise _Revert("stack overflow")
        stack.append(v)

    pc = 0
    steps = 0
    try:
        while pc < len(code):
            steps += 1
            if steps > budget:
                raise _OutOfSteps()
            op = code[pc]
            pc += 1
            if op == 0x00:
                break
            if op in _BINARY:
                a = pop()
                b = pop()
                push(_BINARY[op](a, b))
            elif op == 0x13:
                push(int(pop() == 0))
            elif PUSH_BASE < op <= PUSH_BASE + 32:
                n = op - PUSH_BASE
                push(int.from_bytes(code[pc : pc + n], "big"))
                pc += n
            elif op == 0x20:
                key = pop()
                push(writes.get(key, ctx.storage.get(key, 0)))
            elif op == 0x21:
                key = pop()
                writes[key] = pop()
            elif op == 0x30:
                push(ctx.caller)
            elif op == 0x31:
                push(ctx.value)
            elif op == 0x32:
                off = pop()
                word = calldata[off : off + 32] if off < len(calldata) else b""
                push(int.from_bytes(word.ljust(32, b"\x00"), "big"))
            elif op == 0x33:
                push(len(calldata))
            elif op in (0x40, 0x41):
                dest = pop()
                cond = pop() if op == 0x41 else 1
                if cond:
                    if dest not in starts:
                        raise _Revert("bad jump destination")
                    pc = dest
            elif op == 0x50:
                pop()
            elif op == 0x51:
                n = code[pc]
                pc += 1
                if n < 1 or n > len(stack):
                    raise _Revert("bad DUP")
                push(stack[-n])
            elif op == 0x52:
                n = code[pc]
                pc += 1
                if n < 1 or n >= len(stack):
                    raise _Revert("bad SWAP")
                stack[-1], stack[-1 - n] = stack[-1 - n], stack[-1]
            elif op == 0xA0:
                topic = pop()
                logs.append((topic, pop()))
            elif op == 0xFD:
                raise _Revert("REVERT")
            else:
                raise _Revert(f"invalid opcode {op:#x}")
    except _Revert:
        return ExecResult(REVERTED, {}, ())
    except _OutOfSteps:
        return ExecResult(OUT_OF_BOUNDS, {}, ())
    return ExecResult(OK, writes, tuple(logs))


def assemble(source: str) -> bytes:
    """Assemble one instruction per line; ``name:`` defines a label and
    ``PUSH @name`` pushes its offset.  ``#`` starts a comment."""
    lines = []
    for raw in source.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            lines.append(line)

    def encode_line(line: str, labels: dict[str, int]) -> bytes:
        parts = line.split()
        name = parts[0].upper()
        if name == "PUSH":
            arg = parts[1]
            if arg.startswith("@"):
                return bytes([PUSH_BASE + 2]) + labels.get(arg[1:], 0).to_bytes(2, "big")
            value = int(arg, 0)
            if not 0 <= value < WORD:
                raise ValueError(f"PUSH operand out of range: {line}")
            n = max(1, (value.bit_length() + 7) // 8)
            return bytes([PUSH_BASE + n]) + value.to_bytes(n, "big")
        if name in ("DUP", "SWAP"):
            return bytes([OPCODES[name], int(parts[1])])
        if name not in OPCODES:
            raise ValueError(f"unknown instruction: {line}")
        return bytes([OPCODES[name]])

    labels: dict[str, int] = {}
    pc = 0
    for line in lines:
        if line.endswith(":"):
            labels[line[:-1]] = pc
        else:
            pc += len(encode_line(line, {}))
    out = b"".join(encode_line(l, labels) for l in lines if not l.endswith(":"))
    return out


# Selector 0 mints the initial supply to the caller (once), 1 transfers.
# Calldata is a sequence of 32-byte words: selector, then arguments.
TOKEN_SOURCE = """
    CALLDATASIZE
    ISZERO
    PUSH @fail
    JUMPI
    PUSH 0
    CALLDATALOAD
    DUP 1
    ISZERO
    PUSH @init
    JUMPI
    PUSH 1
    EQ
    PUSH @transfer
    JUMPI
fail:
    REVERT
init:
    POP
    PUSH 0
    SLOAD
    PUSH @fail
    JUMPI
    PUSH 1
    PUSH 0
    SSTORE
    PUSH 32
    CALLDATALOAD
    CALLER
    SSTORE
    STOP
transfer:
    # stack: []
    PUSH 64
    CALLDATALOAD          # amt
    DUP 1
    CALLER
    SLOAD                 # bal amt amt
    LT                    # bal < amt
    PUSH @fail
    JUMPI                 # amt
    DUP 1
    CALLER
    SLOAD
    SUB                   # bal - amt, amt
    CALLER
    SSTORE                # amt
    DUP 1
    PUSH 32
    CALLDATALOAD
    SLOAD
    ADD                   # to_bal + amt, amt
    PUSH 32
    CALLDATALOAD
    SSTORE                # amt
    PUSH 1
    LOG
    STOP
"""

COUNTER_SOURCE = """
    PUSH 1
    PUSH 0
    SLOAD
    ADD
    PUSH 0
    SSTORE
    PUSH 0
    SLOAD
    PUSH 2
    LOG
    STOP
"""

COUNTER_SLOT = 0
TOKEN_INIT_SLOT = 0


def token_code() -> bytes:
    return assemble(TOKEN_SOURCE)


def counter_code() -> bytes:
    return assemble(COUNTER_SOURCE)


def words(*values: int) -> bytes:
    return b"".join(v.to_bytes(32, "big") for v in values)


def token_init_call(supply: int) -> bytes:
    return words(0, supply)


def token_transfer_call(to: bytes, amount: int) -> bytes:
    return words(1, int.from_bytes(to, "big"), amount)


def token_balance(state: AccountState, holder: bytes) -> int:
    return state.storage.get(int.from_bytes(holder, "big"), 0)


# -- block execution -----------------------------------------------------------


class StateView:
    """Account-level reads and writes over a trie."""

    def __init__(self, trie: Trie):
        self.trie = trie

    def get(self, aid: bytes) -> Optional[AccountState]:
        try:
            raw = self.trie.get(aid)
        except MissingNodeError as exc:
            raise PartialStateError(f"account {aid.hex()[:16]} not covered") from exc
        return None if raw is None else AccountState.decode(raw)

    def load(self, aid: bytes) -> AccountState:
        acct = self.get(aid)
        return AccountState() if acct is None else acct

    def store(self, aid: bytes, acct: AccountState) -> None:
        try:
            self.trie.put(aid, acct.encode())
        except MissingNodeError as exc:
            raise PartialStateError(f"account {aid.hex()[:16]} not covered") from exc


def apply_tx(view: StateView, tx: Transaction, budget: int = DEFAULT_STEP_BUDGET) -> Receipt:
    h = tx.hash()
    sid = tx.sender_id
    sender = view.load(sid)
    if tx.nonce != sender.nonce:
        return Receipt(h, BAD_NONCE)
    sender.nonce += 1
    if sender.balance < tx.amount:
        view.store(sid, sender)
        return Receipt(h, INSUFFICIENT_BALANCE)

    if tx.kind == TRANSFER:
        sender.balance -= tx.amount
        view.store(sid, sender)
        rcpt = view.load(tx.recipient)
        rcpt.balance += tx.amount
        view.store(tx.recipient, rcpt)
        return Receipt(h, OK)

    if tx.kind == DEPLOY:
        addr = contract_address(tx.sender, tx.nonce)
        if view.get(addr) is not None:
            view.store(sid, sender)
            return Receipt(h, REVERTED)
        sender.balance -= tx.amount
        view.store(sid, sender)
        view.store(addr, AccountState(balance=tx.amount, code=tx.payload))
        return Receipt(h, OK)

    target = view.get(tx.recipient) if tx.recipient != sid else None
    if target is None or target.code is None:
        view.store(sid, sender)
        return Receipt(h, REVERTED)
    ctx = CallContext(int.from_bytes(sid, "big"), tx.amount, target.storage)
    result = exec_contract(target.code, tx.payload, ctx, budget)
    if result.status != OK:
        view.store(sid, sender)
        return Receipt(h, result.status)
    sender.balance -= tx.amount
    view.store(sid, sender)
    target.balance += tx.amount
    for k, v in result.writes.items():
        if v:
            target.storage[k] = v
        else:
            target.storage.pop(k, None)
    view.store(tx.recipient, target)
    return Receipt(h, OK, result.logs)


TxInput = Union[Transaction, bytes]


def screen(txs: Sequence[TxInput]) -> tuple[list[Transaction], list[TxInput]]:
    """Split into well-formed, correctly signed transactions and the rest."""
    good: list[Transaction] = []
    bad: list[TxInput] = []
    for item in txs:
        try:
            tx = Transaction.decode(item) if isinstance(item, (bytes, bytearray)) else item
            if not isinstance(tx, Transaction):
                raise TxParseError("not a transaction")
            tx.check_shape()
        except TxParseError:
            bad.append(item)
            continue
        if tx.verify_signature():
            good.append(tx)
        else:
            bad.append(item)
    return good, bad


def execute(
    txs: Iterable[Transaction], trie: Trie, budget: int = DEFAULT_STEP_BUDGET
) -> list[Receipt]:
    view = StateView(trie)
    return [apply_tx(view, tx, budget) for tx in txs]


def run_vm(
    txs: Sequence[TxInput], ps: PartialState, budget: int = DEFAULT_STEP_BUDGET
) -> tuple[PartialState, list[Receipt], list[TxInput], list[Transaction]]:
    """Execute a block over a partial state.

    Returns the new partial state, one receipt per accepted transaction, the
    rejected inputs (parse or signature failures) and the accepted transactions.
    """
    ps.verify()
    good, bad = screen(txs)
    trie = ps.trie()
    receipts = execute(good, trie, budget)
    new = PartialState(dict(trie.store.backing), trie.root, ps.keys)
    return new, receipts, bad, good


def touched_accounts(txs: Iterable[TxInput]) -> list[bytes]:
    out = set()
    for item in txs:
        try:
            tx = Transaction.decode(item) if isinstance(item, (bytes, bytearray)) else item
            out.update(tx.touched())
        except (TxParseError, AttributeError, TypeError):
            continue
    return sorted(out)


def genesis_trie(alloc: Iterable[tuple[bytes, int]], trie: Optional[Trie] = None) -> Trie:
    """Trie holding plain accounts with the given ``(account id, balance)`` pairs."""
    t = trie if trie is not None else Trie()
    for aid, balance in sorted(alloc):
        t.put(aid, AccountState(balance=balance).encode())
    return t


def genesis_root(alloc: Iterable[tuple[bytes, int]]) -> bytes:
    alloc = list(alloc)
    return genesis_trie(alloc).root if alloc else EMPTY_ROOT
