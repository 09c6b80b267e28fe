"""Simulated public blockchain hosting the ledger-anchoring contract.

A single deterministic node.  Submitted transactions are queued and applied
in submission order once ``delay`` ticks have passed since submission (with
the default delay of 0 they apply immediately).  A call that raises
:class:`Revert` leaves contract state untouched and emits no events.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from typing import Any, Optional

from . import codec, protocol
from .crypto import KeyPair, digest, sign, verify
from .history import GENESIS, Commitment
from .protocol import AccessTicket


class Revert(Exception):
    pass


@dataclass(frozen=True)
class ChainTx:
    caller: bytes
    contract: bytes
    function: str
    args: tuple
    signature: bytes = b""

    def message(self) -> bytes:
        return codec.encode(["CHAINTX", self.caller, self.contract, self.function, list(self.args)])

    def hash(self) -> bytes:
        return digest(self.message() + self.signature)


def make_tx(key: KeyPair, contract: bytes, function: str, *args) -> ChainTx:
    tx = ChainTx(key.public, contract, function, tuple(args))
    return ChainTx(key.public, contract, function, tuple(args), sign(key, tx.message()))


@dataclass(frozen=True)
class ChainEvent:
    height: int
    seq: int
    contract: bytes
    topic: str
    payload: dict
    tx: bytes


@dataclass(frozen=True)
class ChainReceipt:
    tx: bytes
    height: int
    success: bool
    error: str = ""
    result: Any = None


@dataclass
class CensInfo:
    kind: str  # "tx" or "qry"
    client: bytes
    etx_hash: Optional[bytes]
    equery_hash: Optional[bytes]
    submitted: int
    status: str = protocol.PENDING
    edata_hash: Optional[bytes] = None
    resolved: Optional[int] = None

    @property
    def pending(self) -> bool:
        return self.status == protocol.PENDING


class LedgerContract:
    """Anchors the ledger root and records censorship requests."""

    def __init__(self, cid: bytes, pk_pb: bytes, pk_tee: bytes, pk_o: bytes):
        self.id = cid
        self.pk_pb: list[bytes] = [pk_pb]
        self.pk_tee: list[bytes] = [pk_tee]
        self.pk_o = pk_o
        self.lroot_pb: Commitment = GENESIS
        self.cens_reqs: list[CensInfo] = []
        self.history: list[Commitment] = [GENESIS]

    @property
    def active_pb(self) -> bytes:
        return self.pk_pb[-1]

    @property
    def active_tee(self) -> bytes:
        return self.pk_tee[-1]

    # Each handler gets the chain (for height/emit) and the calling tx.

    def _transition(self, chain: "Chain", a: Commitment, b: Commitment) -> bool:
        if self.lroot_pb == a:
            self.lroot_pb = b
            self.history.append(b)
            chain.emit(self, "LRootPosted", {"old": a.to_tuple(), "new": b.to_tuple()})
            return True
        chain.emit(self, "LRootRejected", {"current": self.lroot_pb.to_tuple(), "old": a.to_tuple(), "new": b.to_tuple()})
        return False

    def post_lroot(self, chain: "Chain", tx: ChainTx, root_a, root_b, sig: bytes) -> bool:
        a, b = _commitment(root_a), _commitment(root_b)
        if not verify(self.active_pb, protocol.lroot_message(a, b), sig):
            raise Revert("transition not signed by the active enclave key")
        return self._transition(chain, a, b)

    def replace_enc(self, chain: "Chain", tx: ChainTx, pkn_pb: bytes, pkn_tee: bytes, root_a, root_b, sig: bytes) -> bool:
        if tx.caller != self.pk_o:
            raise Revert("only the operator may replace the enclave")
        a, b = _commitment(root_a), _commitment(root_b)
        if not verify(pkn_pb, protocol.lroot_message(a, b), sig):
            raise Revert("transition not signed by the replacement enclave key")
        if not self._transition(chain, a, b):
            return False
        self.pk_pb.append(pkn_pb)
        self.pk_tee.append(pkn_tee)
        chain.emit(self, "EnclaveReplaced", {"pk_pb": pkn_pb, "pk_tee": pkn_tee, "index": len(self.pk_pb) - 1})
        return True

    def _check_ticket(self, chain: "Chain", tx: ChainTx, ticket) -> None:
        t = ticket if isinstance(ticket, AccessTicket) else AccessTicket.from_list(ticket)
        if t.client != tx.caller:
            raise Revert("ticket issued to a different client")
        if t.expiry <= chain.height:
            raise Revert("ticket expired")
        if not t.verify(self.active_pb):
            raise Revert("ticket not signed by the active enclave key")

    def submit_cens_tx(self, chain: "Chain", tx: ChainTx, etx: bytes, ticket) -> int:
        self._check_ticket(chain, tx, ticket)
        idx = len(self.cens_reqs)
        self.cens_reqs.append(CensInfo("tx", tx.caller, digest(etx), None, chain.height))
        chain.emit(self, "CensTxSubmitted", {"idx": idx, "etx": etx})
        return idx

    def submit_cens_qry(self, chain: "Chain", tx: ChainTx, equery: bytes, ticket) -> int:
        self._check_ticket(chain, tx, ticket)
        idx = len(self.cens_reqs)
        self.cens_reqs.append(CensInfo("qry", tx.caller, None, digest(equery), chain.height))
        chain.emit(self, "CensQrySubmitted", {"idx": idx, "equery": equery})
        return idx

    def _request(self, idx: int) -> CensInfo:
        if not isinstance(idx, int) or not 0 <= idx < len(self.cens_reqs):
            raise Revert("no such request")
        r = self.cens_reqs[idx]
        if not r.pending:
            raise Revert("request already resolved")
        return r

    def resolve_cens_tx(self, chain: "Chain", tx: ChainTx, idx: int, status: str, sig: bytes) -> None:
        r = self._request(idx)
        if status not in protocol.TX_STATUSES:
            raise Revert("invalid status")
        etx_hash = r.etx_hash if r.etx_hash is not None else protocol.hash_opt(None)
        if not verify(self.active_pb, protocol.cens_tx_message(etx_hash, status), sig):
            raise Revert("resolution not signed by the active enclave key")
        r.status = status
        r.resolved = chain.height
        chain.emit(self, "CensTxResolved", {"idx": idx, "status": status, "sig": sig})

    def resolve_cens_qry(self, chain: "Chain", tx: ChainTx, idx: int, status: str, edata: bytes, sig: bytes) -> None:
        r = self._request(idx)
        if status not in protocol.QRY_STATUSES:
            raise Revert("invalid status")
        eq_hash = r.equery_hash if r.equery_hash is not None else protocol.hash_opt(None)
        edata_hash = protocol.hash_opt(edata)
        if not verify(self.active_pb, protocol.cens_qry_message(eq_hash, status, edata_hash), sig):
            raise Revert("resolution not signed by the active enclave key")
        r.status = status
        r.edata_hash = edata_hash
        r.resolved = chain.height
        chain.emit(self, "CensQryResolved", {"idx": idx, "status": status, "edata": edata or b"", "sig": sig})

    FUNCTIONS = (
        "post_lroot",
        "replace_enc",
        "submit_cens_tx",
        "submit_cens_qry",
        "resolve_cens_tx",
        "resolve_cens_qry",
    )

    def dump(self) -> dict:
        return {
            "id": self.id,
            "pk_pb": list(self.pk_pb),
            "pk_tee": list(self.pk_tee),
            "pk_o": self.pk_o,
            "lroot_pb": self.lroot_pb.to_tuple(),
            "cens_reqs": [
                {
                    "kind": r.kind,
                    "client": r.client,
                    "etx_hash": r.etx_hash,
                    "equery_hash": r.equery_hash,
                    "status": r.status,
                    "edata_hash": r.edata_hash,
                    "submitted": r.submitted,
                    "resolved": r.resolved,
                }
                for r in self.cens_reqs
            ],
        }


def _commitment(value) -> Commitment:
    if isinstance(value, Commitment):
        return value
    try:
        return Commitment.from_tuple(value)
    except (TypeError, ValueError) as exc:
        raise Revert("malformed root") from exc


class Chain:
    def __init__(self, delay: int = 0):
        if delay < 0:
            raise ValueError("delay must be non-negative")
        self.delay = delay
        self.height = 0
        self._contracts: dict[bytes, LedgerContract] = {}
        self._queue: list[tuple[int, ChainTx]] = []
        self._receipts: dict[bytes, ChainReceipt] = {}
        self._order: list[bytes] = []
        self.events: list[ChainEvent] = []
        self._current: Optional[ChainTx] = None
        self._staged: list[ChainEvent] = []
        self._deploys = 0

    # -- contracts

    def deploy(self, pk_pb: bytes, pk_tee: bytes, pk_o: bytes) -> bytes:
        cid = digest(codec.encode(["CONTRACT", pk_o, pk_pb, pk_tee, self._deploys]))
        self._deploys += 1
        self._contracts[cid] = LedgerContract(cid, pk_pb, pk_tee, pk_o)
        self.events.append(ChainEvent(self.height, len(self.events), cid, "Deployed", {"id": cid}, b""))
        return cid

    def contract(self, cid: bytes) -> LedgerContract:
        """Read-only snapshot of a contract's state."""
        return copy.deepcopy(self._contracts[cid])

    def emit(self, contract: LedgerContract, topic: str, payload: dict) -> None:
        tx = self._current.hash() if self._current else b""
        self._staged.append(ChainEvent(self.height, 0, contract.id, topic, payload, tx))

    # -- transactions

    def submit(self, tx: ChainTx) -> bytes:
        """Queue ``tx``; returns its hash.  Applied now if the delay is 0."""
        self._queue.append((self.height + self.delay, tx))
        self._order.append(tx.hash())
        self._apply_due()
        return tx.hash()

    def tick(self, n: int = 1) -> None:
        for _ in range(n):
            self.height += 1
            self._apply_due()

    def receipt(self, txh: bytes) -> Optional[ChainReceipt]:
        return self._receipts.get(txh)

    def pending(self) -> int:
        return len(self._queue)

    def _apply_due(self) -> None:
        while self._queue and self._queue[0][0] <= self.height:
            _, tx = self._queue.pop(0)
            self._apply(tx)

    def _apply(self, tx: ChainTx) -> None:
        h = tx.hash()
        target = self._contracts.get(tx.contract)
        if target is None:
            self._receipts[h] = ChainReceipt(h, self.height, False, "no such contract")
            return
        if not verify(tx.caller, tx.message(), tx.signature):
            self._receipts[h] = ChainReceipt(h, self.height, False, "bad transaction signature")
            return
        if tx.function not in LedgerContract.FUNCTIONS:
            self._receipts[h] = ChainReceipt(h, self.height, False, "unknown function")
            return
        snapshot = copy.deepcopy(target)
        self._current, self._staged = tx, []
        try:
            result = getattr(target, tx.function)(self, tx, *tx.args)
        except (Revert, TypeError, ValueError) as exc:
            self._contracts[tx.contract] = snapshot
            self._receipts[h] = ChainReceipt(h, self.height, False, str(exc) or type(exc).__name__)
        else:
            for ev in self._staged:
                self.events.append(
                    ChainEvent(ev.height, len(self.events), ev.contract, ev.topic, ev.payload, ev.tx)
                )
            self._receipts[h] = ChainReceipt(h, self.height, True, "", result)
        finally:
            self._current, self._staged = None, []

    def events_since(self, seq: int = 0, topic: Optional[str] = None) -> list[ChainEvent]:
        return [e for e in self.events[seq:] if topic is None or e.topic == topic]

    # -- export

    def dump(self) -> dict:
        return {
            "height": self.height,
            "delay": self.delay,
            "contracts": [c.dump() for _, c in sorted(self._contracts.items())],
            "events": [
                {"height": e.height, "seq": e.seq, "contract": e.contract, "topic": e.topic, "payload": e.payload, "tx": e.tx}
                for e in self.events
            ],
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(jsonable(self.dump()), sort_keys=True, **kwargs)


def jsonable(obj: Any) -> Any:
    """Recursively turn bytes into hex strings so the value can be JSON-encoded."""
    if isinstance(obj, (bytes, bytearray)):
        return bytes(obj).hex()
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, Commitment):
        return jsonable(obj.to_tuple())
    return obj
