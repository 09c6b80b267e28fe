"""Client library: submit transactions, verify receipts, escalate censorship."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Optional

from . import protocol
from .chain import Chain, ChainEvent, make_tx
from .crypto import PB, DecryptionError, Entropy, KeyPair, decrypt, encrypt, keygen, verify
from .enclave import AttestationService
from .operator import Operator, ReceiptBundle
from .vm import CALL, DEPLOY, MAX_PAYLOAD, TRANSFER, AccountState, Transaction, account_id

ANCHORED = "anchored"
PROMISED = "promised"


class ClientError(Exception):
    pass


class ProtocolViolation(ClientError):
    """The chain says a request was answered, but the answer does not check out."""


@dataclass(frozen=True)
class Resolution:
    idx: int
    pending: bool
    status: str
    data: Optional[bytes] = None
    verified: bool = False


class Client:
    def __init__(
        self,
        chain: Chain,
        contract_id: bytes,
        operator: Operator,
        attestation: AttestationService,
        expected_measurement: bytes,
        key: Optional[KeyPair] = None,
        entropy: Entropy = os.urandom,
    ):
        self.chain = chain
        self.contract_id = contract_id
        self.operator = operator
        self.attestation = attestation
        self.expected_measurement = expected_measurement
        self._entropy = entropy
        self.key = key or keygen(PB, entropy)
        self.ticket: Optional[protocol.AccessTicket] = None
        self.nonce = 0
        self.pk_pb: Optional[bytes] = None
        self.pk_tee: Optional[bytes] = None
        self.refresh_keys()

    @property
    def public(self) -> bytes:
        return self.key.public

    @property
    def id(self) -> bytes:
        return account_id(self.key.public)

    def _contract(self):
        return self.chain.contract(self.contract_id)

    def refresh_keys(self) -> None:
        c = self._contract()
        self.pk_pb, self.pk_tee = c.active_pb, c.active_tee

    # -- attestation

    def attest(self) -> bool:
        """Check the running enclave's quote against the contract's active keys."""
        self.refresh_keys()
        try:
            quote = self.operator.quote()
        except Exception:
            return False
        return self.attestation.verify(quote, self.expected_measurement, self.pk_tee, self.pk_pb)

    # -- transactions

    def make_tx(self, kind: str, recipient: Optional[bytes], amount: int = 0, payload: bytes = b"") -> Transaction:
        if len(payload) > MAX_PAYLOAD:
            raise ClientError(f"payload of {len(payload)} bytes exceeds the {MAX_PAYLOAD}-byte cap")
        tx = Transaction(self.key.public, self.nonce, kind, recipient, amount, payload).signed(self.key)
        self.nonce += 1
        return tx

    def transfer(self, to: bytes, amount: int) -> Transaction:
        return self.make_tx(TRANSFER, to, amount)

    def deploy(self, code: bytes, amount: int = 0) -> Transaction:
        return self.make_tx(DEPLOY, None, amount, code)

    def call(self, contract: bytes, data: bytes, amount: int = 0) -> Transaction:
        return self.make_tx(CALL, contract, amount, data)

    def submit(self, tx: Transaction) -> bool:
        """Hand ``tx`` to the operator; False means it was refused."""
        return self.operator.recv_tx(tx)

    def sync_nonce(self) -> int:
        acct, _ = self.operator.get_account(self.id)
        self.nonce = acct.nonce if acct else 0
        return self.nonce

    # -- receipts

    def verify_receipt(self, bundle: ReceiptBundle, tx: Transaction) -> bool:
        """True iff the bundle proves ``tx`` was executed into the ledger
        anchored on the chain (or promised by the enclave on top of it)."""
        try:
            c = self._contract()
            anchored = c.lroot_pb
            if bundle.lroot_pb != anchored:
                return False
            if bundle.lroot_cur != anchored:
                if bundle.sigma is None or bundle.pi_inc is None:
                    return False
                msg = protocol.lroot_message(bundle.lroot_pb, bundle.lroot_cur)
                if not verify(c.active_pb, msg, bundle.sigma):
                    return False
                if not bundle.pi_inc.verify(bundle.lroot_pb, bundle.lroot_cur):
                    return False
            hdr = bundle.hdr
            if not bundle.pi_hdr.verify(hdr.id - 1, hdr.hash(), bundle.lroot_cur):
                return False
            if not bundle.pi_rcp.verify(bundle.rcp.encode(), hdr.rcp_root):
                return False
            return bundle.rcp.tx_hash == tx.hash()
        except Exception:
            return False

    def confidence(self, bundle: ReceiptBundle) -> str:
        """``anchored`` once the receipt's ledger version is on chain, else ``promised``."""
        return ANCHORED if bundle.lroot_cur == self._contract().lroot_pb else PROMISED

    def get_receipt(self, tx: Transaction) -> tuple[ReceiptBundle, bool]:
        bundle = self.operator.serve_receipt(tx.hash())
        return bundle, self.verify_receipt(bundle, tx)

    # -- censorship escalation

    def request_ticket(self, expiry: int) -> protocol.AccessTicket:
        self.ticket = self.operator.issue_ticket(self.key.public, expiry)
        return self.ticket

    def _submit_cens(self, function: str, blob: bytes) -> int:
        if self.ticket is None:
            raise ClientError("no access ticket")
        self.refresh_keys()
        tx = make_tx(self.key, self.contract_id, function, blob, self.ticket.to_list())
        rc = self.chain.receipt(self.chain.submit(tx))
        while rc is None:
            self.chain.tick()
            rc = self.chain.receipt(tx.hash())
        if not rc.success:
            raise ClientError(f"{function} reverted: {rc.error}")
        return rc.result

    def escalate_tx(self, tx: Transaction) -> int:
        self.refresh_keys()
        etx = encrypt(self.pk_pb, tx.encode(), self._entropy).to_bytes()
        return self._submit_cens("submit_cens_tx", etx)

    def escalate_raw(self, blob: bytes, query: bool = False) -> int:
        """Escalate an arbitrary ciphertext (used to exercise error paths)."""
        return self._submit_cens("submit_cens_qry" if query else "submit_cens_tx", blob)

    def read_tx_query(self, id_tx: bytes, id_blk: int) -> protocol.ReadTx:
        return protocol.ReadTx(id_tx, id_blk, self.key.public)

    def read_as_query(self, id_as: bytes) -> protocol.ReadAs:
        return protocol.ReadAs(id_as, self.key.public)

    def escalate_qry(self, query: protocol.Query) -> int:
        self.refresh_keys()
        equery = encrypt(self.pk_pb, query.encode(), self._entropy).to_bytes()
        return self._submit_cens("submit_cens_qry", equery)

    def _events(self, topic: str, idx: int) -> list[ChainEvent]:
        return [
            e for e in self.chain.events_since(0, topic)
            if e.contract == self.contract_id and e.payload.get("idx") == idx
        ]

    def check_resolution(self, idx: int) -> Resolution:
        c = self._contract()
        if not 0 <= idx < len(c.cens_reqs):
            raise ClientError(f"no request {idx}")
        req = c.cens_reqs[idx]
        if req.pending:
            return Resolution(idx, True, protocol.PENDING)
        if req.kind == "tx":
            evs = self._events("CensTxResolved", idx)
            if len(evs) != 1:
                raise ProtocolViolation("resolved request without a resolution event")
            p = evs[0].payload
            msg = protocol.cens_tx_message(req.etx_hash, p["status"])
            if p["status"] != req.status or not any(verify(k, msg, p["sig"]) for k in c.pk_pb):
                raise ProtocolViolation("resolution signature does not verify")
            return Resolution(idx, False, req.status, None, True)
        evs = self._events("CensQryResolved", idx)
        if len(evs) != 1:
            raise ProtocolViolation("resolved request without a resolution event")
        p = evs[0].payload
        edata = p["edata"]
        if protocol.hash_opt(edata) != req.edata_hash:
            raise ProtocolViolation("event data does not match the recorded digest")
        msg = protocol.cens_qry_message(req.equery_hash, p["status"], req.edata_hash)
        if p["status"] != req.status or not any(verify(k, msg, p["sig"]) for k in c.pk_pb):
            raise ProtocolViolation("resolution signature does not verify")
        data = None
        if edata:
            try:
                data = decrypt(self.key, edata)
            except DecryptionError as exc:
                raise ProtocolViolation("cannot decrypt the returned data") from exc
        elif req.status == protocol.OK:
            raise ProtocolViolation("OK resolution without data")
        return Resolution(idx, False, req.status, data, True)

    def censorship_evidence(self, idx: int) -> dict:
        """Out-of-band dispute record for a request still pending on chain."""
        c = self._contract()
        req = c.cens_reqs[idx]
        if not req.pending:
            raise ClientError(f"request {idx} was resolved with {req.status}")
        return {
            "contract": self.contract_id.hex(),
            "request": idx,
            "kind": req.kind,
            "submitted_height": req.submitted,
            "now_height": self.chain.height,
            "ciphertext_digest": (req.etx_hash or req.equery_hash).hex(),
        }

    def censorship_evidence_json(self, idx: int) -> str:
        return json.dumps(self.censorship_evidence(idx), sort_keys=True)


def decode_account(data: Optional[bytes]) -> Optional[AccountState]:
    return None if data is None else AccountState.decode(data)


def decode_tx(data: Optional[bytes]) -> Optional[Transaction]:
    return None if data is None else Transaction.decode(data)
