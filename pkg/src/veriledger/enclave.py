"""Simulated trusted enclave.

The enclave never stores the ledger or the full state.  It keeps two key
pairs, the last header it produced and two ledger roots: the one anchored on
the chain (``lroot_pb``) and the newest one (``lroot_cur``).  Every block is
executed over a partial state checked against the last header's state root,
and the ledger is extended through a proof template checked against
``lroot_cur``, so whatever the operator hands in is verified before use.

The TEE itself is modeled by :class:`TeePlatform` (sealing key, platform
signing key, monotonic counter) and :class:`AttestationService` (the registry
of genuine platforms that checks quotes).
"""

from __future__ import annotations

import os
import struct
import threading
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from . import codec, protocol
from .crypto import (
    PB,
    TEE,
    DecryptionError,
    Entropy,
    KeyPair,
    decrypt,
    digest,
    encrypt,
    keygen,
    sign,
    verify,
)
from .history import GENESIS, Commitment, IncrementalProof, MembershipProof
from .ledger import Block, Header
from .merkle import MerkleProof, mk_root
from .mpt import IntegrityError, MptProof, PartialState
from .vm import (
    DEFAULT_STEP_BUDGET,
    AccountState,
    PartialStateError,
    Receipt,
    Transaction,
    TxInput,
    TxParseError,
    genesis_root,
    run_vm,
)

CODE_IDENTITY = digest(b"veriledger enclave program v1")
SEAL_MAGIC = b"AQSE"


class EnclaveError(Exception):
    """A precondition or verification inside the enclave failed."""


class EnclaveFailed(EnclaveError):
    """The enclave's platform is gone; nothing can be called any more."""


class SealError(EnclaveError):
    pass


# -- platform and attestation --------------------------------------------------


class TeePlatform:
    """One simulated TEE host: sealing key, platform identity, monotonic counter."""

    def __init__(self, name: str = "tee", entropy: Entropy = os.urandom):
        self.name = name
        self._sealing_key = entropy(32)
        self._identity = keygen(TEE, entropy)
        self._counter = 0
        self.failed = False

    @property
    def public(self) -> bytes:
        return self._identity.public

    def quote(self, measurement: bytes, report: bytes) -> "Quote":
        self._alive()
        sig = sign(self._identity, Quote.message(measurement, report))
        return Quote(measurement, report, self.public, sig)

    def next_counter(self) -> int:
        self._counter += 1
        return self._counter

    @property
    def counter(self) -> int:
        return self._counter

    def fail(self) -> None:
        """Permanent hardware failure: sealed data becomes unreadable."""
        self.failed = True
        self._sealing_key = b""

    def _alive(self) -> None:
        if self.failed:
            raise EnclaveFailed(f"platform {self.name} has failed")


@dataclass(frozen=True)
class Quote:
    measurement: bytes
    report: bytes
    platform: bytes
    signature: bytes

    @staticmethod
    def message(measurement: bytes, report: bytes) -> bytes:
        return codec.encode(["QUOTE", measurement, report])


def report_data(pk_tee: bytes, pk_pb: bytes) -> bytes:
    return digest(codec.encode(["KEYS", pk_tee, pk_pb]))


class AttestationService:
    def __init__(self):
        self._genuine: set[bytes] = set()

    def register(self, platform: TeePlatform) -> None:
        self._genuine.add(platform.public)

    def verify(self, quote: Quote, expected_measurement: bytes, pk_tee: bytes, pk_pb: bytes) -> bool:
        return (
            quote.platform in self._genuine
            and quote.measurement == expected_measurement
            and quote.report == report_data(pk_tee, pk_pb)
            and verify(quote.platform, Quote.message(quote.measurement, quote.report), quote.signature)
        )


# -- configuration ---------------------------------------------------------------


@dataclass(frozen=True)
class EnclaveConfig:
    genesis: tuple[tuple[bytes, int], ...] = ()
    step_budget: int = DEFAULT_STEP_BUDGET

    @cached_property
    def genesis_root(self) -> bytes:
        return genesis_root(self.genesis)

    def measurement(self) -> bytes:
        return digest(codec.encode(["MEASURE", CODE_IDENTITY, self.genesis_root, self.step_budget]))


# -- outputs ----------------------------------------------------------------------


@dataclass
class ExecOutput:
    lroot_pb: Commitment
    lroot_cur: Commitment
    ps_new: PartialState
    hdr: Header
    receipts: list[Receipt]
    txs_er: list[TxInput]
    txs: list[Transaction]
    signature: bytes


@dataclass
class ReinitOutput:
    lroot_pb: Commitment
    lroot_cur: Commitment
    signature: bytes
    pk_pb: bytes
    pk_tee: bytes


@dataclass
class _State:
    pb: Optional[KeyPair] = None
    tee: Optional[KeyPair] = None
    hdr_last: Optional[Header] = None
    lroot_pb: Commitment = GENESIS
    lroot_cur: Commitment = GENESIS
    id_cur: int = 1
    # Roots produced since the last flush, oldest first.
    unflushed: list[Commitment] = field(default_factory=list)

    def encode(self) -> bytes:
        return codec.encode(
            [
                "ESTATE",
                self.pb.secret if self.pb else None,
                self.tee.secret if self.tee else None,
                self.hdr_last.to_list() if self.hdr_last else None,
                self.lroot_pb.to_tuple(),
                self.lroot_cur.to_tuple(),
                self.id_cur,
                [c.to_tuple() for c in self.unflushed],
            ]
        )

    @classmethod
    def decode(cls, data: bytes) -> "_State":
        tag, pb, tee, hdr, lpb, lcur, id_cur, unflushed = codec.decode(data)
        if tag != "ESTATE":
            raise SealError("not an enclave state")
        return cls(
            keygen(PB, _fixed(pb)) if pb else None,
            keygen(TEE, _fixed(tee)) if tee else None,
            Header.from_list(hdr) if hdr else None,
            Commitment.from_tuple(lpb),
            Commitment.from_tuple(lcur),
            id_cur,
            [Commitment.from_tuple(c) for c in unflushed],
        )


def _fixed(secret: bytes) -> Entropy:
    def entropy(n: int) -> bytes:
        if n != len(secret):
            raise SealError("sealed key has unexpected size")
        return secret

    return entropy


# -- the enclave ------------------------------------------------------------------


class Enclave:
    def __init__(
        self,
        platform: TeePlatform,
        config: EnclaveConfig = EnclaveConfig(),
        entropy: Entropy = os.urandom,
    ):
        self.platform = platform
        self.config = config
        self._entropy = entropy
        self._s = _State()
        self._lock = threading.RLock()
        self._genesis_root = config.genesis_root
        self.sealed_version = 0
        self.rollback_detected = False

    # -- read-only views

    @property
    def initialized(self) -> bool:
        return self._s.pb is not None

    @property
    def pk_pb(self) -> bytes:
        return self._need().pb.public

    @property
    def pk_tee(self) -> bytes:
        return self._need().tee.public

    @property
    def lroot_pb(self) -> Commitment:
        return self._s.lroot_pb

    @property
    def lroot_cur(self) -> Commitment:
        return self._s.lroot_cur

    @property
    def hdr_last(self) -> Optional[Header]:
        return self._s.hdr_last

    @property
    def id_cur(self) -> int:
        return self._s.id_cur

    def measurement(self) -> bytes:
        return self.config.measurement()

    def _need(self) -> _State:
        self.platform._alive()
        if self._s.pb is None:
            raise EnclaveError("enclave not initialized")
        return self._s

    def _st_root(self) -> bytes:
        hdr = self._s.hdr_last
        return self._genesis_root if hdr is None else hdr.st_root

    # -- setup

    def init(self) -> tuple[bytes, bytes]:
        with self._lock:
            self.platform._alive()
            if self._s.pb is not None:
                raise EnclaveError("enclave already initialized")
            self._s.pb = keygen(PB, self._entropy)
            self._s.tee = keygen(TEE, self._entropy)
            return self._s.tee.public, self._s.pb.public

    def quote(self) -> Quote:
        with self._lock:
            s = self._need()
            return self.platform.quote(self.measurement(), report_data(s.tee.public, s.pb.public))

    def issue_ticket(self, client: bytes, expiry: int) -> protocol.AccessTicket:
        with self._lock:
            return protocol.issue_ticket(self._need().pb, client, expiry)

    # -- normal operation

    def _process(
        self,
        s: _State,
        txs: Sequence[TxInput],
        ps_old: PartialState,
        template: IncrementalProof,
        lroot_tmp: Commitment,
    ) -> tuple[_State, ExecOutput]:
        """Pure step: returns the successor state without touching ``s``."""
        try:
            root = ps_old.verify()
        except IntegrityError as exc:
            raise EnclaveError(f"partial state integrity: {exc}") from exc
        if root != self._st_root_of(s):
            raise EnclaveError("partial state root does not match the last header")
        if lroot_tmp.version != s.lroot_cur.version + 1:
            raise EnclaveError("template must extend the ledger by exactly one block")
        if not isinstance(template, IncrementalProof) or not template.verify(s.lroot_cur, lroot_tmp):
            raise EnclaveError("proof template does not extend the current root")
        try:
            ps_new, rcps, txs_er, good = run_vm(txs, ps_old, self.config.step_budget)
        except (PartialStateError, IntegrityError) as exc:
            raise EnclaveError(f"partial state insufficient: {exc}") from exc
        hdr = Header(
            s.id_cur,
            mk_root([t.encode() for t in good]),
            mk_root([r.encode() for r in rcps]),
            ps_new.root,
        )
        new_root = template.with_last_leaf(hdr.hash()).derive_new_root()
        cur = Commitment(lroot_tmp.version, new_root)
        nxt = _State(
            s.pb, s.tee, hdr, s.lroot_pb, cur, s.id_cur + 1, s.unflushed + [cur]
        )
        sig = sign(s.pb, protocol.lroot_message(nxt.lroot_pb, nxt.lroot_cur))
        return nxt, ExecOutput(nxt.lroot_pb, cur, ps_new, hdr, rcps, txs_er, good, sig)

    def _st_root_of(self, s: _State) -> bytes:
        return self._genesis_root if s.hdr_last is None else s.hdr_last.st_root

    def exec(
        self,
        txs: Sequence[TxInput],
        ps_old: PartialState,
        template: IncrementalProof,
        lroot_tmp: Commitment,
    ) -> ExecOutput:
        with self._lock:
            s = self._need()
            nxt, out = self._process(s, txs, ps_old, template, lroot_tmp)
            self._s = nxt
            return out

    def flush(self, upto: Optional[Commitment] = None) -> None:
        """Advance the anchored root to ``upto`` (default: the newest root).

        ``upto`` must be a root produced since the last flush; this lets the
        operator flush to exactly what the chain accepted when blocks kept
        being produced while the anchoring transaction was confirming.
        """
        with self._lock:
            s = self._need()
            if upto is None or upto == s.lroot_cur:
                s.lroot_pb = s.lroot_cur
                s.unflushed = []
                return
            if upto == s.lroot_pb:
                return
            if upto not in s.unflushed:
                raise EnclaveError("flush target was not produced by this enclave since the last flush")
            i = s.unflushed.index(upto)
            s.lroot_pb = upto
            s.unflushed = s.unflushed[i + 1 :]

    # -- censorship handling

    def decrypt(self, edata: bytes) -> bytes:
        with self._lock:
            return decrypt(self._need().pb, edata)

    def sign_tx(
        self,
        etx: bytes,
        pi_tx: Optional[MerkleProof],
        hdr: Optional[Header],
        pi_hdr: Optional[MembershipProof],
    ) -> tuple[bytes, str]:
        with self._lock:
            s = self._need()
            try:
                tx = Transaction.decode(decrypt(s.pb, etx))
            except (DecryptionError, TxParseError):
                status = protocol.PARSING_ERROR
            else:
                if not tx.verify_signature():
                    status = protocol.SIGNATURE_ERROR
                else:
                    if pi_tx is None or hdr is None or not pi_tx.verify(tx.encode(), hdr.txs_root):
                        raise EnclaveError("transaction is not bound to the header")
                    if pi_hdr is None or not pi_hdr.verify(hdr.id - 1, hdr.hash(), s.lroot_pb):
                        raise EnclaveError("header is not in the anchored ledger")
                    status = protocol.INCLUDED
            sig = sign(s.pb, protocol.cens_tx_message(digest(etx), status))
            return sig, status

    def _parse_query(self, s: _State, equery: bytes) -> Optional[protocol.Query]:
        try:
            return protocol.decode_query(decrypt(s.pb, equery))
        except (DecryptionError, protocol.QueryParseError):
            return None

    def _reply(self, client: bytes, data: bytes) -> bytes:
        try:
            return encrypt(client, data, self._entropy).to_bytes()
        except Exception as exc:
            raise EnclaveError("cannot encrypt to the query's reply key") from exc

    def sign_qry_tx(
        self, equery: bytes, blk: Optional[Block], pi_hdr: Optional[MembershipProof]
    ) -> tuple[bytes, str, bytes]:
        with self._lock:
            s = self._need()
            q = self._parse_query(s, equery)
            edata = b""
            if not isinstance(q, protocol.ReadTx):
                status = protocol.PARSING_ERROR
            elif not 1 <= q.id_blk <= s.lroot_pb.version:
                status = protocol.BLK_NOT_FOUND
            else:
                if blk is None or blk.hdr.id != q.id_blk:
                    raise EnclaveError("wrong block supplied")
                if pi_hdr is None or not pi_hdr.verify(blk.hdr.id - 1, blk.hdr.hash(), s.lroot_pb):
                    raise EnclaveError("header is not in the anchored ledger")
                if not blk.is_consistent():
                    raise EnclaveError("block body does not match its header")
                i = blk.find_tx(q.id_tx)
                if i is None:
                    status = protocol.TX_NOT_FOUND
                else:
                    status = protocol.OK
                    edata = self._reply(q.reply_to, blk.txs[i].encode())
            msg = protocol.cens_qry_message(digest(equery), status, protocol.hash_opt(edata))
            return sign(s.pb, msg), status, edata

    def sign_qry_as(
        self, equery: bytes, account: Optional[bytes], proof: Optional[MptProof]
    ) -> tuple[bytes, str, bytes]:
        """``account`` is the encoded account state, or None if absent."""
        with self._lock:
            s = self._need()
            q = self._parse_query(s, equery)
            edata = b""
            if not isinstance(q, protocol.ReadAs):
                status = protocol.PARSING_ERROR
            else:
                st_root = self._st_root_of(s)
                if proof is None:
                    raise EnclaveError("missing state proof")
                if account is None:
                    if not proof.verify_neg(q.id_as, st_root):
                        raise EnclaveError("exclusion proof does not verify")
                    status = protocol.NOT_FOUND
                else:
                    if not proof.verify(q.id_as, st_root, account):
                        raise EnclaveError("inclusion proof does not verify")
                    AccountState.decode(account)
                    status = protocol.OK
                    edata = self._reply(q.reply_to, account)
            msg = protocol.cens_qry_message(digest(equery), status, protocol.hash_opt(edata))
            return sign(s.pb, msg), status, edata

    # -- sealing

    def seal(self) -> bytes:
        with self._lock:
            self._need()
            version = self.platform.next_counter()
            head = SEAL_MAGIC + struct.pack(">Q", version)
            nonce = self._entropy(12)
            blob = AESGCM(self.platform._sealing_key).encrypt(nonce, self._s.encode(), head)
            self.sealed_version = version
            return head + nonce + blob

    @classmethod
    def unseal(
        cls,
        platform: TeePlatform,
        sealed: bytes,
        config: EnclaveConfig = EnclaveConfig(),
        entropy: Entropy = os.urandom,
    ) -> "Enclave":
        """Restore an enclave from a sealed blob on the platform that made it.

        A blob older than the platform's latest seal still opens, but the
        returned enclave has ``rollback_detected`` set.
        """
        platform._alive()
        if len(sealed) < 24 or sealed[:4] != SEAL_MAGIC:
            raise SealError("not a sealed enclave state")
        head = sealed[:12]
        (version,) = struct.unpack(">Q", sealed[4:12])
        try:
            plain = AESGCM(platform._sealing_key).decrypt(sealed[12:24], sealed[24:], head)
        except (InvalidTag, ValueError) as exc:
            raise SealError("sealed state fails authentication on this platform") from exc
        enclave = cls(platform, config, entropy)
        enclave._s = _State.decode(plain)
        enclave.sealed_version = version
        enclave.rollback_detected = version < platform.counter
        return enclave

    # -- recovery after a permanent failure

    def reinit(
        self,
        lroot_old: Commitment,
        prev_blocks: Sequence[Block],
        hdr_sync: Optional[Header],
        hdr_proof: Optional[MembershipProof],
        next_inc_proof: Callable[[], tuple[IncrementalProof, Commitment]],
        get_partial_state: Callable[[Sequence[Transaction]], PartialState],
        replay: Callable[[Block], Commitment],
    ) -> ReinitOutput:
        """Rebuild the enclave state at ``lroot_old`` and replay unsynced blocks.

        Any divergence between a replayed block and what this enclave
        computes, or between the operator's root and ours, aborts without a
        signature and leaves the enclave uninitialized.
        """
        with self._lock:
            self.platform._alive()
            if self._s.pb is not None:
                raise EnclaveError("reinit requires a fresh enclave")
            if lroot_old.version == 0:
                if hdr_sync is not None or lroot_old != GENESIS:
                    raise EnclaveError("genesis restore takes no header")
            else:
                if hdr_sync is None or hdr_sync.id != lroot_old.version:
                    raise EnclaveError("sync header does not match the anchored version")
                if hdr_proof is None or not hdr_proof.verify(hdr_sync.id - 1, hdr_sync.hash(), lroot_old):
                    raise EnclaveError("sync header is not in the anchored ledger")
            s = _State(
                keygen(PB, self._entropy),
                keygen(TEE, self._entropy),
                hdr_sync,
                lroot_old,
                lroot_old,
                lroot_old.version + 1,
            )
            for blk in prev_blocks:
                template, lroot_tmp = next_inc_proof()
                ps_old = get_partial_state(blk.txs)
                s, out = self._process(s, list(blk.txs), ps_old, template, lroot_tmp)
                if out.txs_er or out.hdr != blk.hdr or tuple(out.receipts) != tuple(blk.rcps):
                    raise EnclaveError(f"block {blk.hdr.id} diverges from its re-execution")
                if replay(blk) != s.lroot_cur:
                    raise EnclaveError(f"operator diverged at block {blk.hdr.id}")
            sig = sign(s.pb, protocol.lroot_message(s.lroot_pb, s.lroot_cur))
            self._s = s
            return ReinitOutput(s.lroot_pb, s.lroot_cur, sig, s.pb.public, s.tee.public)
