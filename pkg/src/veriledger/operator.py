"""The untrusted ledger operator.

Holds the full ledger (block store + history tree) and the full state trie,
batches client transactions into blocks executed by the enclave, anchors new
roots on the chain, serves receipts with proofs, answers censorship requests
and rebuilds the enclave after a permanent platform failure.

Time is injected through a clock object with a ``now()`` method so batching
timeouts are testable without sleeping; call :meth:`Operator.tick` to let the
operator react to elapsed time and new chain events.
"""

from __future__ import annotations

import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from . import protocol
from .chain import Chain, make_tx
from .crypto import PB, DecryptionError, Entropy, KeyPair, keygen
from .enclave import Enclave, EnclaveConfig, EnclaveError, Quote, TeePlatform
from .history import GENESIS, Commitment, HistoryTree, IncrementalProof, MembershipProof
from .ledger import PLACEHOLDER, Block, Header
from .merkle import MerkleProof, mk_proof
from .mpt import MptProof, NodeStore, PartialState, Trie
from .vm import (
    AccountState,
    Receipt,
    Transaction,
    TxInput,
    TxParseError,
    execute,
    genesis_trie,
    touched_accounts,
)

log = logging.getLogger(__name__)


class OperatorError(Exception):
    pass


class NotFound(OperatorError, KeyError):
    pass


class RestoreError(OperatorError):
    """Enclave restoration aborted; ledger and chain are as they were."""


@dataclass(frozen=True)
class OperatorConfig:
    fl_vm_txs: int = 100
    fl_vm_time: float = 1.0
    fl_pb_blocks: int = 5
    fl_pb_time: float = 10.0

    def __post_init__(self) -> None:
        if min(self.fl_vm_txs, self.fl_vm_time, self.fl_pb_blocks, self.fl_pb_time) <= 0:
            raise ValueError("flush thresholds must be positive")


class LogicalClock:
    def __init__(self, start: float = 0.0):
        self._t = start

    def now(self) -> float:
        return self._t

    def advance(self, dt: float) -> float:
        if dt < 0:
            raise ValueError("time only moves forward")
        self._t += dt
        return self._t


class BlockStore:
    """Canonically encoded blocks, optionally mirrored to a directory.

    Files are named by zero-padded block id and written via a temporary file
    plus rename, so a crash never leaves a half-written block behind.
    """

    def __init__(self, directory: Optional[str | os.PathLike] = None):
        self._raw: list[bytes] = []
        self.directory = Path(directory) if directory is not None else None
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)
            for path in sorted(self.directory.glob("*.blk")):
                self._raw.append(path.read_bytes())

    def __len__(self) -> int:
        return len(self._raw)

    def _path(self, block_id: int) -> Path:
        return self.directory / f"{block_id:012d}.blk"

    def _write(self, block_id: int, data: bytes) -> None:
        if self.directory is None:
            return
        fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, self._path(block_id))

    def append(self, block: Block) -> None:
        self.append_raw(block.encode())

    def append_raw(self, data: bytes) -> None:
        self._raw.append(data)
        self._write(len(self._raw), data)

    def raw(self, block_id: int) -> bytes:
        if not 1 <= block_id <= len(self._raw):
            raise NotFound(f"block {block_id}")
        return self._raw[block_id - 1]

    def get(self, block_id: int) -> Block:
        return Block.decode(self.raw(block_id))

    def truncate(self, count: int) -> None:
        for block_id in range(count + 1, len(self._raw) + 1):
            if self.directory is not None:
                self._path(block_id).unlink(missing_ok=True)
        del self._raw[count:]

    def tamper(self, block_id: int, offset: int, mask: int = 0x01) -> None:
        """Flip bits of one stored byte (for fault-injection tests)."""
        data = bytearray(self.raw(block_id))
        data[offset % len(data)] ^= mask
        self._raw[block_id - 1] = bytes(data)
        self._write(block_id, bytes(data))


@dataclass
class ReceiptBundle:
    rcp: Receipt
    pi_rcp: MerkleProof
    hdr: Header
    pi_hdr: MembershipProof
    lroot_pb: Commitment
    lroot_cur: Commitment
    pi_inc: Optional[IncrementalProof] = None
    sigma: Optional[bytes] = None


@dataclass
class _CensTx:
    tx: Transaction
    etx: bytes
    idx: int


@dataclass
class _Inflight:
    txh: bytes
    kind: str
    target: Commitment
    enclave: Optional[Enclave] = None
    sigma: Optional[bytes] = None


class Operator:
    def __init__(
        self,
        chain: Chain,
        platform: TeePlatform,
        config: OperatorConfig = OperatorConfig(),
        enclave_config: EnclaveConfig = EnclaveConfig(),
        clock: Optional[LogicalClock] = None,
        entropy: Entropy = os.urandom,
        key: Optional[KeyPair] = None,
        store_dir: Optional[str | os.PathLike] = None,
    ):
        self.chain = chain
        self.config = config
        self.enclave_config = enclave_config
        self.clock = clock or LogicalClock()
        self._entropy = entropy
        self.key = key or keygen(PB, entropy)
        self.enclave = Enclave(platform, enclave_config, entropy)
        self.store = BlockStore(store_dir)
        self.history = HistoryTree()
        self.state = genesis_trie(enclave_config.genesis, Trie(NodeStore()))
        self.contract_id: Optional[bytes] = None

        self.txs_u: list[TxInput] = []
        self.blks_p = 0
        self.tau_vm = self.clock.now()
        self.tau_pb = self.clock.now()
        self.lroot_pb: Commitment = GENESIS
        self.sigma_last: Optional[bytes] = None
        self.sealed: Optional[bytes] = None
        self.cens_txs: list[_CensTx] = []
        self.rejected: list[TxInput] = []
        self.tx_index: dict[bytes, int] = {}
        self.flush_count = 0
        self.sync_count = 0
        self.faults: list[str] = []
        self._inflight: Optional[_Inflight] = None
        self._event_seq = 0

        # Misbehaviour switches for experiments.
        self.censored_clients: set[bytes] = set()
        self.deadbeat = False

    # -- setup

    def init(self) -> bytes:
        pk_tee, pk_pb = self.enclave.init()
        self.contract_id = self.chain.deploy(pk_pb, pk_tee, self.key.public)
        self._event_seq = len(self.chain.events)
        self.sealed = self.enclave.seal()
        return self.contract_id

    def quote(self) -> Quote:
        return self.enclave.quote()

    def issue_ticket(self, client: bytes, expiry: int) -> protocol.AccessTicket:
        return self.enclave.issue_ticket(client, expiry)

    @property
    def lroot_cur(self) -> Commitment:
        return self.history.commitment()

    @property
    def syncing(self) -> bool:
        return self._inflight is not None

    # -- normal operation

    def recv_tx(self, tx: TxInput) -> bool:
        """Accept a transaction into the cache; returns False if dropped."""
        if isinstance(tx, Transaction) and tx.sender in self.censored_clients:
            return False
        self.txs_u.append(tx)
        if len(self.txs_u) >= self.config.fl_vm_txs:
            self._try_block()
        return True

    def tick(self) -> None:
        """React to elapsed time, confirmed chain transactions and new events."""
        self._poll_inflight()
        now = self.clock.now()
        # The count threshold is rechecked too: a full cache may have waited
        # out a confirming sync.
        full = len(self.txs_u) >= self.config.fl_vm_txs
        if self.txs_u and (full or now - self.tau_vm >= self.config.fl_vm_time):
            self._try_block()
        if self.blks_p and now - self.tau_pb >= self.config.fl_pb_time:
            self.sync()
        self.process_events()

    def _try_block(self) -> None:
        if self._inflight is not None:
            return
        try:
            self.run_block()
        except EnclaveError as exc:
            self.faults.append(f"block cycle aborted: {exc}")
            log.warning("block cycle aborted: %s", exc)

    def next_inc_proof(self) -> tuple[IncrementalProof, Commitment]:
        return self.history.proof_template(PLACEHOLDER)

    def partial_state(self, txs: Sequence[TxInput]) -> PartialState:
        return self.state.extract(touched_accounts(txs))

    def run_block(self, force: bool = False) -> Optional[Block]:
        """One block cycle over the cached transactions.

        With ``force`` an empty block is produced when the cache is empty.
        """
        if self._inflight is not None:
            raise OperatorError("cannot produce blocks while a sync is confirming")
        if not self.txs_u and not force:
            return None
        txs = list(self.txs_u)
        template, tmp = self.next_inc_proof()
        out = self.enclave.exec(txs, self.partial_state(txs), template, tmp)
        self.state.merge(out.ps_new)
        blk = Block(out.hdr, tuple(out.txs), tuple(out.receipts))
        self.store.append(blk)
        self.history.add(out.hdr.hash())
        if self.history.commitment() != out.lroot_cur:
            raise OperatorError("local ledger diverged from the enclave")
        for t in out.txs:
            self.tx_index.setdefault(t.hash(), out.hdr.id)
        self.rejected.extend(out.txs_er)
        self.sigma_last = out.signature
        self.sealed = self.enclave.seal()
        self.txs_u = []
        self.tau_vm = self.clock.now()
        self.blks_p += 1
        if self.blks_p >= self.config.fl_pb_blocks:
            self.sync()
        return blk

    def sync(self) -> bool:
        """Post the latest signed transition; returns True once it is accepted."""
        if self._inflight is not None:
            return self._poll_inflight()
        if self.lroot_cur == self.lroot_pb or self.sigma_last is None:
            return False
        tx = make_tx(
            self.key, self.contract_id, "post_lroot",
            self.enclave.lroot_pb.to_tuple(), self.lroot_cur.to_tuple(), self.sigma_last,
        )
        self._inflight = _Inflight(self.chain.submit(tx), "post", self.lroot_cur)
        self.sync_count += 1
        return self._poll_inflight()

    def _poll_inflight(self) -> bool:
        job = self._inflight
        if job is None:
            return False
        rc = self.chain.receipt(job.txh)
        if rc is None:
            return False
        self._inflight = None
        if not rc.success or not rc.result:
            current = self.chain.contract(self.contract_id).lroot_pb
            self.faults.append(f"{job.kind} rejected ({rc.error or 'stale root'}); contract at v{current.version}")
            if job.kind == "replace":
                raise RestoreError(f"replacement rejected by the contract: {rc.error or 'stale root'}")
            return False
        if job.kind == "replace":
            self.enclave = job.enclave
            self.sigma_last = job.sigma
        self.enclave.flush(job.target)
        self.flush_count += 1
        self.lroot_pb = job.target
        self.blks_p = 0
        self.tau_pb = self.clock.now()
        self.sealed = self.enclave.seal()
        self.resolve_cens_txs()
        return True

    # -- reads

    def get_block(self, block_id: int) -> Block:
        return self.store.get(block_id)

    def get_account(self, aid: bytes) -> tuple[Optional[AccountState], MptProof]:
        raw = self.state.get(aid)
        return (None if raw is None else AccountState.decode(raw)), self.state.prove(aid)

    def serve_receipt(self, tx_hash: bytes) -> ReceiptBundle:
        block_id = self.tx_index.get(tx_hash)
        if block_id is None:
            raise NotFound(f"transaction {tx_hash.hex()[:16]} not in the ledger")
        blk = self.store.get(block_id)
        i = blk.find_tx(tx_hash)
        if i is None:
            raise OperatorError(f"block {block_id} no longer holds the transaction")
        pi_rcp = mk_proof(i, blk.rcp_leaves())
        if block_id <= self.lroot_pb.version:
            pi_hdr = self.history.mem_proof(block_id - 1, self.lroot_pb)
            return ReceiptBundle(blk.rcps[i], pi_rcp, blk.hdr, pi_hdr, self.lroot_pb, self.lroot_pb)
        cur = self.lroot_cur
        return ReceiptBundle(
            blk.rcps[i],
            pi_rcp,
            blk.hdr,
            self.history.mem_proof(block_id - 1, cur),
            self.lroot_pb,
            cur,
            self.history.inc_proof(self.lroot_pb, cur),
            self.sigma_last,
        )

    # -- censorship handling

    def process_events(self) -> None:
        if self.contract_id is None:
            return
        events = self.chain.events[self._event_seq :]
        self._event_seq = len(self.chain.events)
        if self.deadbeat:
            return
        for ev in events:
            if ev.contract != self.contract_id:
                continue
            if ev.topic == "CensTxSubmitted":
                self.on_cens_tx_event(ev.payload["etx"], ev.payload["idx"])
            elif ev.topic == "CensQrySubmitted":
                self.on_cens_qry_event(ev.payload["equery"], ev.payload["idx"])

    def _submit(self, function: str, *args) -> bool:
        rc = self.chain.receipt(self.chain.submit(make_tx(self.key, self.contract_id, function, *args)))
        if rc is not None and not rc.success:
            self.faults.append(f"{function} reverted: {rc.error}")
            return False
        return True

    def on_cens_tx_event(self, etx: bytes, idx: int) -> None:
        try:
            tx = Transaction.decode(self.enclave.decrypt(etx))
            valid = tx.verify_signature()
        except (EnclaveError, DecryptionError, TxParseError, ValueError):
            tx, valid = None, False
        if tx is None or not valid:
            sig, status = self.enclave.sign_tx(etx, None, None, None)
            self._submit("resolve_cens_tx", idx, status, sig)
            return
        self.cens_txs.append(_CensTx(tx, etx, idx))
        h = tx.hash()
        if h in self.tx_index:
            if self.tx_index[h] <= self.lroot_pb.version:
                self.resolve_cens_txs()
        elif all(not (isinstance(t, Transaction) and t.hash() == h) for t in self.txs_u):
            self.txs_u.append(tx)
            if len(self.txs_u) >= self.config.fl_vm_txs:
                self._try_block()

    def resolve_cens_txs(self) -> None:
        keep = []
        for ct in self.cens_txs:
            block_id = self.tx_index.get(ct.tx.hash())
            if block_id is None or block_id > self.lroot_pb.version:
                keep.append(ct)
                continue
            blk = self.store.get(block_id)
            i = blk.find_tx(ct.tx.hash())
            try:
                sig, status = self.enclave.sign_tx(
                    ct.etx,
                    mk_proof(i, blk.tx_leaves()),
                    blk.hdr,
                    self.history.mem_proof(block_id - 1, self.lroot_pb),
                )
            except EnclaveError as exc:
                self.faults.append(f"censored tx {ct.idx}: {exc}")
                keep.append(ct)
                continue
            self._submit("resolve_cens_tx", ct.idx, status, sig)
        self.cens_txs = keep

    def on_cens_qry_event(self, equery: bytes, idx: int) -> None:
        try:
            q = protocol.decode_query(self.enclave.decrypt(equery))
        except (EnclaveError, DecryptionError, protocol.QueryParseError):
            q = None
        try:
            if isinstance(q, protocol.ReadAs):
                raw = self.state.get(q.id_as)
                sig, status, edata = self.enclave.sign_qry_as(equery, raw, self.state.prove(q.id_as))
            elif isinstance(q, protocol.ReadTx) and 1 <= q.id_blk <= self.lroot_pb.version:
                blk = self.store.get(q.id_blk)
                pi = self.history.mem_proof(q.id_blk - 1, self.lroot_pb)
                sig, status, edata = self.enclave.sign_qry_tx(equery, blk, pi)
            else:
                sig, status, edata = self.enclave.sign_qry_tx(equery, None, None)
        except EnclaveError as exc:
            self.faults.append(f"censored query {idx}: {exc}")
            return
        self._submit("resolve_cens_qry", idx, status, edata, sig)

    # -- failure recovery

    def restore_failed_enc(self, platform: TeePlatform, entropy: Optional[Entropy] = None) -> Enclave:
        """Replace a permanently failed enclave with a fresh one on ``platform``.

        Replays every unsynced block through the new enclave, then posts the
        key rotation together with the signed transition.  On any divergence
        the ledger is put back as it was and nothing reaches the chain.
        """
        if self._inflight is not None:
            raise RestoreError("a chain transaction is still confirming")
        v = self.lroot_pb.version
        total = len(self.store)
        saved_raw = [self.store.raw(k) for k in range(v + 1, total + 1)]
        saved_leaves = [self.history.record(k) for k in range(v, total)]
        saved_root = self.state.root
        saved_index = dict(self.tx_index)
        try:
            unsynced = [Block.decode(r) for r in saved_raw]
        except (ValueError, TypeError, TxParseError) as exc:
            raise RestoreError(f"unsynced block unreadable: {exc}") from exc
        hdr_sync = self.store.get(v).hdr if v > 0 else None
        hdr_proof = self.history.mem_proof(v - 1, self.lroot_pb) if v > 0 else None

        self.store.truncate(v)
        self.history.truncate(v)
        self.state.root = hdr_sync.st_root if hdr_sync else self.enclave_config.genesis_root
        self.tx_index = {h: k for h, k in self.tx_index.items() if k <= v}

        def replay(blk: Block) -> Commitment:
            execute(blk.txs, self.state, self.enclave_config.step_budget)
            self.store.append(blk)
            self.history.add(blk.hdr.hash())
            for t in blk.txs:
                self.tx_index.setdefault(t.hash(), blk.hdr.id)
            return self.history.commitment()

        fresh = Enclave(platform, self.enclave_config, entropy or self._entropy)
        try:
            out = fresh.reinit(
                self.lroot_pb, unsynced, hdr_sync, hdr_proof,
                self.next_inc_proof, self.partial_state, replay,
            )
            if self.lroot_cur != out.lroot_cur:
                raise EnclaveError("operator and enclave disagree after replay")
        except EnclaveError as exc:
            self.store.truncate(v)
            for r in saved_raw:
                self.store.append_raw(r)
            self.history.truncate(v)
            for leaf in saved_leaves:
                self.history.add(leaf)
            self.state.root = saved_root
            self.tx_index = saved_index
            raise RestoreError(str(exc)) from exc

        tx = make_tx(
            self.key, self.contract_id, "replace_enc",
            out.pk_pb, out.pk_tee, out.lroot_pb.to_tuple(), out.lroot_cur.to_tuple(), out.signature,
        )
        self._inflight = _Inflight(self.chain.submit(tx), "replace", out.lroot_cur, fresh, out.signature)
        self._poll_inflight()
        return fresh
