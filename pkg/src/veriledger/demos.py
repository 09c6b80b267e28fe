"""Narrated end-to-end demonstrations used by the CLI.

Each demo returns ``(transcript lines, result dict)``; the result is what the
tests and ``--out`` consume.
"""

from __future__ import annotations

from .operator import OperatorConfig, RestoreError
from .protocol import PENDING
from .world import World


def _short(b: bytes) -> str:
    return b.hex()[:16]


def init_demo(seed: int = 0) -> tuple[list[str], dict]:
    w = World(seed=seed, clients=2)
    c = w.contract
    lines = [
        f"deployed ledger contract {_short(w.contract_id)}",
        f"enclave measurement {_short(w.measurement)}",
        f"genesis state root {_short(w.enclave_config.genesis_root)}",
        f"enclave keys pb={_short(c.active_pb)} tee={_short(c.active_tee)}",
    ]
    attested = [cl.attest() for cl in w.clients]
    lines.append(f"client attestation: {attested}")
    return lines, {
        "contract": w.contract_id,
        "measurement": w.measurement,
        "genesis_root": w.enclave_config.genesis_root,
        "pk_pb": c.active_pb,
        "pk_tee": c.active_tee,
        "attested": attested,
    }


def censor_demo(seed: int = 0) -> tuple[list[str], dict]:
    w = World(seed=seed, clients=2, config=OperatorConfig(fl_vm_txs=100, fl_pb_blocks=100))
    op = w.operator
    alice, bob = w.clients
    lines = []
    alice.request_ticket(expiry=10_000)
    lines.append("alice obtains an access ticket from the enclave")
    op.censored_clients.add(alice.public)
    tx = alice.transfer(bob.id, 25)
    accepted = alice.submit(tx)
    lines.append(f"operator censors alice; direct submission accepted={accepted}")
    idx = alice.escalate_tx(tx)
    lines.append(f"alice posts the encrypted tx to the contract as request {idx}")
    status = alice.check_resolution(idx).status
    lines.append(f"on-chain status before the operator reacts: {status}")
    op.tick()
    op.run_block()
    lines.append("operator sees the request event and must include the tx in the next block")
    op.sync()
    res = alice.check_resolution(idx)
    lines.append(f"after sync the contract records status {res.status} (signature verified={res.verified})")
    bundle, ok = alice.get_receipt(tx)
    lines.append(f"alice fetches the receipt for her tx: verified={ok}, confidence={alice.confidence(bundle)}")
    q = alice.escalate_qry(alice.read_as_query(bob.id))
    op.tick()
    qres = alice.check_resolution(q)
    lines.append(f"alice queries bob's account through the contract: status {qres.status}")
    return lines, {
        "tx_status": res.status,
        "tx_verified": res.verified,
        "receipt_verified": ok,
        "query_status": qres.status,
        "resolved": res.status != PENDING and qres.status != PENDING,
    }


def tamper_demo(seed: int = 0) -> tuple[list[str], dict]:
    w = World(seed=seed, clients=2, config=OperatorConfig(fl_vm_txs=1, fl_pb_blocks=100))
    op = w.operator
    alice, bob = w.clients
    tx = alice.transfer(bob.id, 7)
    alice.submit(tx)
    op.sync()
    bundle, ok = alice.get_receipt(tx)
    lines = [f"alice's transfer is in block {bundle.hdr.id}; receipt verified={ok}"]
    block_id = op.tx_index[tx.hash()]
    raw = op.store.raw(block_id)
    offset = len(raw) - 40
    op.store.tamper(block_id, offset)
    lines.append(f"operator flips one bit at byte {offset} of stored block {block_id}")
    try:
        bundle2, ok2 = alice.get_receipt(tx)
    except Exception as exc:
        ok2 = False
        lines.append(f"operator cannot even serve the receipt: {type(exc).__name__}")
    else:
        lines.append(f"tampered receipt verified={ok2}")
    lines.append("client verification failed" if not ok2 else "client verification unexpectedly passed")
    return lines, {"before": ok, "after": ok2, "detected": ok and not ok2}


def failover_demo(seed: int = 0, unsynced: int = 3) -> tuple[list[str], dict]:
    w = World(seed=seed, clients=2, config=OperatorConfig(fl_vm_txs=1, fl_pb_blocks=100))
    op = w.operator
    alice, bob = w.clients
    alice.submit(alice.transfer(bob.id, 1))
    op.sync()
    for i in range(unsynced):
        alice.submit(alice.transfer(bob.id, i + 2))
    lines = [
        f"ledger has {len(op.store)} blocks, {unsynced} not yet anchored (chain version {w.contract.lroot_pb.version})",
    ]
    before = op.lroot_cur
    old_keys = len(w.contract.pk_pb)
    w.kill_enclave()
    lines.append("enclave platform fails")
    try:
        w.restore()
        restored = True
        lines.append("operator starts a fresh enclave, which replays the unsynced blocks and signs the transition")
    except RestoreError as exc:
        restored = False
        lines.append(f"restore aborted: {exc}")
    c = w.contract
    attested = alice.attest()
    lines.append(f"contract now lists {len(c.pk_pb)} enclave keys (was {old_keys}); alice re-attests: {attested}")
    lines.append(f"contract root v{c.lroot_pb.version} matches the pre-failure ledger: {c.lroot_pb == before}")
    return lines, {
        "restored": restored,
        "keys_before": old_keys,
        "keys_after": len(c.pk_pb),
        "roots_match": c.lroot_pb == before and op.lroot_cur == before,
        "attested": attested,
    }
