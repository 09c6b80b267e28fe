import json

import pytest

from veriledger import protocol
from veriledger.client import ANCHORED, PROMISED, ClientError, ProtocolViolation
from veriledger.chain import make_tx
from veriledger.crypto import sign
from veriledger.history import Commitment
from veriledger.operator import OperatorConfig
from veriledger.vm import MAX_PAYLOAD
from veriledger.world import World


def test_anchored_and_promised_receipts(world):
    a, b, _ = world.clients
    op = world.operator
    t1 = a.transfer(b.id, 1)
    a.submit(t1)
    op.sync()
    t2 = a.transfer(b.id, 2)
    a.submit(t2)
    bundle1, ok1 = a.get_receipt(t1)
    bundle2, ok2 = a.get_receipt(t2)
    assert ok1 and ok2
    assert a.confidence(bundle1) == ANCHORED and bundle1.pi_inc is None
    assert a.confidence(bundle2) == PROMISED and bundle2.sigma is not None
    assert not a.verify_receipt(bundle1, t2)


def test_promised_receipt_needs_signature_and_proof(world):
    a, b, _ = world.clients
    t = a.transfer(b.id, 1)
    a.submit(t)
    bundle = world.operator.serve_receipt(t.hash())
    bundle.sigma = sign(world.operator.key, protocol.lroot_message(bundle.lroot_pb, bundle.lroot_cur))
    assert not a.verify_receipt(bundle, t)
    bundle = world.operator.serve_receipt(t.hash())
    bundle.pi_inc = None
    assert not a.verify_receipt(bundle, t)


def test_stale_anchor_rejected(world):
    a, b, _ = world.clients
    t = a.transfer(b.id, 1)
    a.submit(t)
    bundle = world.operator.serve_receipt(t.hash())
    world.operator.sync()
    assert not a.verify_receipt(bundle, t)
    assert a.get_receipt(t)[1]


def test_payload_cap(world):
    a = world.clients[0]
    with pytest.raises(ClientError):
        a.call(bytes(32), b"\x00" * (MAX_PAYLOAD + 1))


def test_sync_nonce(world):
    a, b, _ = world.clients
    a.submit(a.transfer(b.id, 1))
    a.nonce = 0
    assert a.sync_nonce() == 1


def test_escalation_needs_ticket(world):
    with pytest.raises(ClientError):
        world.clients[0].escalate_raw(b"x")


def test_attestation_after_key_rotation():
    w = World(seed="rot", clients=2, config=OperatorConfig(fl_vm_txs=1, fl_pb_blocks=100))
    a, b = w.clients
    a.submit(a.transfer(b.id, 1))
    assert a.attest()
    w.kill_enclave()
    assert not a.attest()
    w.restore()
    assert a.attest() and a.pk_pb == w.operator.enclave.pk_pb


def test_forged_resolution_is_flagged():
    w = World(seed="forge", clients=2, config=OperatorConfig(fl_vm_txs=100, fl_pb_blocks=100))
    a, b = w.clients
    op = w.operator
    a.request_ticket(1000)
    op.deadbeat = True
    idx = a.escalate_raw(b"\x02" * 90, query=True)
    assert a.check_resolution(idx).pending
    evidence = json.loads(a.censorship_evidence_json(idx))
    assert evidence["request"] == idx and evidence["kind"] == "qry"
    # A real enclave answer whose data the client cannot decrypt.
    sig, status, edata = op.enclave.sign_qry_tx(b"\x02" * 90, None, None)
    assert status == protocol.PARSING_ERROR
    tx = make_tx(op.key, w.contract_id, "resolve_cens_qry", idx, status, edata, sig)
    assert w.chain.receipt(w.chain.submit(tx)).success
    assert a.check_resolution(idx).status == protocol.PARSING_ERROR
    with pytest.raises(ClientError):
        a.censorship_evidence(idx)


def test_unknown_request(world):
    with pytest.raises(ClientError):
        world.clients[0].check_resolution(5)
