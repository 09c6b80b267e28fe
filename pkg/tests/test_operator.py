import pytest

from veriledger.ledger import Block
from veriledger.operator import BlockStore, NotFound, OperatorConfig, OperatorError, RestoreError
from veriledger.vm import Transaction, execute, genesis_trie
from veriledger.world import World


def make_world(**cfg):
    delay = cfg.pop("delay", 0)
    return World(seed="op", clients=3, config=OperatorConfig(**cfg), delay=delay)


def test_batches_by_count():
    w = make_world(fl_vm_txs=3, fl_pb_blocks=100)
    a, b, _ = w.clients
    for i in range(2):
        a.submit(a.transfer(b.id, 1))
    assert len(w.operator.store) == 0
    a.submit(a.transfer(b.id, 1))
    assert len(w.operator.store) == 1 and len(w.operator.store.get(1).txs) == 3


def test_batches_by_time_and_syncs_by_time():
    w = make_world(fl_vm_txs=100, fl_vm_time=1.0, fl_pb_blocks=100, fl_pb_time=5.0)
    a, b, _ = w.clients
    a.submit(a.transfer(b.id, 1))
    w.advance(0.9)
    assert len(w.operator.store) == 0
    w.advance(0.2)
    assert len(w.operator.store) == 1
    assert w.contract.lroot_pb.version == 0
    w.advance(5.0)
    assert w.contract.lroot_pb.version == 1


def test_syncs_every_n_blocks():
    w = make_world(fl_vm_txs=1, fl_pb_blocks=3)
    a, b, _ = w.clients
    for i in range(7):
        a.submit(a.transfer(b.id, 1))
        assert w.contract.lroot_pb.version == 3 * ((i + 1) // 3)
    assert w.operator.sync_count == 2


def test_block_production_pauses_while_sync_confirms():
    w = make_world(fl_vm_txs=1, fl_pb_blocks=2, delay=2)
    a, b, _ = w.clients
    op = w.operator
    a.submit(a.transfer(b.id, 1))
    a.submit(a.transfer(b.id, 1))
    assert op.syncing and len(op.store) == 2
    a.submit(a.transfer(b.id, 1))
    assert len(op.store) == 2 and len(op.txs_u) == 1
    with pytest.raises(OperatorError):
        op.run_block()
    w.chain.tick(2)
    op.tick()
    assert not op.syncing and w.contract.lroot_pb.version == 2 == op.enclave.lroot_pb.version
    op.tick()
    assert len(op.store) == 3


def test_state_matches_full_replay_oracle():
    w = make_world(fl_vm_txs=2, fl_pb_blocks=2)
    a, b, c = w.clients
    for i in range(9):
        a.submit(a.transfer(b.id, i))
        b.submit(b.transfer(c.id, i + 1))
    op = w.operator
    oracle = genesis_trie(w.enclave_config.genesis)
    for k in range(1, len(op.store) + 1):
        blk = op.store.get(k)
        assert blk.is_consistent()
        assert list(execute(blk.txs, oracle)) == list(blk.rcps)
        assert oracle.root == blk.hdr.st_root
    assert oracle.root == op.state.root


def test_bad_inputs_are_screened():
    w = make_world(fl_vm_txs=3, fl_pb_blocks=100)
    a, b, _ = w.clients
    t = a.transfer(b.id, 1)
    forged = Transaction(t.sender, t.nonce, t.kind, t.recipient, 99, t.payload, t.signature)
    w.operator.recv_tx(forged)
    w.operator.recv_tx(b"\x00junk")
    a.submit(t)
    blk = w.operator.store.get(1)
    assert list(blk.txs) == [t]
    assert w.operator.rejected == [forged, b"\x00junk"]


def test_censored_client_is_dropped():
    w = make_world(fl_vm_txs=1)
    a, b, _ = w.clients
    w.operator.censored_clients.add(a.public)
    assert not a.submit(a.transfer(b.id, 1))
    assert len(w.operator.store) == 0


def test_unknown_receipt():
    w = make_world()
    with pytest.raises(NotFound):
        w.operator.serve_receipt(bytes(32))


def test_block_store_mirrors_to_disk(tmp_path):
    w = World(seed="disk", clients=2, config=OperatorConfig(fl_vm_txs=1), store_dir=tmp_path)
    a, b = w.clients
    for _ in range(3):
        a.submit(a.transfer(b.id, 1))
    files = sorted(p.name for p in tmp_path.glob("*.blk"))
    assert files == [f"{i:012d}.blk" for i in (1, 2, 3)]
    again = BlockStore(tmp_path)
    assert len(again) == 3 and again.get(2) == w.operator.store.get(2)
    w.operator.store.tamper(2, 10)
    assert BlockStore(tmp_path).raw(2) != again.raw(2)
    again.truncate(1)
    assert sorted(p.name for p in tmp_path.glob("*.blk")) == ["000000000001.blk"]
    assert not list(tmp_path.glob("*.tmp"))


def test_block_encoding_roundtrip():
    w = make_world(fl_vm_txs=2)
    a, b, _ = w.clients
    a.submit(a.transfer(b.id, 1))
    a.submit(a.transfer(b.id, 2))
    blk = w.operator.store.get(1)
    assert Block.decode(blk.encode()) == blk


def test_restore_refused_while_sync_in_flight():
    w = make_world(fl_vm_txs=1, fl_pb_blocks=1, delay=5)
    a, b, _ = w.clients
    a.submit(a.transfer(b.id, 1))
    assert w.operator.syncing
    w.kill_enclave()
    with pytest.raises(RestoreError):
        w.restore()


def test_restore_rolls_back_on_tamper():
    w = make_world(fl_vm_txs=1, fl_pb_blocks=100)
    a, b, _ = w.clients
    a.submit(a.transfer(b.id, 1))
    w.operator.sync()
    a.submit(a.transfer(b.id, 2))
    a.submit(a.transfer(b.id, 3))
    op = w.operator
    before = (op.lroot_cur, op.state.root, dict(op.tx_index), [op.store.raw(k) for k in (1, 2, 3)])
    op.store.tamper(3, 200)
    tampered = op.store.raw(3)
    events = len(w.chain.events)
    w.kill_enclave()
    with pytest.raises(RestoreError):
        w.restore()
    assert (op.lroot_cur, op.state.root, op.tx_index) == before[:3]
    assert [op.store.raw(k) for k in (1, 2)] == before[3][:2] and op.store.raw(3) == tampered
    assert len(w.chain.events) == events and len(w.contract.pk_pb) == 1
