import math
import os

import pytest
from hypothesis import given, strategies as st

from oracles import history_root
from veriledger.history import (
    GENESIS,
    Commitment,
    HistoryError,
    HistoryTree,
    IncrementalProof,
    MembershipProof,
    UnknownCommitment,
)


def records(n, salt=b""):
    from hashlib import sha256

    return [sha256(salt + i.to_bytes(4, "big")).digest() for i in range(n)]


def bound(n):
    return 2 * math.ceil(math.log2(n)) + 2 if n > 1 else 2


def test_roots_match_oracle():
    rs = records(70)
    t = HistoryTree()
    assert t.root() == history_root([])
    for i, r in enumerate(rs):
        t.add(r)
        assert t.root() == history_root(rs[: i + 1])
    for v in range(71):
        assert t.root(v) == history_root(rs[:v])


def test_exhaustive_incremental_proofs():
    rs = records(24)
    t = HistoryTree(rs)
    for j in range(25):
        new = t.commitment(j)
        for i in range(j + 1):
            old = t.commitment(i)
            p = t.inc_proof(old, new)
            assert p.verify(old, new)
            assert p.size() <= bound(max(j, 1))
            assert IncrementalProof.from_bytes(p.to_bytes()).verify(old, new)


def test_exhaustive_membership_proofs():
    rs = records(24)
    t = HistoryTree(rs)
    for v in range(1, 25):
        c = t.commitment(v)
        for i in range(v):
            p = t.mem_proof(i, c)
            assert p.verify(i, rs[i], c)
            assert p.size() <= bound(v)
            assert not p.verify(i, rs[(i + 1) % v] if v > 1 else b"\x00" * 32, c)
            assert MembershipProof.from_bytes(p.to_bytes()).verify(i, rs[i], c)


def test_single_leaf_tampering_detected():
    n = 13
    rs = records(n)
    t = HistoryTree(rs)
    for k in range(n):
        forged = list(rs)
        forged[k] = records(1, b"forged")[0]
        ft = HistoryTree(forged)
        for j in range(1, n + 1):
            new = t.commitment(j)
            for i in range(j + 1):
                p = ft.inc_proof(ft.commitment(i), ft.commitment(j))
                ok = p.verify(t.commitment(i), new)
                assert ok == (k >= j)
            if k < j:
                assert not ft.mem_proof(k, ft.commitment(j)).verify(k, forged[k], new)


def test_corrupted_proof_nodes_rejected():
    t = HistoryTree(records(21))
    old, new = t.commitment(6), t.commitment(21)
    p = t.inc_proof(old, new)
    for coord in p.nodes:
        nodes = dict(p.nodes)
        nodes[coord] = bytes(32)
        assert not IncrementalProof(6, 21, nodes).verify(old, new)
        nodes = dict(p.nodes)
        del nodes[coord]
        assert not IncrementalProof(6, 21, nodes).verify(old, new)
    m = t.mem_proof(4, new)
    for coord in m.nodes:
        nodes = dict(m.nodes)
        nodes[coord] = bytes(32)
        assert not MembershipProof(4, 21, nodes).verify(4, t.record(4), new)


def test_version_mismatch_rejected():
    t = HistoryTree(records(10))
    p = t.inc_proof(t.commitment(3), t.commitment(8))
    assert not p.verify(t.commitment(4), t.commitment(8))
    assert not p.verify(t.commitment(3), t.commitment(9))
    assert not p.verify(t.commitment(8), t.commitment(3))
    with pytest.raises(HistoryError):
        t.inc_proof(t.commitment(8), t.commitment(3))
    with pytest.raises(UnknownCommitment):
        t.inc_proof(Commitment(3, bytes(32)), t.commitment(8))


def test_with_last_leaf_and_template():
    t = HistoryTree(records(9))
    before = t.commitment()
    ph = bytes(32)
    template, tmp = t.proof_template(ph)
    assert t.commitment() == before and len(t) == 9
    assert template.verify(before, tmp)
    rec = records(1, b"real")[0]
    t.add(rec)
    assert template.with_last_leaf(rec).derive_new_root() == t.root()
    assert template.with_last_leaf(rec).verify(before, t.commitment())


def test_truncate_restores_roots():
    rs = records(17)
    t = HistoryTree(rs)
    t.truncate(6)
    assert t.commitment() == HistoryTree(rs[:6]).commitment()
    for r in rs[6:]:
        t.add(r)
    assert t.root() == history_root(rs)


def test_genesis():
    t = HistoryTree()
    assert t.commitment() == GENESIS
    p = t.inc_proof(GENESIS, GENESIS)
    assert p.verify(GENESIS, GENESIS)


def test_records_must_be_digests():
    with pytest.raises(ValueError):
        HistoryTree().add(b"short")


@given(st.integers(1, 200), st.data())
def test_random_proofs(n, data):
    rs = [os.urandom(32) for _ in range(n)]
    t = HistoryTree(rs)
    j = data.draw(st.integers(1, n))
    i = data.draw(st.integers(0, j))
    k = data.draw(st.integers(0, j - 1))
    assert t.root(j) == history_root(rs[:j])
    p = t.inc_proof(t.commitment(i), t.commitment(j))
    assert p.verify(t.commitment(i), t.commitment(j)) and p.size() <= bound(j)
    m = t.mem_proof(k, t.commitment(j))
    assert m.verify(k, rs[k], t.commitment(j)) and m.size() <= bound(j)
