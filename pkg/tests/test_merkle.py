import hashlib

import pytest
from hypothesis import given, strategies as st

from veriledger.merkle import EMPTY_ROOT, MerkleProof, mk_proof, mk_root, mk_verify


def naive_root(elements):
    """Pair adjacent nodes level by level, promoting an unpaired last node."""
    h = lambda b: hashlib.sha256(b).digest()
    if not elements:
        return h(b"\x00")
    level = [h(b"\x01" + e) for e in elements]
    while len(level) > 1:
        nxt = []
        for i in range(0, len(level), 2):
            if i + 1 < len(level):
                nxt.append(h(b"\x02" + level[i] + level[i + 1]))
            else:
                nxt.append(level[i])
        level = nxt
    return level[0]


elements = st.lists(st.binary(max_size=12), max_size=40)


@given(elements)
def test_root_matches_oracle(els):
    assert mk_root(els) == naive_root(els)


def test_empty_root():
    assert mk_root([]) == EMPTY_ROOT == hashlib.sha256(b"\x00").digest()


@given(st.lists(st.binary(max_size=8), min_size=1, max_size=40), st.data())
def test_every_proof_verifies(els, data):
    i = data.draw(st.integers(0, len(els) - 1))
    root = mk_root(els)
    p = mk_proof(i, els)
    assert mk_verify(p, els[i], root)
    assert MerkleProof.from_bytes(p.to_bytes()) == p
    assert not mk_verify(p, els[i] + b"x", root)


def test_exhaustive_small():
    for n in range(1, 20):
        els = [bytes([k]) for k in range(n)]
        root = mk_root(els)
        for i in range(n):
            p = mk_proof(i, els)
            assert p.verify(els[i], root)
            for j in range(n):
                if j != i:
                    assert not p.verify(els[j], root)


def test_proof_for_other_position_or_size_fails():
    els = [bytes([k]) for k in range(7)]
    root = mk_root(els)
    p = mk_proof(3, els)
    assert not mk_verify(MerkleProof(2, p.size, p.siblings), els[3], root)
    assert not mk_verify(MerkleProof(3, 4, p.siblings), els[3], root)
    flipped = tuple((s, 1 - side) for s, side in p.siblings)
    assert not mk_verify(MerkleProof(3, 7, flipped), els[3], root)


def test_leaf_cannot_pose_as_node():
    els = [b"a", b"b"]
    root = mk_root(els)
    h = lambda b: hashlib.sha256(b).digest()
    fake = h(b"\x01a") + h(b"\x01b")
    assert mk_root([fake]) != root


def test_index_out_of_range():
    with pytest.raises(IndexError):
        mk_proof(2, [b"a", b"b"])


def test_malformed_bytes():
    with pytest.raises(ValueError):
        MerkleProof.from_bytes(b"123")
