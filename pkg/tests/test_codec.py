import pytest
from hypothesis import given, strategies as st

from veriledger import codec

values = st.recursive(
    st.none() | st.booleans() | st.integers() | st.binary(max_size=40) | st.text(max_size=20),
    lambda inner: st.lists(inner, max_size=5) | st.dictionaries(st.text(max_size=5), inner, max_size=5),
    max_leaves=20,
)


def normalize(v):
    if isinstance(v, tuple):
        return [normalize(x) for x in v]
    if isinstance(v, list):
        return [normalize(x) for x in v]
    if isinstance(v, dict):
        return {k: normalize(x) for k, x in v.items()}
    return v


@given(values)
def test_roundtrip(v):
    assert codec.decode(codec.encode(v)) == normalize(v)


@given(values, values)
def test_injective(a, b):
    if normalize(a) != normalize(b) or type(a) is not type(b):
        if normalize(a) != normalize(b):
            assert codec.encode(a) != codec.encode(b)


def test_known_encodings():
    assert codec.encode(None) == b"N"
    assert codec.encode(True) == b"T"
    assert codec.encode(0) == b"I\x00\x00\x00\x00"
    assert codec.encode(255) == b"I\x00\x00\x00\x02\x00\xff"
    assert codec.encode(-1) == b"I\x00\x00\x00\x01\xff"
    assert codec.encode(b"ab") == b"B\x00\x00\x00\x02ab"
    assert codec.encode(["x"]) == b"L\x00\x00\x00\x01S\x00\x00\x00\x01x"


def test_dict_order_is_canonical():
    assert codec.encode({"b": 1, "a": 2}) == codec.encode({"a": 2, "b": 1})


def test_bool_is_not_int():
    assert codec.encode(True) != codec.encode(1)


@pytest.mark.parametrize(
    "data",
    [b"", b"X", b"I\x00\x00", b"B\x00\x00\x00\x05ab", b"NN", b"I\x00\x00\x00\x02\x00\x01", b"S\x00\x00\x00\x01\xff"],
)
def test_malformed_rejected(data):
    with pytest.raises(codec.DecodeError):
        codec.decode(data)


def test_unsorted_dict_rejected():
    good = codec.encode({"a": 1, "b": 2})
    ka, va = codec.encode("a"), codec.encode(1)
    kb, vb = codec.encode("b"), codec.encode(2)
    bad = good[:5] + kb + vb + ka + va
    with pytest.raises(codec.DecodeError):
        codec.decode(bad)


def test_unencodable():
    with pytest.raises(TypeError):
        codec.encode(1.5)
