"""Canonical binary encoding used for everything that is hashed or signed.

Values are tagged and length-prefixed, integers are big-endian two's
complement, containers keep their element order (dict entries are sorted by
their encoded key).  The encoding is injective, so equal encodings imply equal
values and hashes over encodings are unambiguous.

    None  -> b"N"
    bool  -> b"T" | b"F"
    int   -> b"I" + u32 len + signed big-endian bytes (minimal)
    bytes -> b"B" + u32 len + data
    str   -> b"S" + u32 len + utf-8
    list  -> b"L" + u32 count + items
    dict  -> b"D" + u32 count + (key, value) pairs sorted by encoded key
"""

from __future__ import annotations

import struct
from typing import Any

_U32 = struct.Struct(">I")


class DecodeError(ValueError):
    """Raised when bytes are not a well-formed canonical encoding."""


def _int_bytes(n: int) -> bytes:
    if n == 0:
        return b""
    length = (n + (n < 0)).bit_length() // 8 + 1
    return n.to_bytes(length, "big", signed=True)


def _encode_into(obj: Any, out: list[bytes]) -> None:
    if obj is None:
        out.append(b"N")
    elif obj is True:
        out.append(b"T")
    elif obj is False:
        out.append(b"F")
    elif isinstance(obj, int):
        raw = _int_bytes(obj)
        out.append(b"I" + _U32.pack(len(raw)) + raw)
    elif isinstance(obj, (bytes, bytearray, memoryview)):
        raw = bytes(obj)
        out.append(b"B" + _U32.pack(len(raw)) + raw)
    elif isinstance(obj, str):
        raw = obj.encode("utf-8")
        out.append(b"S" + _U32.pack(len(raw)) + raw)
    elif isinstance(obj, (list, tuple)):
        out.append(b"L" + _U32.pack(len(obj)))
        for item in obj:
            _encode_into(item, out)
    elif isinstance(obj, dict):
        pairs = sorted((encode(k), encode(v)) for k, v in obj.items())
        out.append(b"D" + _U32.pack(len(pairs)))
        for k, v in pairs:
            out.append(k)
            out.append(v)
    else:
        raise TypeError(f"cannot encode {type(obj).__name__}")


def encode(obj: Any) -> bytes:
    out: list[bytes] = []
    _encode_into(obj, out)
    return b"".join(out)


def _decode_at(data: bytes, pos: int) -> tuple[Any, int]:
    if pos >= len(data):
        raise DecodeError("truncated input")
    tag = data[pos : pos + 1]
    pos += 1
    if tag == b"N":
        return None, pos
    if tag == b"T":
        return True, pos
    if tag == b"F":
        return False, pos
    if tag not in (b"I", b"B", b"S", b"L", b"D"):
        raise DecodeError(f"unknown tag {tag!r} at offset {pos - 1}")
    if pos + 4 > len(data):
        raise DecodeError("truncated length")
    (n,) = _U32.unpack_from(data, pos)
    pos += 4
    if tag in (b"I", b"B", b"S"):
        end = pos + n
        if end > len(data):
            raise DecodeError("truncated payload")
        raw = data[pos:end]
        if tag == b"B":
            return raw, end
        if tag == b"S":
            try:
                return raw.decode("utf-8"), end
            except UnicodeDecodeError as exc:
                raise DecodeError("invalid utf-8") from exc
        value = int.from_bytes(raw, "big", signed=True) if raw else 0
        if _int_bytes(value) != raw:
            raise DecodeError("non-minimal integer")
        return value, end
    if tag == b"L":
        items = []
        for _ in range(n):
            item, pos = _decode_at(data, pos)
            items.append(item)
        return items, pos
    result = {}
    last = None
    for _ in range(n):
        start = pos
        key, pos = _decode_at(data, pos)
        key_raw = data[start:pos]
        if last is not None and key_raw <= last:
            raise DecodeError("dict keys not in canonical order")
        last = key_raw
        value, pos = _decode_at(data, pos)
        try:
            result[key] = value
        except TypeError as exc:
            raise DecodeError("unhashable dict key") from exc
    return result, pos


def decode(data: bytes) -> Any:
    """Inverse of :func:`encode`. Lists come back as ``list``."""
    value, pos = _decode_at(bytes(data), 0)
    if pos != len(data):
        raise DecodeError("trailing bytes")
    return value
