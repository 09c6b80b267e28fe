"""Independent reference implementations used to check the real ones."""

import hashlib
import struct


def h(b: bytes) -> bytes:
    return hashlib.sha256(b).digest()


def history_root(records: list[bytes]) -> bytes:
    """Recursive split at the largest power of two below n."""
    if not records:
        return bytes(32)

    def mth(rs):
        if len(rs) == 1:
            return h(b"\x01" + rs[0])
        k = 1
        while k * 2 < len(rs):
            k *= 2
        return h(b"\x02" + mth(rs[:k]) + mth(rs[k:]))

    return mth(records)


def _nibbles(key: bytes) -> tuple:
    return tuple(n for b in key for n in (b >> 4, b & 15))


def _hp(path: tuple, leaf: bool) -> bytes:
    flag = 2 * leaf + len(path) % 2
    nibs = (flag,) + path if len(path) % 2 else (flag, 0) + path
    return bytes(16 * nibs[i] + nibs[i + 1] for i in range(0, len(nibs), 2))


def mpt_root(items: dict[bytes, bytes]) -> bytes:
    """Root computed directly from the key set, with no incremental updates.

    Node layouts are written out here from the format description rather
    than taken from the trie module.
    """
    if not items:
        return h(b"")
    pairs = sorted((_nibbles(k), v) for k, v in items.items())

    def build(group, depth) -> bytes:
        if len(group) == 1:
            path, value = group[0]
            hp = _hp(path[depth:], True)
            return h(b"\x01" + bytes([len(hp)]) + hp + struct.pack(">I", len(value)) + value)
        first, last = group[0][0], group[-1][0]
        n = 0
        while first[depth + n] == last[depth + n]:
            n += 1
        if n:
            hp = _hp(first[depth : depth + n], False)
            return h(b"\x02" + bytes([len(hp)]) + hp + build(group, depth + n))
        bitmap, refs = 0, []
        i = 0
        while i < len(group):
            nib = group[i][0][depth]
            j = i
            while j < len(group) and group[j][0][depth] == nib:
                j += 1
            bitmap |= 1 << nib
            refs.append(build(group[i:j], depth + 1))
            i = j
        return h(b"\x03" + struct.pack(">H", bitmap) + b"".join(refs) + b"\x00")

    return build(pairs, 0)
