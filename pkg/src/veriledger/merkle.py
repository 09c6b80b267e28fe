"""Plain Merkle tree over an ordered list of byte strings.

Hashing is domain separated: ``0x00`` for the empty tree, ``0x01 || x`` for
leaves and ``0x02 || left || right`` for interior nodes.  An unpaired node at
the end of a level is promoted unchanged to the next level.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

from .crypto import DIGEST_SIZE, digest

LEAF = b"\x01"
NODE = b"\x02"
EMPTY_ROOT = digest(b"\x00")

LEFT = 0
RIGHT = 1


def leaf_hash(element: bytes) -> bytes:
    return digest(LEAF + element)


def node_hash(left: bytes, right: bytes) -> bytes:
    return digest(NODE + left + right)


def _levels(elements: Sequence[bytes]) -> list[list[bytes]]:
    level = [leaf_hash(e) for e in elements]
    levels = [level]
    while len(level) > 1:
        nxt = [node_hash(level[i], level[i + 1]) for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        levels.append(nxt)
        level = nxt
    return levels


def mk_root(elements: Sequence[bytes]) -> bytes:
    if not elements:
        return EMPTY_ROOT
    return _levels(elements)[-1][0]


@dataclass(frozen=True)
class MerkleProof:
    index: int
    size: int
    siblings: tuple[tuple[bytes, int], ...]

    def verify(self, element: bytes, root: bytes) -> bool:
        return mk_verify(self, element, root)

    def to_bytes(self) -> bytes:
        parts = [struct.pack(">QQI", self.index, self.size, len(self.siblings))]
        parts += [d + bytes([side]) for d, side in self.siblings]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "MerkleProof":
        if len(data) < 20:
            raise ValueError("merkle proof too short")
        index, size, count = struct.unpack_from(">QQI", data)
        body = data[20:]
        if len(body) != count * (DIGEST_SIZE + 1):
            raise ValueError("merkle proof length mismatch")
        step = DIGEST_SIZE + 1
        siblings = tuple(
            (body[i : i + DIGEST_SIZE], body[i + DIGEST_SIZE]) for i in range(0, len(body), step)
        )
        return cls(index, size, siblings)


def _path(index: int, size: int) -> list[tuple[int, int]]:
    """Sibling positions ``(sibling_index, side)`` from leaf to root.

    Levels where the node is promoted contribute nothing.
    """
    out = []
    while size > 1:
        if index % 2:
            out.append((index - 1, LEFT))
        elif index + 1 < size:
            out.append((index + 1, RIGHT))
        index //= 2
        size = (size + 1) // 2
    return out


def mk_proof(index: int, elements: Sequence[bytes]) -> MerkleProof:
    if not 0 <= index < len(elements):
        raise IndexError(f"leaf index {index} out of range for {len(elements)} elements")
    levels = _levels(elements)
    siblings = []
    i = index
    size = len(elements)
    for level in levels[:-1]:
        if i % 2:
            siblings.append((level[i - 1], LEFT))
        elif i + 1 < size:
            siblings.append((level[i + 1], RIGHT))
        i //= 2
        size = (size + 1) // 2
    return MerkleProof(index, len(elements), tuple(siblings))


def mk_verify(proof: MerkleProof, element: bytes, root: bytes) -> bool:
    if not isinstance(proof, MerkleProof) or not 0 <= proof.index < proof.size:
        return False
    expected = _path(proof.index, proof.size)
    if len(expected) != len(proof.siblings):
        return False
    acc = leaf_hash(element)
    for (_, side), (sib, claimed) in zip(expected, proof.siblings):
        if claimed != side or len(sib) != DIGEST_SIZE:
            return False
        acc = node_hash(sib, acc) if side == LEFT else node_hash(acc, sib)
    return acc == root
