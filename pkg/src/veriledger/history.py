"""Append-only history tree with incremental and membership proofs.

Leaves sit at level 0; node ``(level, index)`` covers leaves
``[index << level, (index + 1) << level)``.  At version ``v`` (the number of
leaves appended so far) a node is *frozen* once it covers no position at or
beyond ``v``; its hash never changes after that.  A node whose right half is
still empty hashes to its left child (promotion), so the root of version
``v`` is the node ``(ceil(log2 v), 0)``.

Proofs are pruned trees: a map from node coordinates to digests.  A verifier
rebuilds the root of a version top-down, taking a supplied digest only for
nodes that are frozen at that version, contain none of the leaves being
proven and do not straddle a version boundary named by the proof.  Anything
else is rebuilt from its children, so the supplied digests can't stand in for
the parts of the tree the proof is about.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .crypto import DIGEST_SIZE, ZERO_DIGEST, digest
from .merkle import leaf_hash, node_hash

Coord = tuple[int, int]

# Root of the empty history: version 0.
GENESIS_ROOT = ZERO_DIGEST


class HistoryError(Exception):
    pass


class UnknownCommitment(HistoryError):
    pass


class MissingNode(HistoryError):
    pass


@dataclass(frozen=True, order=True)
class Commitment:
    version: int
    root: bytes

    def to_tuple(self) -> list:
        return [self.version, self.root]

    @classmethod
    def from_tuple(cls, value) -> "Commitment":
        version, root = value
        if not isinstance(version, int) or version < 0 or not isinstance(root, bytes):
            raise ValueError("malformed commitment")
        return cls(version, root)

    def __repr__(self) -> str:
        return f"Commitment(v={self.version}, {self.root.hex()[:12]})"


GENESIS = Commitment(0, GENESIS_ROOT)


def _top(version: int) -> int:
    return (version - 1).bit_length()


def _span(level: int, index: int) -> tuple[int, int]:
    return index << level, (index + 1) << level


def _usable(level: int, index: int, version: int, cuts: Iterable[int], opens: Iterable[int]) -> bool:
    start, end = _span(level, index)
    if end > version:
        return False
    if any(start < c < end for c in cuts):
        return False
    if level > 0 and any(start <= o < end for o in opens):
        return False
    return True


def _rebuild(
    nodes: Mapping[Coord, bytes],
    version: int,
    cuts: tuple[int, ...] = (),
    opens: tuple[int, ...] = (),
) -> bytes:
    if version == 0:
        return GENESIS_ROOT

    def walk(level: int, index: int) -> bytes:
        if _usable(level, index, version, cuts, opens):
            found = nodes.get((level, index))
            if found is not None:
                return found
        if level == 0:
            raise MissingNode(f"leaf {index} missing from proof")
        left = walk(level - 1, 2 * index)
        if ((2 * index + 1) << (level - 1)) >= version:
            return left
        return node_hash(left, walk(level - 1, 2 * index + 1))

    return walk(_top(version), 0)


def _encode_nodes(header: bytes, nodes: Mapping[Coord, bytes]) -> bytes:
    parts = [header, struct.pack(">I", len(nodes))]
    for (level, index) in sorted(nodes):
        parts.append(struct.pack(">HQ", level, index) + nodes[(level, index)])
    return b"".join(parts)


def _decode_nodes(data: bytes, offset: int) -> dict[Coord, bytes]:
    if len(data) < offset + 4:
        raise ValueError("proof truncated")
    (count,) = struct.unpack_from(">I", data, offset)
    pos = offset + 4
    entry = 10 + DIGEST_SIZE
    if len(data) != pos + count * entry:
        raise ValueError("proof length mismatch")
    nodes = {}
    for _ in range(count):
        level, index = struct.unpack_from(">HQ", data, pos)
        nodes[(level, index)] = data[pos + 10 : pos + entry]
        pos += entry
    return nodes


@dataclass
class IncrementalProof:
    old_version: int
    new_version: int
    nodes: dict[Coord, bytes] = field(default_factory=dict)

    def _opens(self) -> tuple[int, ...]:
        # The newest leaf is always spelled out so it can be swapped.
        return (self.new_version - 1,) if self.new_version > self.old_version else ()

    def derive_old_root(self) -> bytes:
        return _rebuild(self.nodes, self.old_version, cuts=(self.old_version,), opens=self._opens())

    def derive_new_root(self) -> bytes:
        return _rebuild(self.nodes, self.new_version, cuts=(self.old_version,), opens=self._opens())

    def verify(self, old: Commitment, new: Commitment) -> bool:
        if (old.version, new.version) != (self.old_version, self.new_version):
            return False
        if self.old_version > self.new_version:
            return False
        try:
            return self.derive_old_root() == old.root and self.derive_new_root() == new.root
        except MissingNode:
            return False

    @property
    def last_slot(self) -> Coord:
        return (0, self.new_version - 1)

    def with_last_leaf(self, record: bytes) -> "IncrementalProof":
        """Copy of this proof with the newest leaf replaced by ``record``."""
        if self.new_version == 0:
            raise HistoryError("proof has no leaf slot")
        nodes = dict(self.nodes)
        nodes[self.last_slot] = leaf_hash(record)
        return IncrementalProof(self.old_version, self.new_version, nodes)

    def size(self) -> int:
        return len(self.nodes)

    def to_bytes(self) -> bytes:
        return _encode_nodes(struct.pack(">QQ", self.old_version, self.new_version), self.nodes)

    @classmethod
    def from_bytes(cls, data: bytes) -> "IncrementalProof":
        if len(data) < 16:
            raise ValueError("proof truncated")
        old, new = struct.unpack_from(">QQ", data)
        return cls(old, new, _decode_nodes(data, 16))


@dataclass
class MembershipProof:
    index: int
    version: int
    nodes: dict[Coord, bytes] = field(default_factory=dict)

    def verify(self, index: int, record: bytes, commitment: Commitment) -> bool:
        if index != self.index or commitment.version != self.version:
            return False
        if not 0 <= index < self.version:
            return False
        if self.nodes.get((0, index)) != leaf_hash(record):
            return False
        try:
            return _rebuild(self.nodes, self.version, opens=(index,)) == commitment.root
        except MissingNode:
            return False

    def size(self) -> int:
        return len(self.nodes)

    def to_bytes(self) -> bytes:
        return _encode_nodes(struct.pack(">QQ", self.index, self.version), self.nodes)

    @classmethod
    def from_bytes(cls, data: bytes) -> "MembershipProof":
        if len(data) < 16:
            raise ValueError("proof truncated")
        index, version = struct.unpack_from(">QQ", data)
        return cls(index, version, _decode_nodes(data, 16))


class HistoryTree:
    """Append-only log of digests (here: block-header hashes)."""

    def __init__(self, records: Iterable[bytes] = ()):
        self._leaves: list[bytes] = []
        self._frozen: dict[Coord, bytes] = {}
        for r in records:
            self.add(r)

    def __len__(self) -> int:
        return len(self._leaves)

    @property
    def version(self) -> int:
        return len(self._leaves)

    def record(self, index: int) -> bytes:
        return self._leaves[index]

    def add(self, record: bytes) -> Commitment:
        if len(record) != DIGEST_SIZE:
            raise ValueError("history records are 32-byte digests")
        index = len(self._leaves)
        self._leaves.append(record)
        self._frozen[(0, index)] = leaf_hash(record)
        level, i = 0, index
        while i % 2 == 1:
            left = self._frozen[(level, i - 1)]
            right = self._frozen[(level, i)]
            level, i = level + 1, i // 2
            self._frozen[(level, i)] = node_hash(left, right)
        return self.commitment()

    def truncate(self, version: int) -> None:
        """Drop every leaf at position ``>= version``."""
        if not 0 <= version <= len(self._leaves):
            raise HistoryError(f"cannot truncate to version {version}")
        del self._leaves[version:]
        for coord in [c for c in self._frozen if _span(*c)[1] > version]:
            del self._frozen[coord]

    def node(self, level: int, index: int, version: int) -> bytes:
        """Hash of a node as seen at ``version`` (node must intersect it)."""
        start, end = _span(level, index)
        if start >= version:
            raise HistoryError("node is empty at this version")
        if end <= version:
            return self._frozen[(level, index)]
        left = self.node(level - 1, 2 * index, version)
        if ((2 * index + 1) << (level - 1)) >= version:
            return left
        return node_hash(left, self.node(level - 1, 2 * index + 1, version))

    def root(self, version: int | None = None) -> bytes:
        v = len(self._leaves) if version is None else version
        if not 0 <= v <= len(self._leaves):
            raise UnknownCommitment(f"version {v} not in tree of {len(self._leaves)}")
        if v == 0:
            return GENESIS_ROOT
        return self.node(_top(v), 0, v)

    def commitment(self, version: int | None = None) -> Commitment:
        v = len(self._leaves) if version is None else version
        return Commitment(v, self.root(v))

    def _check(self, c: Commitment) -> None:
        if not 0 <= c.version <= len(self._leaves) or self.root(c.version) != c.root:
            raise UnknownCommitment(f"{c!r} is not a commitment of this tree")

    def _prune(self, version: int, cuts: tuple[int, ...], opens: tuple[int, ...]) -> dict[Coord, bytes]:
        out: dict[Coord, bytes] = {}
        if version == 0:
            return out

        def walk(level: int, index: int) -> None:
            if _usable(level, index, version, cuts, opens) or level == 0:
                out[(level, index)] = self.node(level, index, version)
                return
            walk(level - 1, 2 * index)
            if ((2 * index + 1) << (level - 1)) < version:
                walk(level - 1, 2 * index + 1)

        walk(_top(version), 0)
        return out

    def inc_proof(self, old: Commitment, new: Commitment) -> IncrementalProof:
        if old.version > new.version:
            raise HistoryError("incremental proof requires old.version <= new.version")
        self._check(old)
        self._check(new)
        opens = (new.version - 1,) if new.version > old.version else ()
        nodes = self._prune(new.version, (old.version,), opens)
        return IncrementalProof(old.version, new.version, nodes)

    def mem_proof(self, index: int, commitment: Commitment) -> MembershipProof:
        self._check(commitment)
        if not 0 <= index < commitment.version:
            raise HistoryError(f"index {index} not below version {commitment.version}")
        return MembershipProof(index, commitment.version, self._prune(commitment.version, (), (index,)))

    def proof_template(self, placeholder: bytes) -> tuple[IncrementalProof, Commitment]:
        """Incremental proof from the current version to one with ``placeholder``
        appended.  The tree is left exactly as it was."""
        current = self.commitment()
        tmp = self.add(placeholder)
        try:
            proof = self.inc_proof(current, tmp)
        finally:
            self.truncate(current.version)
        return proof, tmp
