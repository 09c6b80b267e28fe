"""Block headers and blocks."""

from __future__ import annotations

from dataclasses import dataclass

from . import codec
from .crypto import ZERO_DIGEST, digest
from .merkle import mk_root
from .vm import Receipt, Transaction


@dataclass(frozen=True)
class Header:
    id: int
    txs_root: bytes
    rcp_root: bytes
    st_root: bytes

    def to_list(self) -> list:
        return ["HDR", self.id, self.txs_root, self.rcp_root, self.st_root]

    def encode(self) -> bytes:
        return codec.encode(self.to_list())

    @classmethod
    def from_list(cls, value) -> "Header":
        tag, id_, txs_root, rcp_root, st_root = value
        if tag != "HDR":
            raise ValueError("not a header")
        return cls(id_, txs_root, rcp_root, st_root)

    @classmethod
    def decode(cls, data: bytes) -> "Header":
        return cls.from_list(codec.decode(data))

    def hash(self) -> bytes:
        return digest(self.encode())


EMPTY_HEADER = Header(0, ZERO_DIGEST, ZERO_DIGEST, ZERO_DIGEST)
# History-tree leaf used by proof templates before the real header is known.
PLACEHOLDER = EMPTY_HEADER.hash()


@dataclass(frozen=True)
class Block:
    hdr: Header
    txs: tuple[Transaction, ...]
    rcps: tuple[Receipt, ...]

    def encode(self) -> bytes:
        return codec.encode(
            ["BLK", self.hdr.to_list(), [t.encode() for t in self.txs], [r.encode() for r in self.rcps]]
        )

    @classmethod
    def decode(cls, data: bytes) -> "Block":
        tag, hdr, txs, rcps = codec.decode(data)
        if tag != "BLK":
            raise ValueError("not a block")
        return cls(
            Header.from_list(hdr),
            tuple(Transaction.decode(t) for t in txs),
            tuple(Receipt.decode(r) for r in rcps),
        )

    def tx_leaves(self) -> list[bytes]:
        return [t.encode() for t in self.txs]

    def rcp_leaves(self) -> list[bytes]:
        return [r.encode() for r in self.rcps]

    def is_consistent(self) -> bool:
        """Roots recomputed from the body match the header."""
        return (
            len(self.txs) == len(self.rcps)
            and mk_root(self.tx_leaves()) == self.hdr.txs_root
            and mk_root(self.rcp_leaves()) == self.hdr.rcp_root
            and all(r.tx_hash == t.hash() for t, r in zip(self.txs, self.rcps))
        )

    def find_tx(self, tx_hash: bytes) -> int | None:
        for i, t in enumerate(self.txs):
            if t.hash() == tx_hash:
                return i
        return None
