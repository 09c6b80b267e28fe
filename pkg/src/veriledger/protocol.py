"""Messages signed by the enclave and checked by the contract and clients.

Everything that crosses a trust boundary is signed over a canonical encoding
with a leading domain tag, so a signature for one purpose never verifies for
another.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

from . import codec
from .crypto import KeyPair, digest, sign, verify
from .history import Commitment

# Resolution statuses of censorship requests.
PENDING = "PENDING"
INCLUDED = "INCLUDED"
PARSING_ERROR = "PARSING_ERROR"
SIGNATURE_ERROR = "SIGNATURE_ERROR"
OK = "OK"
TX_NOT_FOUND = "TX_NOT_FOUND"
BLK_NOT_FOUND = "BLK_NOT_FOUND"
NOT_FOUND = "NOT_FOUND"
TX_STATUSES = (INCLUDED, PARSING_ERROR, SIGNATURE_ERROR)
QRY_STATUSES = (OK, TX_NOT_FOUND, BLK_NOT_FOUND, NOT_FOUND, PARSING_ERROR)

READ_TX = "READ_TX"
READ_AS = "READ_AS"


def lroot_message(root_a: Commitment, root_b: Commitment) -> bytes:
    return codec.encode(["LROOT", root_a.to_tuple(), root_b.to_tuple()])


def cens_tx_message(etx_hash: bytes, status: str) -> bytes:
    return codec.encode(["CENS_TX", etx_hash, status])


def cens_qry_message(equery_hash: bytes, status: str, edata_hash: bytes) -> bytes:
    return codec.encode(["CENS_QRY", equery_hash, status, edata_hash])


def hash_opt(data: Optional[bytes]) -> bytes:
    """Digest of an optional blob; absent data hashes like the empty string."""
    return digest(data or b"")


@dataclass(frozen=True)
class AccessTicket:
    client: bytes
    expiry: int
    signature: bytes = b""

    def message(self) -> bytes:
        return codec.encode(["TICKET", self.client, self.expiry])

    def verify(self, enclave_pb: bytes) -> bool:
        return verify(enclave_pb, self.message(), self.signature)

    def to_list(self) -> list:
        return [self.client, self.expiry, self.signature]

    @classmethod
    def from_list(cls, value) -> "AccessTicket":
        client, expiry, signature = value
        return cls(client, expiry, signature)


def issue_ticket(key: KeyPair, client: bytes, expiry: int) -> AccessTicket:
    t = AccessTicket(client, expiry)
    return AccessTicket(client, expiry, sign(key, t.message()))


@dataclass(frozen=True)
class ReadTx:
    id_tx: bytes
    id_blk: int
    reply_to: bytes
    type = READ_TX

    def encode(self) -> bytes:
        return codec.encode(["QRY", READ_TX, self.id_tx, self.id_blk, self.reply_to])


@dataclass(frozen=True)
class ReadAs:
    id_as: bytes
    reply_to: bytes
    type = READ_AS

    def encode(self) -> bytes:
        return codec.encode(["QRY", READ_AS, self.id_as, self.reply_to])


Query = Union[ReadTx, ReadAs]


class QueryParseError(ValueError):
    pass


def decode_query(data: bytes) -> Query:
    try:
        fields = codec.decode(data)
    except codec.DecodeError as exc:
        raise QueryParseError(str(exc)) from exc
    if not isinstance(fields, list) or len(fields) < 2 or fields[0] != "QRY":
        raise QueryParseError("not a query")
    kind = fields[1]
    if kind == READ_TX and len(fields) == 5:
        _, _, id_tx, id_blk, reply = fields
        if isinstance(id_tx, bytes) and isinstance(id_blk, int) and isinstance(reply, bytes):
            return ReadTx(id_tx, id_blk, reply)
    if kind == READ_AS and len(fields) == 4:
        _, _, id_as, reply = fields
        if isinstance(id_as, bytes) and len(id_as) == 32 and isinstance(reply, bytes):
            return ReadAs(id_as, reply)
    raise QueryParseError(f"unknown or malformed query {kind!r}")
