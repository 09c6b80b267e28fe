"""Hashing, signatures and public-key encryption.

Two signature schemes are in play and must never be mixed up:

* ``pb``  -- ECDSA over secp256k1 with 65-byte recoverable signatures
  (``r || s || recid``).  Used for everything the public chain verifies.
* ``tee`` -- Ed25519.  Used only for attestation-side identity.

Public keys carry their scheme implicitly: 33 bytes (compressed secp256k1)
for ``pb``, 32 bytes for ``tee``.

Encryption is ECIES over secp256k1: ephemeral ECDH, HKDF-SHA256, AES-256-GCM.
"""

from __future__ import annotations

import hashlib
import os
import random
from dataclasses import dataclass, field
from typing import Callable

import coincurve
from coincurve import ecdsa as _ecdsa
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

DIGEST_SIZE = 32
ZERO_DIGEST = bytes(DIGEST_SIZE)

PB = "pb"
TEE = "tee"

PB_PUBLIC_SIZE = 33
TEE_PUBLIC_SIZE = 32
PB_SIGNATURE_SIZE = 65
TEE_SIGNATURE_SIZE = 64

_EPHEMERAL_SIZE = 33
_NONCE_SIZE = 12
_TAG_SIZE = 16
_ECIES_INFO = b"veriledger/ecies/v1"

# Entropy source: n -> n random bytes.  Seeded simulations pass their own.
Entropy = Callable[[int], bytes]


class CryptoError(Exception):
    pass


class DecryptionError(CryptoError):
    """Ciphertext failed authentication or is structurally malformed."""


def digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


@dataclass(frozen=True)
class KeyPair:
    scheme: str
    secret: bytes = field(repr=False)
    public: bytes

    def __post_init__(self) -> None:
        if self.scheme not in (PB, TEE):
            raise ValueError(f"unknown scheme {self.scheme!r}")


def _pb_secret(entropy: Entropy) -> bytes:
    order = int("FFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEBAAEDCE6AF48A03BBFD25E8CD0364141", 16)
    while True:
        raw = entropy(32)
        if len(raw) != 32:
            raise CryptoError("entropy source returned short read")
        if 0 < int.from_bytes(raw, "big") < order:
            return raw


def keygen(scheme: str, entropy: Entropy = os.urandom) -> KeyPair:
    if scheme == PB:
        secret = _pb_secret(entropy)
        public = coincurve.PrivateKey(secret).public_key.format(compressed=True)
        return KeyPair(PB, secret, public)
    if scheme == TEE:
        secret = entropy(32)
        if len(secret) != 32:
            raise CryptoError("entropy source returned short read")
        public = (
            Ed25519PrivateKey.from_private_bytes(secret)
            .public_key()
            .public_bytes(Encoding.Raw, PublicFormat.Raw)
        )
        return KeyPair(TEE, secret, public)
    raise ValueError(f"unknown scheme {scheme!r}")


def sign(key: KeyPair, message: bytes) -> bytes:
    if key.scheme == PB:
        # RFC 6979 nonces: deterministic for a given (key, message).
        return coincurve.PrivateKey(key.secret).sign_recoverable(message)
    return Ed25519PrivateKey.from_private_bytes(key.secret).sign(message)


def verify(public: bytes, message: bytes, signature: bytes) -> bool:
    """Check ``signature`` over ``message``; never raises on bad input."""
    try:
        if len(public) == PB_PUBLIC_SIZE:
            if len(signature) != PB_SIGNATURE_SIZE:
                return False
            compact = _ecdsa.recoverable_convert(
                _ecdsa.deserialize_recoverable(signature)
            )
            der = _ecdsa.cdata_to_der(compact)
            return coincurve.PublicKey(public).verify(der, message)
        if len(public) == TEE_PUBLIC_SIZE:
            if len(signature) != TEE_SIGNATURE_SIZE:
                return False
            Ed25519PublicKey.from_public_bytes(public).verify(signature, message)
            return True
    except Exception:
        return False
    return False


def recover(message: bytes, signature: bytes) -> bytes:
    """Recover the compressed ``pb`` public key that produced ``signature``."""
    try:
        key = coincurve.PublicKey.from_signature_and_message(signature, message)
    except Exception as exc:
        raise CryptoError("signature is not recoverable") from exc
    return key.format(compressed=True)


@dataclass(frozen=True)
class Ciphertext:
    ephemeral: bytes
    nonce: bytes
    payload: bytes
    tag: bytes

    def to_bytes(self) -> bytes:
        return self.ephemeral + self.nonce + self.tag + self.payload

    @classmethod
    def from_bytes(cls, data: bytes) -> "Ciphertext":
        head = _EPHEMERAL_SIZE + _NONCE_SIZE + _TAG_SIZE
        if len(data) < head:
            raise DecryptionError("ciphertext too short")
        return cls(
            ephemeral=data[:_EPHEMERAL_SIZE],
            nonce=data[_EPHEMERAL_SIZE : _EPHEMERAL_SIZE + _NONCE_SIZE],
            tag=data[_EPHEMERAL_SIZE + _NONCE_SIZE : head],
            payload=data[head:],
        )


def _ecies_key(shared: bytes, ephemeral: bytes, recipient: bytes) -> bytes:
    return HKDF(
        algorithm=hashes.SHA256(),
        length=32,
        salt=ephemeral + recipient,
        info=_ECIES_INFO,
    ).derive(shared)


def encrypt(public: bytes, plaintext: bytes, entropy: Entropy = os.urandom) -> Ciphertext:
    if len(public) != PB_PUBLIC_SIZE:
        raise CryptoError("encryption requires a pb public key")
    eph = coincurve.PrivateKey(_pb_secret(entropy))
    eph_pub = eph.public_key.format(compressed=True)
    key = _ecies_key(eph.ecdh(public), eph_pub, public)
    nonce = entropy(_NONCE_SIZE)
    sealed = AESGCM(key).encrypt(nonce, plaintext, eph_pub)
    return Ciphertext(eph_pub, nonce, sealed[:-_TAG_SIZE], sealed[-_TAG_SIZE:])


def decrypt(key: KeyPair, ciphertext: Ciphertext | bytes) -> bytes:
    if key.scheme != PB:
        raise CryptoError("decryption requires a pb key pair")
    if isinstance(ciphertext, (bytes, bytearray)):
        ciphertext = Ciphertext.from_bytes(bytes(ciphertext))
    try:
        shared = coincurve.PrivateKey(key.secret).ecdh(ciphertext.ephemeral)
    except Exception as exc:
        raise DecryptionError("invalid ephemeral key") from exc
    sym = _ecies_key(shared, ciphertext.ephemeral, key.public)
    try:
        return AESGCM(sym).decrypt(
            ciphertext.nonce, ciphertext.payload + ciphertext.tag, ciphertext.ephemeral
        )
    except (InvalidTag, ValueError) as exc:
        raise DecryptionError("authentication failed") from exc


def seeded_entropy(seed: int | str | bytes) -> Entropy:
    """Deterministic entropy for reproducible simulations. Not for real keys."""
    rng = random.Random(seed if not isinstance(seed, bytes) else seed.hex())
    return rng.randbytes
