"""Primitive crypto operations used by the protocol.

Thin wrappers over the pyca cryptography primitives so the rest of the
package deals only in byte strings, plus a deterministic random source that
makes whole simulated runs reproducible from a seed.
"""

from __future__ import annotations

import hashlib
import random

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from cryptography.hazmat.primitives import hashes

from .errors import AuthFailure

#: Encoded Curve25519 base point (u = 9).
BASE_POINT = b"\x09" + b"\x00" * 31

GROUP_KEY_INFO = b"mpenc group key"
GROUP_KEY_LEN = 16


class Rng:
    """Deterministic byte source seeded from an arbitrary string.

    All protocol randomness (DH contributions, nonces, ephemeral keys, IVs,
    parent-pointer strings) is drawn through one of these so that a seeded
    simulation is fully reproducible.
    """

    def __init__(self, seed: str):
        self._rand = random.Random(seed)

    def bytes(self, n: int) -> bytes:
        return self._rand.randbytes(n)


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


# ---------------------------------------------------------------------------
# x25519 group operations


def dh_scalar(rng: Rng) -> bytes:
    """Draw a fresh 32-byte private DH contribution."""
    return rng.bytes(32)


def dh_apply(scalar: bytes, point: bytes) -> bytes:
    """Multiply an encoded curve point by a private scalar.

    Contributions must always be applied one at a time: the scalar is
    clamped on use, so pre-multiplying two contributions into one scalar
    computes a different (wrong) point.
    """
    sk = X25519PrivateKey.from_private_bytes(scalar)
    return sk.exchange(X25519PublicKey.from_public_bytes(point))


def dh_base(scalar: bytes) -> bytes:
    """Multiply the base point by a private scalar."""
    return X25519PrivateKey.from_private_bytes(scalar).public_key().public_bytes_raw()


def derive_group_key(group_secret: bytes) -> bytes:
    """Derive the 128-bit symmetric group key from a DH group secret."""
    kdf = HKDF(
        algorithm=hashes.SHA256(),
        length=GROUP_KEY_LEN,
        salt=None,
        info=GROUP_KEY_INFO,
    )
    return kdf.derive(group_secret)


# ---------------------------------------------------------------------------
# ed25519 signatures


def sign_key_generate(rng: Rng) -> bytes:
    """Draw a fresh ed25519 signing seed."""
    return rng.bytes(32)


def sign_public(signing_seed: bytes) -> bytes:
    sk = Ed25519PrivateKey.from_private_bytes(signing_seed)
    return sk.public_key().public_bytes_raw()


def sign(signing_seed: bytes, data: bytes) -> bytes:
    return Ed25519PrivateKey.from_private_bytes(signing_seed).sign(data)


def verify(public: bytes, signature: bytes, data: bytes) -> None:
    """Raise AuthFailure unless `signature` is valid for `data`."""
    try:
        Ed25519PublicKey.from_public_bytes(public).verify(signature, data)
    except Exception as exc:  # includes InvalidSignature and bad key encodings
        raise AuthFailure("signature verification failed") from exc


def verify_ok(public: bytes, signature: bytes, data: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public).verify(signature, data)
        return True
    except (InvalidSignature, ValueError):
        return False


# ---------------------------------------------------------------------------
# AES-128-CTR

IV_LEN = 16


def ctr_encrypt(key: bytes, iv: bytes, plaintext: bytes) -> bytes:
    enc = Cipher(algorithms.AES(key), modes.CTR(iv)).encryptor()
    return enc.update(plaintext) + enc.finalize()


def ctr_decrypt(key: bytes, iv: bytes, ciphertext: bytes) -> bytes:
    # CTR mode is symmetric.
    return ctr_encrypt(key, iv, ciphertext)
