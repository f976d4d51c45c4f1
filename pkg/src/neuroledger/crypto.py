"""Keys, addresses, hashing, signatures and hybrid encryption envelopes.

Algorithm suite, fixed so every component (node, CLI, external clients)
interoperates byte-for-byte:

  digests     SHA-256
  signatures  Ed25519 over a 32-byte digest
  agreement   X25519, exchange secret = SHA-256("neuroledger.exchange.v1" || seed)
  cipher      XChaCha20-Poly1305 (24-byte nonce, 16-byte tag)
  envelope    ephemeral X25519 key, symmetric key =
              SHA-256(shared || ephemeral_public || recipient_public)

XChaCha20 is assembled from the library ChaCha20 core via the standard
HChaCha20 subkey derivation; the construction is pinned to the published
test vectors in the test suite.

Addresses are the first 20 bytes of SHA-256(signing public key), rendered
as 0x-prefixed lowercase hex.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import Any

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .canonical import canonical_bytes

import hashlib

SEED_LEN = 32
DIGEST_LEN = 32
SIGNATURE_LEN = 64
NONCE_LEN = 24
TAG_LEN = 16
SYM_KEY_LEN = 32
ADDRESS_LEN = 20

_EXCHANGE_DERIVE_TAG = b"neuroledger.exchange.v1"


class CryptoError(Exception):
    """Base error for key and cipher operations."""


class MalformedInputError(CryptoError):
    """Input bytes have the wrong shape (length, hex, structure)."""


class AuthenticationError(CryptoError):
    """Ciphertext failed authentication: wrong key or tampered bytes."""


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def hash_canonical(value: Any) -> bytes:
    """SHA-256 digest of raw bytes, or of a record's canonical encoding."""
    if isinstance(value, (bytes, bytearray)):
        return sha256(bytes(value))
    return sha256(canonical_bytes(value))


def derive_address(public_key: bytes) -> str:
    if len(public_key) != 32:
        raise MalformedInputError("public key must be 32 bytes")
    return "0x" + sha256(public_key)[:ADDRESS_LEN].hex()


def is_address(value: Any) -> bool:
    if not isinstance(value, str) or len(value) != 2 + 2 * ADDRESS_LEN:
        return False
    if not value.startswith("0x"):
        return False
    body = value[2:]
    return body == body.lower() and all(c in "0123456789abcdef" for c in body)


@dataclass(frozen=True)
class KeyPair:
    """Signing and key-agreement keys derived from one 32-byte seed.

    The seed never appears in any ledger artifact; only the two public
    keys are published via registration.
    """

    seed: bytes
    public_key: bytes
    exchange_public: bytes

    @property
    def address(self) -> str:
        return derive_address(self.public_key)


def _exchange_private(seed: bytes) -> X25519PrivateKey:
    raw = sha256(_EXCHANGE_DERIVE_TAG + seed)
    return X25519PrivateKey.from_private_bytes(raw)


def generate_keypair(seed: bytes) -> KeyPair:
    """Deterministically derive the full keypair from a 32-byte seed."""
    if not isinstance(seed, (bytes, bytearray)) or len(seed) != SEED_LEN:
        raise MalformedInputError("seed must be exactly 32 bytes")
    seed = bytes(seed)
    signing = Ed25519PrivateKey.from_private_bytes(seed)
    public = signing.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    exchange_pub = (
        _exchange_private(seed).public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    )
    return KeyPair(seed=seed, public_key=public, exchange_public=exchange_pub)


def sign(seed: bytes, digest: bytes) -> bytes:
    """Ed25519 signature over a 32-byte digest."""
    if len(digest) != DIGEST_LEN:
        raise MalformedInputError("sign expects a 32-byte digest")
    if len(seed) != SEED_LEN:
        raise MalformedInputError("seed must be exactly 32 bytes")
    return Ed25519PrivateKey.from_private_bytes(bytes(seed)).sign(bytes(digest))


def verify(public_key: bytes, digest: bytes, signature: bytes) -> bool:
    """True iff the signature is valid; malformed inputs return False."""
    try:
        Ed25519PublicKey.from_public_bytes(bytes(public_key)).verify(
            bytes(signature), bytes(digest)
        )
        return True
    except Exception:
        return False


# -- XChaCha20-Poly1305 ------------------------------------------------------

_CHACHA_CONSTS = (0x61707865, 0x3320646E, 0x79622D32, 0x6B206574)


def _hchacha20(key: bytes, block16: bytes) -> bytes:
    """Derive the XChaCha20 subkey from key and the first 16 nonce bytes.

    The ChaCha20 keystream block equals permuted_state + initial_state
    word-wise; subtracting the known initial state recovers the raw
    permutation output that HChaCha20 is defined over.
    """
    initial = _CHACHA_CONSTS + struct.unpack("<8I", key) + struct.unpack("<4I", block16)
    enc = Cipher(algorithms.ChaCha20(key, block16), mode=None).encryptor()
    block = enc.update(b"\x00" * 64)
    words = struct.unpack("<16I", block)
    z = [(w - i) & 0xFFFFFFFF for w, i in zip(words, initial)]
    return struct.pack("<8I", *(z[0:4] + z[12:16]))


def xchacha20poly1305_encrypt(key: bytes, nonce: bytes, plaintext: bytes, aad: bytes = b"") -> bytes:
    if len(key) != SYM_KEY_LEN:
        raise MalformedInputError("cipher key must be 32 bytes")
    if len(nonce) != NONCE_LEN:
        raise MalformedInputError("nonce must be 24 bytes")
    subkey = _hchacha20(bytes(key), bytes(nonce[:16]))
    return ChaCha20Poly1305(subkey).encrypt(b"\x00" * 4 + bytes(nonce[16:]), plaintext, aad)


def xchacha20poly1305_decrypt(key: bytes, nonce: bytes, ciphertext: bytes, aad: bytes = b"") -> bytes:
    if len(key) != SYM_KEY_LEN:
        raise MalformedInputError("cipher key must be 32 bytes")
    if len(nonce) != NONCE_LEN:
        raise MalformedInputError("nonce must be 24 bytes")
    if len(ciphertext) < TAG_LEN:
        raise MalformedInputError("ciphertext shorter than the authentication tag")
    subkey = _hchacha20(bytes(key), bytes(nonce[:16]))
    try:
        return ChaCha20Poly1305(subkey).decrypt(b"\x00" * 4 + bytes(nonce[16:]), ciphertext, aad)
    except InvalidTag as exc:
        raise AuthenticationError("payload failed authentication") from exc


# -- sealed envelopes --------------------------------------------------------


@dataclass(frozen=True)
class SealedEnvelope:
    """Hybrid-encrypted payload addressed to one exchange public key."""

    ephemeral_public: bytes
    nonce: bytes
    ciphertext: bytes

    def to_record(self) -> dict:
        return {
            "ephemeral_public": self.ephemeral_public.hex(),
            "nonce": self.nonce.hex(),
            "ciphertext": self.ciphertext.hex(),
        }

    @classmethod
    def from_record(cls, record: dict) -> "SealedEnvelope":
        try:
            env = cls(
                ephemeral_public=bytes.fromhex(record["ephemeral_public"]),
                nonce=bytes.fromhex(record["nonce"]),
                ciphertext=bytes.fromhex(record["ciphertext"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedInputError(f"bad envelope record: {exc}") from exc
        if len(env.ephemeral_public) != 32 or len(env.nonce) != NONCE_LEN:
            raise MalformedInputError("bad envelope field lengths")
        if len(env.ciphertext) < TAG_LEN:
            raise MalformedInputError("envelope ciphertext shorter than tag")
        return env


def _envelope_key(shared: bytes, ephemeral_public: bytes, recipient_public: bytes) -> bytes:
    return sha256(shared + ephemeral_public + recipient_public)


def seal(recipient_exchange_public: bytes, plaintext: bytes) -> SealedEnvelope:
    """Encrypt to a recipient with a fresh ephemeral key and nonce."""
    if len(recipient_exchange_public) != 32:
        raise MalformedInputError("recipient exchange key must be 32 bytes")
    recipient = X25519PublicKey.from_public_bytes(bytes(recipient_exchange_public))
    ephemeral = X25519PrivateKey.generate()
    ephemeral_public = ephemeral.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    shared = ephemeral.exchange(recipient)
    key = _envelope_key(shared, ephemeral_public, bytes(recipient_exchange_public))
    nonce = os.urandom(NONCE_LEN)
    ciphertext = xchacha20poly1305_encrypt(key, nonce, plaintext)
    return SealedEnvelope(ephemeral_public=ephemeral_public, nonce=nonce, ciphertext=ciphertext)


def open_envelope(seed: bytes, envelope: SealedEnvelope) -> bytes:
    """Decrypt an envelope with the recipient's seed; authenticated."""
    if len(seed) != SEED_LEN:
        raise MalformedInputError("seed must be exactly 32 bytes")
    secret = _exchange_private(bytes(seed))
    my_public = secret.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    try:
        ephemeral = X25519PublicKey.from_public_bytes(envelope.ephemeral_public)
    except Exception as exc:
        raise MalformedInputError("bad ephemeral public key") from exc
    shared = secret.exchange(ephemeral)
    key = _envelope_key(shared, envelope.ephemeral_public, my_public)
    return xchacha20poly1305_decrypt(key, envelope.nonce, envelope.ciphertext)


# -- symmetric content keys --------------------------------------------------


@dataclass(frozen=True)
class WrappedKey:
    """A 32-byte content key sealed to one recipient."""

    recipient: str
    envelope: SealedEnvelope

    def to_record(self) -> dict:
        return self.envelope.to_record()


def new_symmetric_key() -> bytes:
    return os.urandom(SYM_KEY_LEN)


def wrap_key(sym_key: bytes, recipient: str, recipient_exchange_public: bytes) -> WrappedKey:
    if len(sym_key) != SYM_KEY_LEN:
        raise MalformedInputError("symmetric key must be 32 bytes")
    return WrappedKey(recipient=recipient, envelope=seal(recipient_exchange_public, sym_key))


def unwrap_key(seed: bytes, wrapped: WrappedKey | SealedEnvelope) -> bytes:
    envelope = wrapped.envelope if isinstance(wrapped, WrappedKey) else wrapped
    key = open_envelope(seed, envelope)
    if len(key) != SYM_KEY_LEN:
        raise AuthenticationError("unwrapped value is not a 32-byte key")
    return key


def encrypt_payload(sym_key: bytes, data: bytes) -> bytes:
    """nonce || ciphertext under the shared content key."""
    nonce = os.urandom(NONCE_LEN)
    return nonce + xchacha20poly1305_encrypt(sym_key, nonce, data)


def decrypt_payload(sym_key: bytes, blob: bytes) -> bytes:
    if len(blob) < NONCE_LEN + TAG_LEN:
        raise MalformedInputError("payload too short")
    return xchacha20poly1305_decrypt(sym_key, blob[:NONCE_LEN], blob[NONCE_LEN:])


def keypair_to_keyfile(keypair: KeyPair) -> str:
    """Key file format: hex seed line, then the derived address line."""
    return f"{keypair.seed.hex()}\n{keypair.address}\n"


def keypair_from_keyfile(text: str) -> KeyPair:
    lines = [line.strip() for line in text.splitlines() if line.strip()]
    if not lines:
        raise MalformedInputError("empty key file")
    try:
        seed = bytes.fromhex(lines[0])
    except ValueError as exc:
        raise MalformedInputError("key file seed is not hex") from exc
    pair = generate_keypair(seed)
    if len(lines) > 1 and lines[1] != pair.address:
        raise MalformedInputError("key file address does not match seed")
    return pair
