"""Client-side implementation of the ledger wire contract.

Independent of the node's codebase on purpose: the pipeline talks to the
ledger only through its documented formats. Canonical encoding is JSON
with code-point-sorted keys, no insignificant whitespace, UTF-8, bytes as
lowercase hex, ints only. The crypto suite is SHA-256 / Ed25519 / X25519 /
XChaCha20-Poly1305 with:

    exchange secret   sha256("neuroledger.exchange.v1" || seed)
    envelope key      sha256(shared || ephemeral_pub || recipient_pub)
    envelope record   {"ephemeral_public","nonce","ciphertext"} hex
    content payload   nonce24 || xchacha_ciphertext
    tx signature      Ed25519 over sha256(canonical({tx_type,sender,nonce,payload}))
    read signature    Ed25519 over sha256(canonical([requester,path,issued_at]))
    address           "0x" + sha256(signing_public_key)[:20] hex
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass
from typing import Any

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

_EXCHANGE_TAG = b"neuroledger.exchange.v1"


class WireError(Exception):
    pass


def canonical_bytes(value: Any) -> bytes:
    def norm(v):
        if isinstance(v, bool) or v is None:
            return v
        if isinstance(v, (bytes, bytearray)):
            return bytes(v).hex()
        if isinstance(v, int):
            return v
        if isinstance(v, float):
            raise WireError("floats are not canonical")
        if isinstance(v, str):
            return v
        if isinstance(v, dict):
            return {k: norm(item) for k, item in v.items()}
        if isinstance(v, (list, tuple)):
            return [norm(item) for item in v]
        raise WireError(f"unsupported type {type(v).__name__}")

    return json.dumps(
        norm(value), sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False
    ).encode("utf-8")


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def hash_canonical(value: Any) -> bytes:
    if isinstance(value, (bytes, bytearray)):
        return sha256(bytes(value))
    return sha256(canonical_bytes(value))


@dataclass(frozen=True)
class ClientKeys:
    seed: bytes
    public_key: bytes
    exchange_public: bytes

    @property
    def address(self) -> str:
        return "0x" + sha256(self.public_key)[:20].hex()


def keys_from_seed(seed: bytes) -> ClientKeys:
    if len(seed) != 32:
        raise WireError("seed must be 32 bytes")
    signing = Ed25519PrivateKey.from_private_bytes(seed)
    public = signing.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    exchange = X25519PrivateKey.from_private_bytes(sha256(_EXCHANGE_TAG + seed))
    exchange_public = exchange.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    return ClientKeys(seed=seed, public_key=public, exchange_public=exchange_public)


def sign_digest(seed: bytes, digest: bytes) -> bytes:
    return Ed25519PrivateKey.from_private_bytes(seed).sign(digest)


def build_tx(keys: ClientKeys, tx_type: str, nonce: int, payload: dict) -> dict:
    tx = {"tx_type": tx_type, "sender": keys.address, "nonce": int(nonce), "payload": payload}
    tx["signature"] = sign_digest(keys.seed, hash_canonical(tx)).hex()
    return tx


def read_header(keys: ClientKeys, path: str, issued_at: int) -> str:
    digest = hash_canonical([keys.address, path, issued_at])
    record = {
        "requester": keys.address,
        "path": path,
        "issued_at": issued_at,
        "signature": sign_digest(keys.seed, digest).hex(),
    }
    return canonical_bytes(record).decode("utf-8")


# -- XChaCha20-Poly1305 over the library ChaCha20 core ------------------------

_CONSTS = (0x61707865, 0x3320646E, 0x79622D32, 0x6B206574)


def _hchacha20(key: bytes, block16: bytes) -> bytes:
    initial = _CONSTS + struct.unpack("<8I", key) + struct.unpack("<4I", block16)
    stream = Cipher(algorithms.ChaCha20(key, block16), mode=None).encryptor().update(b"\x00" * 64)
    words = struct.unpack("<16I", stream)
    z = [(w - i) & 0xFFFFFFFF for w, i in zip(words, initial)]
    return struct.pack("<8I", *(z[0:4] + z[12:16]))


def _aead(key: bytes, nonce24: bytes) -> tuple[ChaCha20Poly1305, bytes]:
    return ChaCha20Poly1305(_hchacha20(key, nonce24[:16])), b"\x00" * 4 + nonce24[16:]


def encrypt_payload(sym_key: bytes, data: bytes) -> bytes:
    nonce = os.urandom(24)
    aead, inner = _aead(sym_key, nonce)
    return nonce + aead.encrypt(inner, data, b"")


def decrypt_payload(sym_key: bytes, blob: bytes) -> bytes:
    if len(blob) < 40:
        raise WireError("payload too short")
    aead, inner = _aead(sym_key, blob[:24])
    try:
        return aead.decrypt(inner, blob[24:], b"")
    except InvalidTag as exc:
        raise WireError("payload failed authentication") from exc


def seal(recipient_exchange_public: bytes, plaintext: bytes) -> dict:
    recipient = X25519PublicKey.from_public_bytes(recipient_exchange_public)
    ephemeral = X25519PrivateKey.generate()
    ephemeral_public = ephemeral.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    key = sha256(ephemeral.exchange(recipient) + ephemeral_public + recipient_exchange_public)
    nonce = os.urandom(24)
    aead, inner = _aead(key, nonce)
    return {
        "ephemeral_public": ephemeral_public.hex(),
        "nonce": nonce.hex(),
        "ciphertext": aead.encrypt(inner, plaintext, b"").hex(),
    }


def open_sealed(seed: bytes, record: dict) -> bytes:
    secret = X25519PrivateKey.from_private_bytes(sha256(_EXCHANGE_TAG + seed))
    my_public = secret.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    ephemeral_public = bytes.fromhex(record["ephemeral_public"])
    shared = secret.exchange(X25519PublicKey.from_public_bytes(ephemeral_public))
    key = sha256(shared + ephemeral_public + my_public)
    aead, inner = _aead(key, bytes.fromhex(record["nonce"]))
    try:
        return aead.decrypt(inner, bytes.fromhex(record["ciphertext"]), b"")
    except InvalidTag as exc:
        raise WireError("envelope failed authentication") from exc


def wrap_key(sym_key: bytes, recipient_exchange_public: bytes) -> dict:
    return seal(recipient_exchange_public, sym_key)
