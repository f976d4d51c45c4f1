"""Signed transaction records.

A transaction is a plain record so it hashes and travels canonically:

    {"tx_type": ..., "sender": "0x..", "nonce": n, "payload": {...},
     "signature": <hex128>}

The signature is Ed25519 over hash_canonical of the record without the
signature field. Registration is self-certifying: the payload carries the
public keys and the sender address must equal derive_address(public_key).
"""

from __future__ import annotations

from typing import Any

from . import crypto
from .crypto import KeyPair, hash_canonical

TX_REGISTER = "Register"
TX_GRANT = "GrantAccess"
TX_REVOKE = "RevokeAccess"
TX_APPOINT = "CreateAppointment"
TX_UPLOAD = "UploadDataIndex"
TX_REPORT = "UpdateReport"
TX_ASSIGN_MANAGER = "AssignManager"
TX_SHARE = "ShareAnonymous"

TX_TYPES = (
    TX_REGISTER,
    TX_GRANT,
    TX_REVOKE,
    TX_APPOINT,
    TX_UPLOAD,
    TX_REPORT,
    TX_ASSIGN_MANAGER,
    TX_SHARE,
)

ROLE_WORKER = "Worker"
ROLE_PROVIDER = "BciProvider"
ROLE_MANAGER = "ProjectManager"
ROLES = (ROLE_WORKER, ROLE_PROVIDER, ROLE_MANAGER)


class TransactionError(ValueError):
    """Transaction record is structurally invalid."""


def signing_digest(tx: dict) -> bytes:
    body = {k: tx[k] for k in ("tx_type", "sender", "nonce", "payload")}
    return hash_canonical(body)


def tx_digest(tx: dict) -> str:
    """Digest over the full signed record; used for pool dedupe and audit."""
    return hash_canonical(tx).hex()


def build_tx(keypair: KeyPair, tx_type: str, nonce: int, payload: dict) -> dict:
    if tx_type not in TX_TYPES:
        raise TransactionError(f"unknown tx type {tx_type!r}")
    tx = {
        "tx_type": tx_type,
        "sender": keypair.address,
        "nonce": int(nonce),
        "payload": payload,
    }
    tx["signature"] = crypto.sign(keypair.seed, signing_digest(tx)).hex()
    return tx


def build_register(keypair: KeyPair, role: str, profile_hash: bytes | str, nonce: int = 0) -> dict:
    if isinstance(profile_hash, bytes):
        profile_hash = profile_hash.hex()
    payload = {
        "role": role,
        "public_key": keypair.public_key.hex(),
        "exchange_public": keypair.exchange_public.hex(),
        "profile_hash": profile_hash,
    }
    return build_tx(keypair, TX_REGISTER, nonce, payload)


def check_shape(tx: Any) -> str | None:
    """Structural validation only; returns a reason or None if well-formed."""
    if not isinstance(tx, dict):
        return "not-a-record"
    for field in ("tx_type", "sender", "nonce", "payload", "signature"):
        if field not in tx:
            return f"missing-{field}"
    if tx["tx_type"] not in TX_TYPES:
        return "unknown-tx-type"
    if not crypto.is_address(tx["sender"]):
        return "bad-sender-address"
    if not isinstance(tx["nonce"], int) or isinstance(tx["nonce"], bool) or tx["nonce"] < 0:
        return "bad-nonce"
    if not isinstance(tx["payload"], dict):
        return "bad-payload"
    sig = tx["signature"]
    if not isinstance(sig, str) or len(sig) != 2 * crypto.SIGNATURE_LEN:
        return "bad-signature-shape"
    try:
        bytes.fromhex(sig)
    except ValueError:
        return "bad-signature-shape"
    return None


def verify_signature(tx: dict, public_key: bytes) -> bool:
    try:
        signature = bytes.fromhex(tx["signature"])
    except (KeyError, TypeError, ValueError):
        return False
    return crypto.verify(public_key, signing_digest(tx), signature)


def register_public_key(tx: dict) -> bytes | None:
    """Public key a Register tx is certified by, if consistent with sender."""
    try:
        key = bytes.fromhex(tx["payload"]["public_key"])
    except (KeyError, TypeError, ValueError):
        return None
    if len(key) != 32 or crypto.derive_address(key) != tx["sender"]:
        return None
    return key
