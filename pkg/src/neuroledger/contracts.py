"""Access-contract state machine.

World state tracks registered identities (workers, analysis providers,
project managers), one access contract per worker (grantees, appointments,
report record history, data index, token balance), manager links and
anonymously shared data. Every transition is a pure function: it returns
a new state built by copying only the containers on the mutated path, so
callers may keep old snapshots.

Permission rules: raw data is readable by its owner, by currently granted
providers, or by anyone registered once shared publicly; a report is
readable by the contract owner, by authors of its records, and by the
owner's assigned manager.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Optional

from . import crypto, transactions as tx_mod
from .crypto import hash_canonical
from .transactions import (
    ROLE_MANAGER,
    ROLE_PROVIDER,
    ROLE_WORKER,
    ROLES,
    TX_APPOINT,
    TX_ASSIGN_MANAGER,
    TX_GRANT,
    TX_REGISTER,
    TX_REPORT,
    TX_REVOKE,
    TX_SHARE,
    TX_UPLOAD,
)

REPORT_ID_LEN = 16
META_MAX_CHARS = 256


@dataclass(frozen=True)
class WorldState:
    """Immutable snapshot of the full contract state."""

    identities: dict = field(default_factory=dict)
    contracts: dict = field(default_factory=dict)
    manager_of: dict = field(default_factory=dict)
    nonces: dict = field(default_factory=dict)
    public_data: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        return {
            "identities": self.identities,
            "contracts": self.contracts,
            "manager_of": self.manager_of,
            "nonces": self.nonces,
            "public_data": self.public_data,
        }

    @classmethod
    def from_record(cls, record: dict) -> "WorldState":
        return cls(
            identities=record["identities"],
            contracts=record["contracts"],
            manager_of=record["manager_of"],
            nonces=record["nonces"],
            public_data=record["public_data"],
        )

    def state_root(self) -> str:
        return hash_canonical(self.to_record()).hex()


@dataclass(frozen=True)
class TxOutcome:
    accepted: bool
    reason: Optional[str] = None
    info: dict = field(default_factory=dict)

    @classmethod
    def ok(cls, **info: Any) -> "TxOutcome":
        return cls(accepted=True, info=info)

    @classmethod
    def reject(cls, reason: str) -> "TxOutcome":
        return cls(accepted=False, reason=reason)


def contract_address_for(owner: str) -> str:
    return "0x" + hash_canonical(["contract", owner])[: crypto.ADDRESS_LEN].hex()


def report_id_for(owner: str, provider: str, slot: int, nonce: int) -> str:
    return hash_canonical([owner, provider, slot, nonce])[:REPORT_ID_LEN].hex()


def appointment_id_for(owner: str, provider: str, slot: int, nonce: int) -> str:
    return hash_canonical(["appointment", owner, provider, slot, nonce])[:REPORT_ID_LEN].hex()


def record_id_for(report_id: str, author: str, content_hash: str, updated_at: int) -> str:
    return hash_canonical([report_id, author, content_hash, updated_at])[:REPORT_ID_LEN].hex()


def _is_hex(value: Any, nbytes: int) -> bool:
    if not isinstance(value, str) or len(value) != 2 * nbytes:
        return False
    try:
        bytes.fromhex(value)
    except ValueError:
        return False
    return value == value.lower()


def _find_report_owner(state: WorldState, report_id: str) -> Optional[str]:
    for contract in state.contracts.values():
        if report_id in contract["reports"]:
            return contract["owner"]
    return None


# -- individual transitions ---------------------------------------------------


def apply_register(
    state: WorldState,
    sender: str,
    role: str,
    public_key: str,
    exchange_public: str,
    profile_hash: str,
) -> tuple[WorldState, TxOutcome]:
    if role not in ROLES:
        return state, TxOutcome.reject("unknown-role")
    if not (_is_hex(public_key, 32) and _is_hex(exchange_public, 32) and _is_hex(profile_hash, 32)):
        return state, TxOutcome.reject("bad-key-material")
    if sender in state.identities:
        return state, TxOutcome.reject("already-registered")
    if crypto.derive_address(bytes.fromhex(public_key)) != sender:
        return state, TxOutcome.reject("identity-forgery")

    identity = {
        "address": sender,
        "role": role,
        "public_key": public_key,
        "exchange_public": exchange_public,
        "profile_hash": profile_hash,
    }
    identities = dict(state.identities)
    contracts = state.contracts
    info: dict = {}
    if role == ROLE_WORKER:
        caddr = contract_address_for(sender)
        identity["contract_address"] = caddr
        contracts = dict(contracts)
        contracts[caddr] = {
            "owner": sender,
            "grantees": {},
            "appointments": {},
            "reports": {},
            "data_index": [],
            "token_balance": 0,
        }
        info["contract_address"] = caddr
    identities[sender] = identity
    return replace(state, identities=identities, contracts=contracts), TxOutcome.ok(**info)


def _worker_contract(state: WorldState, owner: str) -> Optional[tuple[str, dict]]:
    identity = state.identities.get(owner)
    if identity is None or identity["role"] != ROLE_WORKER:
        return None
    caddr = identity["contract_address"]
    return caddr, state.contracts[caddr]


def apply_grant(
    state: WorldState, owner: str, grantee: str, granted_at: int
) -> tuple[WorldState, TxOutcome]:
    found = _worker_contract(state, owner)
    if found is None:
        return state, TxOutcome.reject("role-error")
    grantee_identity = state.identities.get(grantee)
    if grantee_identity is None:
        return state, TxOutcome.reject("unknown-identity")
    if grantee_identity["role"] != ROLE_PROVIDER:
        return state, TxOutcome.reject("role-error")
    caddr, contract = found
    grantees = dict(contract["grantees"])
    grantees[grantee] = granted_at
    contracts = dict(state.contracts)
    contracts[caddr] = {**contract, "grantees": grantees}
    return replace(state, contracts=contracts), TxOutcome.ok()


def apply_revoke(state: WorldState, owner: str, grantee: str) -> tuple[WorldState, TxOutcome]:
    found = _worker_contract(state, owner)
    if found is None:
        return state, TxOutcome.reject("role-error")
    caddr, contract = found
    if grantee not in contract["grantees"]:
        # revoking an absent grant is a recorded no-op, not a failure
        return state, TxOutcome.ok(noop=True)
    grantees = dict(contract["grantees"])
    del grantees[grantee]
    contracts = dict(state.contracts)
    contracts[caddr] = {**contract, "grantees": grantees}
    return replace(state, contracts=contracts), TxOutcome.ok()


def apply_appointment(
    state: WorldState, owner: str, provider: str, slot: int, tx_nonce: int
) -> tuple[WorldState, TxOutcome]:
    found = _worker_contract(state, owner)
    if found is None:
        return state, TxOutcome.reject("role-error")
    caddr, contract = found
    if provider not in contract["grantees"]:
        return state, TxOutcome.reject("unauthorized")
    if not isinstance(slot, int) or isinstance(slot, bool) or slot < 0:
        return state, TxOutcome.reject("bad-slot")

    report_id = report_id_for(owner, provider, slot, tx_nonce)
    appt_id = appointment_id_for(owner, provider, slot, tx_nonce)
    if appt_id in contract["appointments"] or report_id in contract["reports"]:
        return state, TxOutcome.reject("duplicate-appointment")

    appointments = dict(contract["appointments"])
    appointments[appt_id] = {
        "id": appt_id,
        "provider": provider,
        "slot": slot,
        "report_id": report_id,
    }
    reports = dict(contract["reports"])
    reports[report_id] = []
    contracts = dict(state.contracts)
    contracts[caddr] = {**contract, "appointments": appointments, "reports": reports}
    return replace(state, contracts=contracts), TxOutcome.ok(report_id=report_id, appointment_id=appt_id)


def apply_upload_data_index(
    state: WorldState,
    owner: str,
    storage_key: str,
    content_hash: str,
    meta: str,
    uploaded_at: int,
) -> tuple[WorldState, TxOutcome]:
    found = _worker_contract(state, owner)
    if found is None:
        return state, TxOutcome.reject("role-error")
    if not _is_hex(storage_key, 32) or not _is_hex(content_hash, 32):
        return state, TxOutcome.reject("bad-storage-key")
    if storage_key != content_hash:
        return state, TxOutcome.reject("integrity-error")
    if not isinstance(meta, str) or len(meta) > META_MAX_CHARS:
        return state, TxOutcome.reject("bad-meta")
    caddr, contract = found
    entry = {
        "storage_key": storage_key,
        "content_hash": content_hash,
        "uploaded_at": uploaded_at,
        "meta": meta,
    }
    contracts = dict(state.contracts)
    contracts[caddr] = {**contract, "data_index": contract["data_index"] + [entry]}
    return replace(state, contracts=contracts), TxOutcome.ok(storage_key=storage_key)


def apply_update_report(
    state: WorldState,
    author: str,
    report_id: str,
    content_hash: str,
    storage_key: str,
    wrapped_keys: dict,
    updated_at: int,
) -> tuple[WorldState, TxOutcome]:
    author_identity = state.identities.get(author)
    if author_identity is None:
        return state, TxOutcome.reject("unknown-identity")
    if not _is_hex(report_id, REPORT_ID_LEN):
        return state, TxOutcome.reject("bad-report-id")
    if not _is_hex(storage_key, 32) or not _is_hex(content_hash, 32):
        return state, TxOutcome.reject("bad-storage-key")
    if storage_key != content_hash:
        return state, TxOutcome.reject("integrity-error")
    if not isinstance(updated_at, int) or isinstance(updated_at, bool) or updated_at < 0:
        return state, TxOutcome.reject("bad-timestamp")

    owner = _find_report_owner(state, report_id)
    if owner is None:
        return state, TxOutcome.reject("not-found")
    caddr = state.identities[owner]["contract_address"]
    contract = state.contracts[caddr]
    if author not in contract["grantees"]:
        return state, TxOutcome.reject("unauthorized")

    if not isinstance(wrapped_keys, dict) or owner not in wrapped_keys:
        return state, TxOutcome.reject("key-coverage")
    manager = state.manager_of.get(owner)
    if manager is not None and manager not in wrapped_keys:
        return state, TxOutcome.reject("key-coverage")
    for recipient, envelope in wrapped_keys.items():
        if recipient not in state.identities:
            return state, TxOutcome.reject("unknown-recipient")
        try:
            crypto.SealedEnvelope.from_record(envelope)
        except crypto.MalformedInputError:
            return state, TxOutcome.reject("bad-wrapped-key")

    record_id = record_id_for(report_id, author, content_hash, updated_at)
    record = {
        "record_id": record_id,
        "report_id": report_id,
        "author": author,
        "content_hash": content_hash,
        "storage_key": storage_key,
        "wrapped_keys": wrapped_keys,
        "updated_at": updated_at,
    }
    reports = dict(contract["reports"])
    reports[report_id] = reports[report_id] + [record]
    contracts = dict(state.contracts)
    contracts[caddr] = {**contract, "reports": reports}
    return replace(state, contracts=contracts), TxOutcome.ok(record_id=record_id)


def apply_assign_manager(
    state: WorldState, worker: str, manager: str
) -> tuple[WorldState, TxOutcome]:
    worker_identity = state.identities.get(worker)
    if worker_identity is None or worker_identity["role"] != ROLE_WORKER:
        return state, TxOutcome.reject("role-error")
    manager_identity = state.identities.get(manager)
    if manager_identity is None:
        return state, TxOutcome.reject("unknown-identity")
    if manager_identity["role"] != ROLE_MANAGER:
        return state, TxOutcome.reject("role-error")
    manager_of = dict(state.manager_of)
    manager_of[worker] = manager
    return replace(state, manager_of=manager_of), TxOutcome.ok()


def apply_share_anonymous(
    state: WorldState, owner: str, storage_key: str, shared_at: int
) -> tuple[WorldState, TxOutcome]:
    found = _worker_contract(state, owner)
    if found is None:
        return state, TxOutcome.reject("role-error")
    _, contract = found
    if not any(entry["storage_key"] == storage_key for entry in contract["data_index"]):
        indexed_elsewhere = any(
            any(entry["storage_key"] == storage_key for entry in other["data_index"])
            for other in state.contracts.values()
        )
        return state, TxOutcome.reject("unauthorized" if indexed_elsewhere else "not-found")
    if storage_key in state.public_data:
        return state, TxOutcome.reject("already-public")
    caddr = state.identities[owner]["contract_address"]
    contracts = dict(state.contracts)
    contracts[caddr] = {**contract, "token_balance": contract["token_balance"] + 1}
    public_data = dict(state.public_data)
    public_data[storage_key] = {"owner": owner, "shared_at": shared_at}
    return replace(state, contracts=contracts, public_data=public_data), TxOutcome.ok(
        token_balance=contracts[caddr]["token_balance"]
    )


# -- transaction dispatch ------------------------------------------------------


def sender_public_key(state: WorldState, tx: dict) -> Optional[bytes]:
    """Key a transaction must verify against, or None if unresolvable."""
    if tx.get("tx_type") == TX_REGISTER:
        return tx_mod.register_public_key(tx)
    identity = state.identities.get(tx.get("sender"))
    if identity is None:
        return None
    return bytes.fromhex(identity["public_key"])


def apply_transaction(state: WorldState, tx: dict, block_time: int) -> tuple[WorldState, TxOutcome]:
    """Validate and apply one signed transaction; rejection leaves state untouched."""
    shape_error = tx_mod.check_shape(tx)
    if shape_error is not None:
        return state, TxOutcome.reject(shape_error)

    public_key = sender_public_key(state, tx)
    if public_key is None:
        reason = "identity-forgery" if tx["tx_type"] == TX_REGISTER else "unknown-sender"
        return state, TxOutcome.reject(reason)
    if not tx_mod.verify_signature(tx, public_key):
        return state, TxOutcome.reject("bad-signature")

    sender = tx["sender"]
    nonce = tx["nonce"]
    if nonce <= state.nonces.get(sender, -1):
        return state, TxOutcome.reject("stale-nonce")

    payload = tx["payload"]
    try:
        new_state, outcome = _dispatch(state, tx["tx_type"], sender, nonce, payload, block_time)
    except (KeyError, TypeError):
        return state, TxOutcome.reject("bad-payload")
    if not outcome.accepted:
        return state, outcome

    nonces = dict(new_state.nonces)
    nonces[sender] = nonce
    return replace(new_state, nonces=nonces), outcome


def _dispatch(
    state: WorldState, tx_type: str, sender: str, nonce: int, payload: dict, block_time: int
) -> tuple[WorldState, TxOutcome]:
    if tx_type == TX_REGISTER:
        return apply_register(
            state,
            sender,
            payload["role"],
            payload["public_key"],
            payload["exchange_public"],
            payload["profile_hash"],
        )
    if tx_type == TX_GRANT:
        return apply_grant(state, sender, payload["grantee"], block_time)
    if tx_type == TX_REVOKE:
        return apply_revoke(state, sender, payload["grantee"])
    if tx_type == TX_APPOINT:
        return apply_appointment(state, sender, payload["provider"], payload["slot"], nonce)
    if tx_type == TX_UPLOAD:
        return apply_upload_data_index(
            state, sender, payload["storage_key"], payload["content_hash"], payload["meta"], block_time
        )
    if tx_type == TX_REPORT:
        return apply_update_report(
            state,
            sender,
            payload["report_id"],
            payload["content_hash"],
            payload["storage_key"],
            payload["wrapped_keys"],
            payload["updated_at"],
        )
    if tx_type == TX_ASSIGN_MANAGER:
        return apply_assign_manager(state, sender, payload["manager"])
    if tx_type == TX_SHARE:
        return apply_share_anonymous(state, sender, payload["storage_key"], block_time)
    return state, TxOutcome.reject("unknown-tx-type")


# -- permission checks ---------------------------------------------------------


@dataclass(frozen=True)
class DataResource:
    owner: str
    storage_key: str


@dataclass(frozen=True)
class ReportResource:
    report_id: str


@dataclass(frozen=True)
class Decision:
    allowed: bool
    reason: Optional[str] = None

    def __bool__(self) -> bool:
        return self.allowed


ALLOW = Decision(True)


def check_permission(
    state: WorldState, requester: str, resource: DataResource | ReportResource
) -> Decision:
    """Pure read-side access decision for one requester and one resource."""
    if requester not in state.identities:
        return Decision(False, "unknown-identity")

    if isinstance(resource, DataResource):
        found = _worker_contract(state, resource.owner)
        if found is None:
            return Decision(False, "unknown-owner")
        _, contract = found
        if not any(e["storage_key"] == resource.storage_key for e in contract["data_index"]):
            return Decision(False, "unknown-data")
        if requester == resource.owner:
            return ALLOW
        if requester in contract["grantees"]:
            return ALLOW
        if resource.storage_key in state.public_data:
            return ALLOW
        return Decision(False, "no-grant")

    if isinstance(resource, ReportResource):
        owner = _find_report_owner(state, resource.report_id)
        if owner is None:
            return Decision(False, "unknown-report")
        caddr = state.identities[owner]["contract_address"]
        records = state.contracts[caddr]["reports"][resource.report_id]
        if requester == owner:
            return ALLOW
        if any(record["author"] == requester for record in records):
            return ALLOW
        if state.manager_of.get(owner) == requester:
            return ALLOW
        return Decision(False, "no-grant")

    raise TypeError(f"unknown resource type {type(resource).__name__}")
