"""Deterministic end-to-end scenario used by the demo, tests and simulations.

Builds a four-party cast (sequencer-operator, worker, two analysis
providers, project manager) and a transaction script that exercises every
transaction type: registrations, grant, appointment, data-index upload,
two report updates, manager assignment, anonymous share, revoke, and a
post-revoke update attempt that must be rejected.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import crypto
from .chain import Block, BootstrapIdentity, ChainConfig, create_genesis, seal_block
from .contracts import WorldState, apply_transaction, report_id_for
from .crypto import KeyPair, generate_keypair, hash_canonical
from .transactions import (
    ROLE_MANAGER,
    ROLE_PROVIDER,
    ROLE_WORKER,
    TX_APPOINT,
    TX_ASSIGN_MANAGER,
    TX_GRANT,
    TX_REPORT,
    TX_REVOKE,
    TX_SHARE,
    TX_UPLOAD,
    build_tx,
)

GENESIS_TIME_MS = 1_700_000_000_000


def seeded_keypair(label: str) -> KeyPair:
    return generate_keypair(crypto.sha256(b"neuroledger.demo." + label.encode("utf-8")))


@dataclass(frozen=True)
class Cast:
    operator: KeyPair
    worker: KeyPair
    provider: KeyPair
    provider2: KeyPair
    manager: KeyPair

    @classmethod
    def default(cls) -> "Cast":
        return cls(
            operator=seeded_keypair("operator"),
            worker=seeded_keypair("worker"),
            provider=seeded_keypair("provider"),
            provider2=seeded_keypair("provider2"),
            manager=seeded_keypair("manager"),
        )


def chain_config(cast: Cast, block_interval_ms: int = 1000) -> ChainConfig:
    return ChainConfig(
        chain_id="neuroledger-demo",
        sequencer=cast.operator.address,
        sequencer_public_key=cast.operator.public_key.hex(),
        block_interval_ms=block_interval_ms,
    )


def profile_hash(name: str) -> str:
    return hash_canonical({"name": name}).hex()


def register_payload(keypair: KeyPair, role: str, name: str) -> dict:
    return {
        "role": role,
        "public_key": keypair.public_key.hex(),
        "exchange_public": keypair.exchange_public.hex(),
        "profile_hash": profile_hash(name),
    }


def fixture_ciphertext(label: str, size: int = 2048) -> bytes:
    """Deterministic stand-in for encrypted sensor data."""
    out = b""
    counter = 0
    while len(out) < size:
        out += crypto.sha256(f"{label}:{counter}".encode())
        counter += 1
    return out[:size]


def wrapped_keys_for(sym_key: bytes, recipients: list[KeyPair]) -> dict:
    return {
        kp.address: crypto.wrap_key(sym_key, kp.address, kp.exchange_public).to_record()
        for kp in recipients
    }


@dataclass
class Scenario:
    cast: Cast
    config: ChainConfig
    batches: list  # list of tx batches; one sealed block per batch
    report_id: str
    data_key: str
    report_key_1: str
    report_key_2: str
    sym_key: bytes
    report_plaintext_1: bytes
    report_plaintext_2: bytes
    data_plaintext: bytes
    rejected_tx: dict  # post-revoke update that every node must refuse


def build_scenario(block_interval_ms: int = 1000) -> Scenario:
    """Transaction script covering all transaction types in 12 batches."""
    cast = Cast.default()
    config = chain_config(cast, block_interval_ms)

    slot = GENESIS_TIME_MS + 86_400_000
    data_plaintext = fixture_ciphertext("worker-eeg-plaintext", 4096)
    sym_key = crypto.sha256(b"neuroledger.demo.report-key")
    data_blob = crypto.encrypt_payload(
        crypto.sha256(b"neuroledger.demo.data-key"), data_plaintext
    )
    data_key = crypto.sha256(data_blob).hex()

    report_plaintext_1 = canonical_fixture_report(cast, version=1)
    report_plaintext_2 = canonical_fixture_report(cast, version=2)
    report_blob_1 = crypto.encrypt_payload(sym_key, report_plaintext_1)
    report_blob_2 = crypto.encrypt_payload(sym_key, report_plaintext_2)
    report_key_1 = crypto.sha256(report_blob_1).hex()
    report_key_2 = crypto.sha256(report_blob_2).hex()

    w, p, p2, m = cast.worker, cast.provider, cast.provider2, cast.manager

    grant = build_tx(w, TX_GRANT, 1, {"grantee": p.address})
    appoint = build_tx(w, TX_APPOINT, 2, {"provider": p.address, "slot": slot})
    report_id = report_id_for(w.address, p.address, slot, 2)

    upload = build_tx(
        w, TX_UPLOAD, 3, {"storage_key": data_key, "content_hash": data_key, "meta": "session 1 epochs"}
    )
    report1 = build_tx(
        p,
        TX_REPORT,
        1,
        {
            "report_id": report_id,
            "content_hash": report_key_1,
            "storage_key": report_key_1,
            "wrapped_keys": wrapped_keys_for(sym_key, [w]),
            "updated_at": slot + 3_600_000,
        },
    )
    assign = build_tx(w, TX_ASSIGN_MANAGER, 4, {"manager": m.address})
    report2 = build_tx(
        p,
        TX_REPORT,
        2,
        {
            "report_id": report_id,
            "content_hash": report_key_2,
            "storage_key": report_key_2,
            "wrapped_keys": wrapped_keys_for(sym_key, [w, m]),
            "updated_at": slot + 7_200_000,
        },
    )
    share = build_tx(w, TX_SHARE, 5, {"storage_key": data_key})
    revoke = build_tx(w, TX_REVOKE, 6, {"grantee": p.address})
    rejected = build_tx(
        p,
        TX_REPORT,
        3,
        {
            "report_id": report_id,
            "content_hash": report_key_2,
            "storage_key": report_key_2,
            "wrapped_keys": wrapped_keys_for(sym_key, [w, m]),
            "updated_at": slot + 10_800_000,
        },
    )

    batches = [
        [build_tx(w, "Register", 0, register_payload(w, ROLE_WORKER, "worker w1"))],
        [build_tx(p, "Register", 0, register_payload(p, ROLE_PROVIDER, "provider p1"))],
        [build_tx(p2, "Register", 0, register_payload(p2, ROLE_PROVIDER, "provider p2"))],
        [build_tx(m, "Register", 0, register_payload(m, ROLE_MANAGER, "manager m1"))],
        [grant],
        [appoint],
        [upload],
        [report1],
        [assign],
        [report2],
        [share],
        [revoke],
    ]
    return Scenario(
        cast=cast,
        config=config,
        batches=batches,
        report_id=report_id,
        data_key=data_key,
        report_key_1=report_key_1,
        report_key_2=report_key_2,
        sym_key=sym_key,
        report_plaintext_1=report_plaintext_1,
        report_plaintext_2=report_plaintext_2,
        data_plaintext=data_plaintext,
        rejected_tx=rejected,
    )


def canonical_fixture_report(cast: Cast, version: int) -> bytes:
    from .canonical import canonical_bytes

    return canonical_bytes(
        {
            "worker": cast.worker.address,
            "verdict": "attention within normal range" if version == 1 else "elevated fatigue markers",
            "version": version,
            "grid": [[50, 62], [58, 71]],
        }
    )


def build_chain(n_blocks: int = 20, block_interval_ms: int = 1000) -> tuple[ChainConfig, list[Block], Scenario]:
    """Sealed chain of exactly n_blocks (genesis included) for sync tests."""
    scenario = build_scenario(block_interval_ms)
    cast = scenario.cast
    config = scenario.config

    genesis = create_genesis(
        config,
        [BootstrapIdentity(cast.operator, ROLE_MANAGER, profile_hash("operator"))],
        GENESIS_TIME_MS,
    )
    blocks = [genesis]
    state = WorldState()
    state, outcome = _apply_all(state, genesis.txs, genesis.timestamp)

    batches = list(scenario.batches)
    # filler traffic: re-grant after the revoke, then appointments
    w, p = cast.worker, cast.provider
    next_nonce = 7
    slot_base = GENESIS_TIME_MS + 200_000_000
    while len(batches) < n_blocks - 1:
        if next_nonce == 7:
            batches.append([build_tx(w, TX_GRANT, next_nonce, {"grantee": p.address})])
        else:
            batches.append(
                [build_tx(w, TX_APPOINT, next_nonce, {"provider": p.address, "slot": slot_base + next_nonce})]
            )
        next_nonce += 1

    for i, batch in enumerate(batches[: n_blocks - 1]):
        block, state = seal_block(
            blocks[-1],
            state,
            batch,
            cast.operator,
            GENESIS_TIME_MS + (i + 1) * block_interval_ms,
            config,
        )
        blocks.append(block)
    return config, blocks, scenario


def _apply_all(state: WorldState, txs, block_time: int):
    outcome = None
    for tx in txs:
        state, outcome = apply_transaction(state, tx, block_time)
        if not outcome.accepted:
            raise RuntimeError(f"scenario tx rejected: {outcome.reason}")
    return state, outcome
